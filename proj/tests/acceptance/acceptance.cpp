// Acceptance suite: one PASS/FAIL line per criterion. Pass criterion numbers
// as arguments to run a subset; the exit status is nonzero on any failure.

#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"
#include "p2s/config.hpp"
#include "p2s/coregister.hpp"
#include "p2s/error.hpp"
#include "p2s/hydro.hpp"
#include "p2s/log.hpp"
#include "p2s/metrics.hpp"
#include "p2s/model.hpp"
#include "p2s/pipeline.hpp"
#include "p2s/stream_agg.hpp"
#include "p2s/synth.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

using namespace p2s;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

fs::path work_dir() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / "p2s_acceptance";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

// ---- 1. hydrology oracles ---------------------------------------------------------

Outcome hydrology_oracles() {
  int certificate = 0, accumulation = 0, catchments = 0, distance = 0;
  double worst = 0;
  for (unsigned seed = 0; seed < 100; ++seed) {
    const Raster dem = oracle::random_dem(32, 32, 5000 + seed);
    const Raster filled = fill_sinks(dem);
    bool ok = oracle::no_sink_certificate(filled);
    for (int r = 0; r < 32 && ok; ++r)
      for (int c = 0; c < 32 && ok; ++c) ok = oracle::has_descending_path(filled, r, c);
    certificate += ok;

    const Raster fd = flow_direction(filled);
    const Raster acc = flow_accumulation(fd);
    const auto ref_acc = oracle::path_walk_accumulation(fd);
    ok = true;
    for (std::size_t i = 0; i < ref_acc.size(); ++i) ok = ok && acc.data()[i] == static_cast<float>(ref_acc[i]);
    accumulation += ok;

    const ReachNetwork net = delineate_catchments(extract_reaches(acc, fd, 20.0), fd);
    const auto ref_c = oracle::path_walk_catchments(fd, net);
    ok = true;
    for (std::size_t i = 0; i < ref_c.size(); ++i) {
      const float got = net.catchment_raster.data()[i];
      ok = ok && (ref_c[i] == 0 ? got == net.catchment_raster.nodata() : got == static_cast<float>(ref_c[i]));
    }
    catchments += ok;

    std::vector<bool> feature(net.channel_mask.band_size());
    for (std::size_t i = 0; i < feature.size(); ++i) feature[i] = net.channel_mask.data()[i] > 0.5f;
    const auto d2 = squared_distance_transform(feature, 32, 32);
    const auto ref_d = oracle::brute_distance(net.channel_mask);
    double err = 0;
    for (std::size_t i = 0; i < ref_d.size(); ++i)
      err = std::max(err, std::abs(std::sqrt(d2[i]) * dem.pixel_size() - ref_d[i]));
    worst = std::max(worst, err);
    distance += err <= 1e-6;
  }
  return {certificate == 100 && accumulation == 100 && catchments == 100 && distance == 100,
          "certificate " + std::to_string(certificate) + "/100, accumulation " + std::to_string(accumulation) +
              "/100, catchments " + std::to_string(catchments) + "/100, distance " + std::to_string(distance) +
              "/100 (max error " + fmt("%.2e", worst) + " m)"};
}

// ---- 2. Strahler ------------------------------------------------------------------------

ReachNetwork tree_network(const std::map<int, std::optional<int>>& downstream) {
  ReachNetwork net;
  for (auto [id, ds] : downstream) {
    Reach r;
    r.reach_id = id;
    r.downstream_id = ds;
    net.reaches.push_back(r);
  }
  for (const Reach& r : net.reaches)
    if (r.downstream_id) net.reach(*r.downstream_id).upstream_ids.push_back(r.reach_id);
  return net;
}

Outcome strahler_trees() {
  std::map<int, std::optional<int>> binary;
  binary[1] = std::nullopt;
  for (int id = 2; id <= 15; ++id) binary[id] = id / 2;
  const int root_order = strahler_order(tree_network(binary)).reach(1).strahler;

  std::mt19937 g(17);
  int agree = 0, mixed_joins = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 2 + static_cast<int>(g() % 60);
    std::map<int, std::optional<int>> tree;
    std::map<int, std::vector<int>> up;
    tree[1] = std::nullopt;
    for (int id = 2; id <= n; ++id) {
      const int parent = 1 + static_cast<int>(g() % (id - 1));
      tree[id] = parent;
      up[parent].push_back(id);
    }
    const ReachNetwork net = strahler_order(tree_network(tree));
    bool ok = true;
    for (int id = 1; id <= n; ++id) {
      ok = ok && net.reach(id).strahler == oracle::strahler(id, up);
      std::set<int> orders;
      for (int u : up[id]) orders.insert(net.reach(u).strahler);
      mixed_joins += orders.size() > 1;
    }
    agree += ok;
  }
  return {root_order == 4 && agree == 1000, "8-head binary tree root order " + std::to_string(root_order) + "; " +
                                                std::to_string(agree) + "/1000 random trees agree (" +
                                                std::to_string(mixed_joins) + " mixed-order joins)"};
}

// ---- 3. channel threshold ---------------------------------------------------------------

Outcome reach_threshold() {
  const SynthConfig cfg;
  const Raster dem = generate_dem(cfg);
  const HydroProducts h = derive_hydrology(dem, 10000.0);
  long mismatches = 0, channel = 0;
  for (std::size_t i = 0; i < h.accumulation.data().size(); ++i) {
    const bool want = h.accumulation.data()[i] >= 10000.0f;
    const bool got = h.network.channel_mask.data()[i] > 0.5f;
    mismatches += want != got;
    channel += got;
  }
  return {dem.pixel_size() == 1.0 && mismatches == 0 && channel > 0,
          "pixel " + fmt("%g", dem.pixel_size()) + " m, " + std::to_string(channel) + " channel cells, " +
              std::to_string(mismatches) + " mismatches against acc >= 10000 cells"};
}

// ---- 4. registration ------------------------------------------------------------------------

Outcome registration() {
  std::mt19937_64 gen(31);
  std::uniform_int_distribution<int> ishift(-20, 20);
  std::uniform_real_distribution<double> fshift(-20.0, 20.0);
  std::vector<std::pair<int, int>> shifts{{20, 20}, {-20, -20}, {20, -20}, {0, 20}, {-20, 0}, {0, 0}};
  while (shifts.size() < 50) shifts.push_back({ishift(gen), ishift(gen)});
  int exact = 0;
  for (std::size_t k = 0; k < shifts.size(); ++k) {
    const fixture::Texture tex{700u + static_cast<unsigned>(k)};
    const auto [dx, dy] = shifts[k];
    const ShiftEstimate s = estimate_shift(fixture::sample(tex, 128, 0, 0), fixture::sample(tex, 128, dx, dy));
    exact += s.valid && s.col_px == -dx && s.row_px == -dy;
  }

  auto subpixel = [&](double noise, unsigned base) {
    int good = 0;
    for (int trial = 0; trial < 50; ++trial) {
      const fixture::Texture tex{base + static_cast<unsigned>(trial)};
      const double dx = fshift(gen), dy = fshift(gen);
      const ShiftEstimate s =
          estimate_shift(fixture::sample(tex, 128, 0, 0), fixture::sample(tex, 128, dx, dy, noise, base + trial));
      good += s.valid && std::abs(s.col_px + dx) <= 0.1 && std::abs(s.row_px + dy) <= 0.1;
    }
    return good;
  };
  const int clean = subpixel(0.0, 900), noisy = subpixel(0.01, 1900);
  return {exact == static_cast<int>(shifts.size()) && clean >= 48 && noisy >= 40,
          "integer " + std::to_string(exact) + "/" + std::to_string(shifts.size()) + " exact; subpixel within 0.1 px " +
              std::to_string(clean) + "/50 noise-free (need 48), " + std::to_string(noisy) +
              "/50 at 1% noise (need 40)"};
}

// ---- 5. gradient checks ------------------------------------------------------------------------

Outcome gradient_checks() {
  double worst_op = 0;
  std::string worst_name;
  for (const auto& [name, e] : gradcheck::operator_errors()) {
    if (e >= worst_op) {
      worst_op = e;
      worst_name = name;
    }
  }
  const double wn = gradcheck::end_to_end_error<float>(Variant::wassernetz);
  const double un = gradcheck::end_to_end_error<float>(Variant::unet_single);
  return {worst_op < 1e-4 && wn < 1e-3 && un < 1e-3,
          "worst operator " + worst_name + " " + fmt("%.2e", worst_op) + "; end to end in float: wassernetz " +
              fmt("%.2e", wn) + ", unet_single " + fmt("%.2e", un)};
}

// ---- 6. loss semantics ---------------------------------------------------------------------------

Outcome loss_semantics() {
  using nn::Tape;
  using nn::Tensor;
  std::mt19937_64 gen(41);
  std::uniform_real_distribution<float> u(0.02f, 0.98f);

  // unlabelled pixels: zero gradient, and neither their value nor id matters
  long nonzero = 0, changed = 0;
  for (int trial = 0; trial < 20; ++trial) {
    Tensor<float> pred(2, 1, 16, 16), label(2, 1, 16, 16, -1.0f), pid(2, 1, 16, 16);
    for (auto& v : pred.data) v = u(gen);
    for (std::size_t i = 0; i < label.numel(); ++i)
      if (gen() % 3 == 0) {
        label.data[i] = static_cast<float>(gen() % 2);
        pid.data[i] = static_cast<float>(gen() % 5);
      }
    label.data[0] = 1.0f;
    auto run = [&](const Tensor<float>& p, const Tensor<float>& ids) {
      Tape<float> t;
      nn::Var v = t.leaf(p, true);
      nn::Var loss = nn::masked_polygon_bce(t, v, label, ids);
      t.backward(loss);
      return std::make_pair(t.value(loss).data[0], t.grad(v).data);
    };
    const auto base = run(pred, pid);
    Tensor<float> pred2 = pred, pid2 = pid;
    for (std::size_t i = 0; i < label.numel(); ++i)
      if (label.data[i] < 0) {
        nonzero += base.second[i] != 0.0f;
        pred2.data[i] = u(gen);
        pid2.data[i] = 99.0f;
      }
    const auto other = run(pred2, pid2);
    changed += other.first != base.first || other.second != base.second;
  }

  // a 1-pixel and a 100-pixel wet polygon contribute equally
  int unequal = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const float a = u(gen), b = u(gen);
    auto loss = [](float one, float hundred) {
      Tensor<float> pred(1, 1, 1, 101, hundred), label(1, 1, 1, 101, 1.0f), pid(1, 1, 1, 101, 2.0f);
      pred.data[0] = one;
      pid.data[0] = 1.0f;
      Tape<float> t;
      return t.value(nn::masked_polygon_bce(t, t.leaf(pred), label, pid)).data[0];
    };
    unequal += loss(a, b) != loss(b, a);
    unequal += loss(a, a) != -std::log(a);
  }
  return {nonzero == 0 && changed == 0 && unequal == 0,
          std::to_string(nonzero) + " nonzero unlabelled gradients, " + std::to_string(changed) +
              " trials sensitive to unlabelled pixels, " + std::to_string(unequal) +
              " unequal 1-px/100-px contributions in 200 exact comparisons"};
}

// ---- 7 and 8. synthetic benchmark --------------------------------------------------------------------

struct VariantScore {
  double test_pixel = 0;
  double shadow_pixel = 0;
  std::vector<std::optional<double>> bins;
};

struct BenchmarkResult {
  double ndwi_shadow = 0;
  int shadow_polygons = 0;
  std::map<int, VariantScore> wassernetz, unet;  // per training seed
};

const BenchmarkResult& benchmark() {
  static const BenchmarkResult result = [] {
    BenchmarkResult out;
    const PipelineConfig defaults = parse_pipeline(nlohmann::json::object());
    SynthConfig cfg;
    cfg.seed = 2;
    const SynthWatershed w = make_watershed(cfg);
    const SynthDay day = generate_day(w, cfg.label_day);
    const auto polys = sample_polygons(w, day, cfg.n_wet, cfg.n_dry, cfg.shadow_bias, polygon_seed(cfg));
    std::vector<AnnotationPolygon> train_p, test_p, shadow_p;
    for (const auto& p : polys) (p.split == Split::train ? train_p : test_p).push_back(p);
    for (const auto& p : test_p) {
      const Rasterized ras = rasterize_polygons({p}, w.shadow.grid());
      long n = 0, shaded = 0;
      for (std::size_t i = 0; i < ras.label.data().size(); ++i) {
        if (ras.label.is_nodata(ras.label.data()[i])) continue;
        ++n;
        shaded += w.shadow.data()[i] == 1.0f;
      }
      if (n > 0 && shaded == n) shadow_p.push_back(p);
    }
    out.shadow_polygons = static_cast<int>(shadow_p.size());
    if (shadow_p.empty()) throw DataError("no fully shadowed test polygons");

    std::optional<GridSpec> pred_grid;
    for (std::uint64_t seed : {1, 2, 3}) {
      for (Variant v : {Variant::wassernetz, Variant::unet_single}) {
        NetConfig net = defaults.model.net;
        net.seed = seed;
        TrainOptions opts = defaults.train.options;
        opts.seed = seed;
        const Raster* terrain = v == Variant::wassernetz ? &w.terrain : nullptr;
        const auto tiles =
            sample_training_tiles(day.optical, terrain, train_p, net, defaults.train.tiles, seed, split_x(w));
        Model m = build_model(net, v);
        train(m, tiles, opts);
        const Raster pred = predict_scene(m, {&day.optical}, terrain);
        pred_grid = pred.grid();
        VariantScore s;
        s.test_pixel = evaluate(pred, test_p).pixel_accuracy;
        s.shadow_pixel = evaluate(pred, shadow_p).pixel_accuracy;
        for (const auto& b : width_stratified(test_p, pred, {0, 5, 10})) s.bins.push_back(b.accuracy);
        (v == Variant::wassernetz ? out.wassernetz : out.unet)[static_cast<int>(seed)] = s;
        std::printf("  seed %d %-11s test pixel %.4f shadow %.4f bins", static_cast<int>(seed),
                    to_string(v).c_str(), s.test_pixel, s.shadow_pixel);
        for (const auto& b : s.bins) std::printf(" %s", b ? fmt("%.4f", *b).c_str() : "n/a");
        std::printf("\n");
        std::fflush(stdout);
      }
    }
    const Raster index = ndwi(day.optical.select_bands(kGreen, 1), day.optical.select_bands(kNir, 1));
    const Raster ndwi_pred = sample_onto(classify_ndwi(index), *pred_grid);
    out.ndwi_shadow = evaluate(ndwi_pred, shadow_p).pixel_accuracy;
    return out;
  }();
  return result;
}

Outcome synthetic_benchmark() {
  const BenchmarkResult& b = benchmark();
  bool a = true, below = true;
  int narrow_wins = 0;
  std::ostringstream d;
  d << "test pixel accuracy wassernetz";
  for (const auto& [seed, s] : b.wassernetz) {
    d << " " << fmt("%.4f", s.test_pixel);
    a = a && s.test_pixel >= 0.90;
  }
  double best_model_shadow = 1.0;
  for (const auto* m : {&b.wassernetz, &b.unet})
    for (const auto& [seed, s] : *m) {
      below = below && b.ndwi_shadow < s.shadow_pixel;
      best_model_shadow = std::min(best_model_shadow, s.shadow_pixel);
    }
  for (const auto& [seed, s] : b.wassernetz) {
    const auto& o = b.unet.at(seed);
    if (s.bins[0] && o.bins[0] && *s.bins[0] > *o.bins[0]) ++narrow_wins;
  }
  d << " (a " << (a ? "ok" : "fails") << "); shadowed subset (" << b.shadow_polygons << " polygons) NDWI "
    << fmt("%.4f", b.ndwi_shadow) << " vs worst model " << fmt("%.4f", best_model_shadow) << " (b "
    << (below ? "ok" : "fails") << "); width < 5 wassernetz > unet_single in " << narrow_wins << "/3 seeds (c "
    << (narrow_wins >= 2 ? "ok" : "fails") << ")";
  return {a && below && narrow_wins >= 2, d.str()};
}

Outcome width_stratification() {
  const BenchmarkResult& b = benchmark();
  std::vector<double> mean(3, 0.0);
  std::vector<int> n(3, 0);
  for (const auto& [seed, s] : b.unet)
    for (std::size_t k = 0; k < 3; ++k)
      if (s.bins[k]) {
        mean[k] += *s.bins[k];
        ++n[k];
      }
  bool ok = true;
  for (std::size_t k = 0; k < 3; ++k) {
    ok = ok && n[k] == 3;
    if (n[k]) mean[k] /= n[k];
  }
  ok = ok && mean[0] <= mean[1] && mean[1] <= mean[2];
  return {ok, "unet_single mean bin accuracy [0,5) " + fmt("%.4f", mean[0]) + ", [5,10) " + fmt("%.4f", mean[1]) +
                  ", [10,inf) " + fmt("%.4f", mean[2])};
}

// ---- 9 and 11. end to end ------------------------------------------------------------------------------

nlohmann::json end_to_end_config() {
  return nlohmann::json::parse(R"({
    "seed": 1,
    "synth": {"a_min_m2": 20000, "wetness_schedule": [1.0, 0.94, 0.88, 0.82, 0.76, 0.7, 0.64, 0.58, 0.52, 0.46]},
    "model": {"variant": "unet_single"},
    "coregister": {"enabled": true},
    "aggregate": {"lambda_m": 0.5, "d_max_m": 1.0}
  })");
}

const RunManifest& first_run() {
  static const RunManifest m = run_pipeline(parse_pipeline(end_to_end_config()), work_dir() / "run_a");
  return m;
}

std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> rank(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = (i + j) / 2.0 + 1;
    i = j + 1;
  }
  return rank;
}

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  const auto rx = average_ranks(x), ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n, my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

Outcome dynamic_map() {
  const PipelineConfig cfg = parse_pipeline(end_to_end_config());
  first_run();
  const fs::path out = work_dir() / "run_a";
  const HydroProducts h = load_hydro(out / "hydro");
  const ReachNetwork& net = h.network;
  const SynthConfig& sc = *cfg.synth;

  std::vector<std::pair<std::string, std::vector<ReachProbability>>> days;
  std::set<int> perennial, never;
  for (const Reach& r : net.reaches) {
    perennial.insert(r.reach_id);
    never.insert(r.reach_id);
  }
  for (std::size_t t = 0; t < sc.wetness_schedule.size(); ++t) {
    const std::string date = day_date(sc, static_cast<int>(t));
    const Raster truth = read_raster(out / "synth" / ("truth_" + date + ".p2sr"));
    days.emplace_back(date, reach_probability(truth, net, h.distance, cfg.aggregate, date));
    for (const auto& [id, f] : flowing_reaches(net, sc.a_min_m2, sc.wetness_schedule[t]))
      (f ? never : perennial).erase(id);
  }
  const auto truth_freq = flow_frequency(build_timeseries(days), cfg.tau);

  int gaps = 0, downstream_violations = 0, perennial_wrong = 0, never_wrong = 0;
  for (const Reach& r : net.reaches) {
    const auto& f = truth_freq.at(r.reach_id);
    if (!f) {
      ++gaps;
      continue;
    }
    if (r.downstream_id) {
      const auto& g = truth_freq.at(*r.downstream_id);
      if (g && *g < *f) ++downstream_violations;
    }
    if (perennial.count(r.reach_id) && *f != 1.0) ++perennial_wrong;
    if (never.count(r.reach_id) && *f != 0.0) ++never_wrong;
  }

  const auto pred_freq = flow_frequency(read_timeseries_csv(out / "timeseries.csv"), cfg.tau);
  std::vector<double> x, y;
  for (const auto& [id, f] : truth_freq) {
    const auto it = pred_freq.find(id);
    if (f && it != pred_freq.end() && it->second) {
      x.push_back(*it->second);
      y.push_back(*f);
    }
  }
  const double rho = x.size() >= 3 ? spearman(x, y) : std::nan("");
  const bool ok = gaps == 0 && downstream_violations == 0 && !perennial.empty() && !never.empty() &&
                  perennial_wrong == 0 && never_wrong == 0 && rho >= 0.9;
  return {ok, std::to_string(net.reaches.size()) + " reaches, " + std::to_string(gaps) + " truth gaps, " +
                  std::to_string(downstream_violations) + " downstream decreases, perennial " +
                  std::to_string(perennial.size()) + " (" + std::to_string(perennial_wrong) + " != 1), never " +
                  std::to_string(never.size()) + " (" + std::to_string(never_wrong) + " != 0); Spearman " +
                  fmt("%.4f", rho) + " over " + std::to_string(x.size()) + " reaches"};
}

// ---- 10. PR curves --------------------------------------------------------------------------------------------

Outcome pr_properties() {
  const GeoTransform t{0, 40, 1.0, ""};
  std::mt19937_64 gen(51);
  std::uniform_real_distribution<float> u(0.001f, 0.999f);
  int monotone = 0, endpoints = 0, coincide = 0;
  const int trials = 50;
  for (int trial = 0; trial < trials; ++trial) {
    std::vector<AnnotationPolygon> polys;
    for (int k = 0; k < 16; ++k) {
      AnnotationPolygon p;
      p.id = k + 1;
      const double x0 = (k % 4) * 10.0, y0 = 40.0 - (k / 4) * 10.0;
      p.ring = {{x0, y0 - 6}, {x0 + 6, y0 - 6}, {x0 + 6, y0}, {x0, y0}};
      p.label = gen() % 2 ? WaterClass::wet : WaterClass::dry;
      polys.push_back(p);
    }
    polys[0].label = WaterClass::wet;
    polys[1].label = WaterClass::dry;
    const Rasterized ras = rasterize_polygons(polys, GridSpec{t, 40, 40});
    Raster pred(40, 40, 1, t);
    for (float& v : pred.data()) v = u(gen);
    const PrCurve px = pr_curve(pred, ras.label, nullptr), pg = pr_curve(pred, ras.label, &ras.polygon_id);

    bool mono = true;
    for (const PrCurve* c : {&px, &pg})
      for (std::size_t i = 1; i < c->points.size(); ++i) mono = mono && c->points[i].recall <= c->points[i - 1].recall;
    monotone += mono;

    long wet = 0, labelled = 0;
    for (float v : ras.label.data()) {
      if (ras.label.is_nodata(v)) continue;
      ++labelled;
      wet += v == 1.0f;
    }
    const PrPoint &first = px.points.front(), &last = px.points.back();
    endpoints += first.threshold == 0.0 && first.recall == 1.0 && first.precision &&
                 *first.precision == static_cast<double>(wet) / labelled && last.threshold == 1.0 &&
                 !last.precision && last.recall == 0.0;
    coincide += px.points == pg.points;
  }
  return {monotone == trials && endpoints == trials && coincide == trials,
          "monotone recall " + std::to_string(monotone) + "/" + std::to_string(trials) + ", endpoints " +
              std::to_string(endpoints) + "/" + std::to_string(trials) + ", pixel == polygon curves " +
              std::to_string(coincide) + "/" + std::to_string(trials)};
}

// ---- 11. reproducibility ----------------------------------------------------------------------------------

Outcome reproducibility() {
  const RunManifest& a = first_run();
  const RunManifest b = run_pipeline(parse_pipeline(end_to_end_config()), work_dir() / "run_b");
  long differing = 0;
  for (std::size_t i = 0; i < std::min(a.outputs.size(), b.outputs.size()); ++i)
    differing += !(a.outputs[i] == b.outputs[i]);
  const bool ok = a.status == "ok" && b.status == "ok" && !a.outputs.empty() && a.outputs == b.outputs;
  return {ok, std::to_string(a.outputs.size()) + " vs " + std::to_string(b.outputs.size()) + " outputs, " +
                  std::to_string(differing) + " hash differences"};
}

struct Criterion {
  int id;
  std::string name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  set_log_level(LogLevel::error);
  const std::vector<Criterion> all{
      {1, "hydrology oracle suite", hydrology_oracles},
      {2, "Strahler order", strahler_trees},
      {3, "reach threshold", reach_threshold},
      {4, "registration", registration},
      {5, "gradient checks", gradient_checks},
      {6, "loss semantics", loss_semantics},
      {7, "synthetic benchmark", synthetic_benchmark},
      {8, "width stratification", width_stratification},
      {9, "end-to-end dynamic map", dynamic_map},
      {10, "PR-curve properties", pr_properties},
      {11, "reproducibility", reproducibility},
  };
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));

  int failures = 0;
  for (const Criterion& c : all) {
    if (!wanted.empty() && !wanted.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failures += !o.pass;
    std::printf("[%s] %2d %s (%.1f s): %s\n", o.pass ? "PASS" : "FAIL", c.id, c.name.c_str(), secs, o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
