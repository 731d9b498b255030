#include "p2s/pipeline.hpp"

#include "p2s/coregister.hpp"
#include "p2s/error.hpp"
#include "p2s/log.hpp"
#include "p2s/metrics.hpp"
#include "p2s/stream_agg.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <random>
#include <thread>

namespace p2s {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

/// Calls fn(i) for i in [0, n), `jobs` at a time. The first failure in index
/// order is rethrown once its batch has finished.
template <typename Fn>
void parallel_for(int n, int jobs, Fn&& fn) {
  jobs = std::max(1, jobs);
  for (int start = 0; start < n; start += jobs) {
    const int end = std::min(n, start + jobs);
    std::vector<std::exception_ptr> errors(end - start);
    if (end - start == 1) {
      try {
        fn(start);
      } catch (...) {
        errors[0] = std::current_exception();
      }
    } else {
      std::vector<std::thread> pool;
      for (int i = start; i < end; ++i)
        pool.emplace_back([&, i] {
          try {
            fn(i);
          } catch (...) {
            errors[i - start] = std::current_exception();
          }
        });
      for (auto& t : pool) t.join();
    }
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
}

void emit(const ProgressFn& progress, json event) {
  if (progress) progress(event);
}

std::string fmt_g(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

void require_file(const fs::path& p, const std::string& what) {
  if (!fs::exists(p)) throw DataError(what + " '" + p.string() + "' not found");
}

}  // namespace

void run_stage(const std::string& stage, const std::function<void()>& fn, const ProgressFn& progress) {
  const auto t0 = std::chrono::steady_clock::now();
  emit(progress, {{"stage", stage}, {"event", "start"}});
  log_info("stage " + stage);
  const std::string prefix = "stage '" + stage + "': ";
  try {
    fn();
  } catch (const ConfigError& e) {
    throw ConfigError(prefix + e.what());
  } catch (const DataError& e) {
    throw DataError(prefix + e.what());
  } catch (const NumericError& e) {
    throw NumericError(prefix + e.what());
  } catch (const fs::filesystem_error& e) {
    throw DataError(prefix + e.what());
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  emit(progress, {{"stage", stage}, {"event", "done"}, {"seconds", secs}});
}

// ---- hydrology --------------------------------------------------------------------

std::vector<fs::path> save_hydro(const HydroProducts& h, const fs::path& dir) {
  fs::create_directories(dir);
  std::vector<fs::path> out;
  auto put = [&](const Raster& r, const char* name) {
    out.push_back(dir / name);
    write_raster(r, out.back());
  };
  put(h.filled, "filled.p2sr");
  put(h.flow_dir, "flow_dir.p2sr");
  put(h.accumulation, "accumulation.p2sr");
  put(h.distance, "distance.p2sr");
  put(h.network.catchment_raster, "catchments.p2sr");
  put(h.network.channel_mask, "channels.p2sr");
  out.push_back(dir / "reaches.geojson");
  write_reach_network(h.network, h.network.catchment_raster.transform(), out.back());
  return out;
}

HydroProducts load_hydro(const fs::path& dir) {
  HydroProducts h;
  h.filled = read_raster(dir / "filled.p2sr");
  h.flow_dir = read_raster(dir / "flow_dir.p2sr");
  h.accumulation = read_raster(dir / "accumulation.p2sr");
  h.distance = read_raster(dir / "distance.p2sr");
  h.network.catchment_raster = read_raster(dir / "catchments.p2sr");
  h.network.channel_mask = read_raster(dir / "channels.p2sr");
  const fs::path reaches = dir / "reaches.geojson";
  h.network.reaches = read_reach_network(reaches, h.network.catchment_raster.transform());
  std::ifstream f(reaches);
  try {
    h.network.threshold_m2 = json::parse(f).value("threshold_m2", 10000.0);
  } catch (const json::exception& e) {
    throw DataError("malformed reach network: " + std::string(e.what()));
  }
  if (!(h.distance.grid() == h.network.catchment_raster.grid()) || !(h.flow_dir.grid() == h.distance.grid()))
    throw DataError("hydrology rasters in '" + dir.string() + "' are not on one grid");
  return h;
}

Raster terrain_stack(const Raster& dem, const HydroProducts& h, const Raster* hag) {
  const Raster zero(dem.grid(), 1, dem.nodata(), 0.0f);
  if (hag && !(hag->grid() == dem.grid())) throw DataError("height-above-ground raster is not on the DEM grid");
  return stack_bands({&dem, &h.network.channel_mask, &h.distance, hag ? hag : &zero});
}

// ---- synthetic ---------------------------------------------------------------------

std::uint64_t polygon_seed(const SynthConfig& cfg) { return cfg.seed * 0x9E3779B97F4A7C15ULL + 0x5053; }

SynthFiles write_synth(const SynthConfig& cfg, const fs::path& dir, bool all_references, int jobs) {
  cfg.validate();
  fs::create_directories(dir);
  const SynthWatershed w = make_watershed(cfg);
  SynthFiles f;
  f.dem = dir / "dem.p2sr";
  write_raster(w.dem, f.dem);
  f.terrain = dir / "terrain.p2sr";
  write_raster(w.terrain, f.terrain);
  f.all = {f.dem, f.terrain};

  const int n = static_cast<int>(cfg.wetness_schedule.size());
  f.optical.resize(n);
  f.reference.resize(n);
  f.truth.resize(n);
  std::vector<std::map<int, bool>> flowing(n);
  parallel_for(n, jobs, [&](int i) {
    const SynthDay d = generate_day(w, i);
    f.optical[i] = {d.date, dir / ("optical_" + d.date + ".p2sr")};
    write_raster(d.optical, f.optical[i].path);
    f.truth[i] = dir / ("truth_" + d.date + ".p2sr");
    write_raster(d.truth, f.truth[i]);
    if (all_references || i == cfg.label_day) {
      f.reference[i] = dir / ("reference_" + d.date + ".p2sr");
      write_raster(d.reference, f.reference[i]);
    }
    if (i == cfg.label_day) {
      f.polygons = dir / "polygons.geojson";
      write_polygons(sample_polygons(w, d, cfg.n_wet, cfg.n_dry, cfg.shadow_bias, polygon_seed(cfg)), f.polygons);
    }
    flowing[i] = d.flowing;
  });
  for (int i = 0; i < n; ++i) {
    f.all.push_back(f.optical[i].path);
    if (!f.reference[i].empty()) f.all.push_back(f.reference[i]);
    f.all.push_back(f.truth[i]);
  }
  f.all.push_back(f.polygons);

  f.flow_truth = dir / "flow_truth.csv";
  std::ofstream csv(f.flow_truth, std::ios::trunc);
  if (!csv) throw DataError("cannot write '" + f.flow_truth.string() + "'");
  csv << "reach_id,date,flowing,width_m\n";
  for (const auto& r : w.hydro.network.reaches)
    for (int i = 0; i < n; ++i)
      csv << r.reach_id << ',' << f.optical[i].date << ',' << (flowing[i].at(r.reach_id) ? 1 : 0) << ','
          << fmt_g(w.width_m.at(r.reach_id)) << '\n';
  if (!csv) throw DataError("write failed for '" + f.flow_truth.string() + "'");
  f.all.push_back(f.flow_truth);
  return f;
}

// ---- training data ---------------------------------------------------------------------

std::vector<const Raster*> optical_window(const std::vector<Raster>& days, int index, int window) {
  if (index < 0 || index >= static_cast<int>(days.size())) throw DataError("day index out of range");
  std::vector<const Raster*> out;
  for (int k = index - window + 1; k <= index; ++k) out.push_back(&days[std::max(0, k)]);
  return out;
}

std::vector<TrainExample> sample_training_tiles(const Raster& optical, const Raster* terrain,
                                                const std::vector<AnnotationPolygon>& polygons, const NetConfig& net,
                                                int count, std::uint64_t seed, std::optional<double> east_limit) {
  if (polygons.empty()) throw DataError("no training polygons");
  if (count < 1) throw ConfigError("tile count must be >= 1");
  const GeoTransform& ot = optical.transform();
  const double step = optical.pixel_size();
  const double fp = net.footprint_m;
  double x_lo = ot.x_origin, x_hi = ot.x_origin + optical.grid().extent_x();
  double y_hi = ot.y_origin, y_lo = ot.y_origin - optical.grid().extent_y();
  if (terrain) {
    const GeoTransform& tt = terrain->transform();
    if (!is_multiple(ot.x_origin - tt.x_origin, terrain->pixel_size()) ||
        !is_multiple(ot.y_origin - tt.y_origin, terrain->pixel_size()))
      throw DataError("optical and terrain pixel lattices are not aligned");
    x_lo = std::max(x_lo, tt.x_origin);
    x_hi = std::min(x_hi, tt.x_origin + terrain->grid().extent_x());
    y_hi = std::min(y_hi, tt.y_origin);
    y_lo = std::max(y_lo, tt.y_origin - terrain->grid().extent_y());
  }
  if (east_limit) x_hi = std::min(x_hi, *east_limit);
  // anchors sit on optical pixel corners: x = x0 + kx*step, y = y0 - ky*step
  const double eps = 1e-9;
  const long kx_min = static_cast<long>(std::ceil((x_lo - ot.x_origin) / step - eps));
  const long kx_max = static_cast<long>(std::floor((x_hi - fp - ot.x_origin) / step + eps));
  const long ky_min = static_cast<long>(std::ceil((ot.y_origin - y_hi) / step - eps));
  const long ky_max = static_cast<long>(std::floor((ot.y_origin - y_lo - fp) / step + eps));
  if (kx_min > kx_max || ky_min > ky_max) throw DataError("training region is smaller than the footprint");

  std::mt19937_64 rng(seed);
  auto pick = [&](long lo, long hi) { return lo + static_cast<long>(rng() % static_cast<std::uint64_t>(hi - lo + 1)); };
  std::vector<TrainExample> out;
  const long max_attempts = 50L * count;
  for (long attempt = 0; static_cast<int>(out.size()) < count; ++attempt) {
    if (attempt >= max_attempts) throw DataError("could not place enough training tiles");
    const AnnotationPolygon& p = polygons[rng() % polygons.size()];
    double px0 = 1e300, px1 = -1e300, py0 = 1e300, py1 = -1e300;
    for (const Point& v : p.ring) {
      px0 = std::min(px0, v.x);
      px1 = std::max(px1, v.x);
      py0 = std::min(py0, v.y);
      py1 = std::max(py1, v.y);
    }
    const double cx = (px0 + px1) / 2, cy = (py0 + py1) / 2;
    const long ax_lo = std::max(kx_min, static_cast<long>(std::ceil((cx - fp - ot.x_origin) / step - eps)));
    const long ax_hi = std::min(kx_max, static_cast<long>(std::floor((cx - ot.x_origin) / step + eps)));
    const long ay_lo = std::max(ky_min, static_cast<long>(std::ceil((ot.y_origin - cy - fp) / step - eps)));
    const long ay_hi = std::min(ky_max, static_cast<long>(std::floor((ot.y_origin - cy) / step + eps)));
    if (ax_lo > ax_hi || ay_lo > ay_hi) continue;
    const Point anchor{ot.x_origin + pick(ax_lo, ax_hi) * step, ot.y_origin - pick(ay_lo, ay_hi) * step};

    std::vector<AnnotationPolygon> inside;
    for (const auto& q : polygons) {
      bool hit = false;
      double qx0 = 1e300, qx1 = -1e300, qy0 = 1e300, qy1 = -1e300;
      for (const Point& v : q.ring) {
        qx0 = std::min(qx0, v.x);
        qx1 = std::max(qx1, v.x);
        qy0 = std::min(qy0, v.y);
        qy1 = std::max(qy1, v.y);
      }
      hit = qx1 > anchor.x && qx0 < anchor.x + fp && qy0 < anchor.y && qy1 > anchor.y - fp;
      if (hit) inside.push_back(q);
    }
    const Raster opt = crop(optical, geo_window(optical, anchor, fp));
    const int n_out = static_cast<int>(std::lround(fp / net.output_px_m));
    const GridSpec target{GeoTransform{anchor.x, anchor.y, net.output_px_m, ot.crs_tag}, n_out, n_out};
    try {
      if (terrain) {
        const Raster ter = crop(*terrain, geo_window(*terrain, anchor, fp));
        out.push_back(make_example(opt, &ter, inside, target));
      } else {
        out.push_back(make_example(opt, nullptr, inside, target));
      }
    } catch (const DataError&) {
      // polygon too thin to cover a pixel centre in this tile; draw again
    }
  }
  return out;
}

// ---- end to end -----------------------------------------------------------------------------

RunManifest run_pipeline(const PipelineConfig& cfg, const fs::path& out_dir, const RunOptions& opts) {
  fs::create_directories(out_dir);
  ManifestBuilder mb(opts.command, out_dir / "manifest.json");
  mb.set_config(to_json(cfg));
  mb.set_seed("seed", cfg.seed);
  std::string current = "setup";
  auto stage = [&](const std::string& name, const std::function<void()>& fn) {
    current = name;
    run_stage(name, fn, opts.progress);
  };
  auto output = [&](const fs::path& p) { mb.add_output(p); };

  try {
    Raster dem;
    std::optional<Raster> terrain;
    std::vector<std::string> dates;
    std::vector<Raster> optical;
    std::vector<AnnotationPolygon> polys;
    std::optional<Raster> reference;
    std::optional<double> east_limit;
    fs::path model_in;
    int label = 0;

    stage("inputs", [&] {
      if (cfg.synth) {
        const SynthFiles f = write_synth(*cfg.synth, out_dir / "synth", false, cfg.jobs);
        for (const auto& p : f.all) output(p);
        dem = read_raster(f.dem);
        terrain = read_raster(f.terrain);
        for (const auto& o : f.optical) {
          dates.push_back(o.date);
          optical.push_back(read_raster(o.path));
        }
        label = cfg.synth->label_day;
        polys = read_polygons(f.polygons);
        reference = read_raster(f.reference[label]);
        east_limit = dem.transform().x_origin + cfg.synth->size_m / 2;
        return;
      }
      const PipelineInputs& in = *cfg.inputs;
      require_file(in.dem, "DEM");
      mb.add_input(in.dem);
      dem = read_raster(in.dem);
      for (std::size_t i = 0; i < in.optical.size(); ++i) {
        require_file(in.optical[i].path, "optical scene");
        mb.add_input(in.optical[i].path);
        dates.push_back(in.optical[i].date);
        optical.push_back(read_raster(in.optical[i].path));
        if (in.optical[i].date == in.label_date) label = static_cast<int>(i);
        if (i > 0 && !(dates[i - 1] < dates[i])) throw DataError("optical dates must be strictly increasing");
      }
      if (!in.polygons.empty()) {
        require_file(in.polygons, "polygon file");
        mb.add_input(in.polygons);
        polys = read_polygons(in.polygons);
      }
      if (!in.reference.empty()) {
        require_file(in.reference, "reference image");
        mb.add_input(in.reference);
        reference = read_raster(in.reference);
      }
      if (!in.model.empty()) {
        require_file(in.model, "model");
        mb.add_input(in.model);
        model_in = in.model;
      }
    });

    HydroProducts hydro;
    stage("hydro", [&] {
      hydro = derive_hydrology(dem, cfg.threshold_m2);
      for (const auto& p : save_hydro(hydro, out_dir / "hydro")) output(p);
      log_info(std::to_string(hydro.network.reaches.size()) + " reaches");
    });

    if (cfg.coregister) {
      stage("coregister", [&] {
        if (!reference) throw DataError("co-registration needs a reference image");
        if (polys.empty()) throw DataError("no polygons to co-register");
        const Raster& target = optical[label];
        const GridSpec g{GeoTransform{target.transform().x_origin, target.transform().y_origin,
                                      reference->pixel_size(), reference->transform().crs_tag},
                         static_cast<int>(std::lround(target.grid().extent_x() / reference->pixel_size())),
                         static_cast<int>(std::lround(target.grid().extent_y() / reference->pixel_size()))};
        const Raster ref = sample_onto(*reference, g);
        const auto tiles = estimate_tile_shifts(ref, target, cfg.coreg_tile_m, cfg.coreg);
        polys = shift_polygons_by_tile(polys, tiles);
        const fs::path dir = out_dir / "coregister";
        fs::create_directories(dir);
        json shifts = json::array();
        for (const auto& t : tiles)
          shifts.push_back({{"anchor", {t.anchor.x, t.anchor.y}},
                            {"size_m", t.size_m},
                            {"valid", t.estimate.valid},
                            {"dx_m", t.estimate.dx_m},
                            {"dy_m", t.estimate.dy_m},
                            {"peak_ratio", t.estimate.peak_ratio}});
        write_file_atomic(dir / "shifts.json", shifts.dump(2) + "\n");
        output(dir / "shifts.json");
        write_polygons(polys, dir / "polygons.geojson");
        output(dir / "polygons.geojson");
      });
    }

    std::vector<Raster> prob(optical.size());
    stage("predict", [&] {
      const bool needs_terrain = model_in.empty() ? cfg.model.variant == Variant::wassernetz : true;
      Model m;
      if (!model_in.empty()) m = load_model(model_in);
      if ((model_in.empty() && needs_terrain) || (!model_in.empty() && m.uses_terrain())) {
        if (!terrain) {
          const fs::path& tp = cfg.inputs->terrain;
          if (tp.empty()) throw DataError("the wassernetz model needs a terrain stack; set inputs.terrain");
          require_file(tp, "terrain stack");
          mb.add_input(tp);
          terrain = read_raster(tp);
        }
      }
      const int window = model_in.empty() ? cfg.model.time_window
                                          : std::max(1, m.config.optical_channels / std::max(1, optical[0].bands()));
      const Raster* ter = terrain ? &*terrain : nullptr;
      if (model_in.empty()) {
        std::vector<AnnotationPolygon> train_polys;
        for (const auto& p : polys)
          if (p.split == Split::train) train_polys.push_back(p);
        if (train_polys.empty()) throw DataError("no training polygons (split = train)");
        const auto days = optical_window(optical, label, window);
        const Raster stack = days.size() == 1 ? *days[0] : stack_bands(days);
        NetConfig net = cfg.model.net;
        if (stack.bands() != net.optical_channels)
          throw DataError("optical scenes have " + std::to_string(stack.bands() / window) +
                          " bands, model.bands expects " + std::to_string(net.optical_channels / window));
        emit(opts.progress, {{"stage", "predict"}, {"event", "train"}, {"tiles", cfg.train.tiles}});
        const auto examples = sample_training_tiles(stack, cfg.model.variant == Variant::wassernetz ? ter : nullptr,
                                                    train_polys, net, cfg.train.tiles, cfg.seed, east_limit);
        m = build_model(net, cfg.model.variant);
        const TrainHistory hist = train(m, examples, cfg.train.options);
        const fs::path dir = out_dir / "model";
        fs::create_directories(dir);
        save_model(m, dir / "model.p2sw");
        output(dir / "model.p2sw");
        write_file_atomic(dir / "history.json", json{{"epoch_loss", hist.epoch_loss}}.dump(2) + "\n");
        output(dir / "history.json");
      }
      const fs::path dir = out_dir / "prob";
      fs::create_directories(dir);
      for (std::size_t i = 0; i < optical.size(); ++i) {
        emit(opts.progress, {{"stage", "predict"}, {"event", "day"}, {"date", dates[i]}, {"index", i},
                             {"of", optical.size()}});
        prob[i] = predict_scene(m, optical_window(optical, static_cast<int>(i), window),
                                m.uses_terrain() ? ter : nullptr, cfg.jobs);
        const fs::path p = dir / ("prob_" + dates[i] + ".p2sr");
        write_raster(prob[i], p);
        output(p);
      }
    });

    std::vector<std::pair<std::string, std::vector<ReachProbability>>> daily(optical.size());
    stage("aggregate", [&] {
      const fs::path dir = out_dir / "aggregate";
      fs::create_directories(dir);
      parallel_for(static_cast<int>(optical.size()), cfg.jobs, [&](int i) {
        daily[i] = {dates[i], reach_probability(prob[i], hydro.network, hydro.distance, cfg.aggregate, dates[i])};
      });
      for (const auto& d : daily) {
        const fs::path p = dir / ("reaches_" + d.first + ".csv");
        write_timeseries_csv(build_timeseries({d}), p);
        output(p);
      }
    });

    StreamTimeSeries ts;
    stage("timeseries", [&] {
      ts = build_timeseries(daily);
      write_timeseries_csv(ts, out_dir / "timeseries.csv");
      output(out_dir / "timeseries.csv");
    });

    stage("frequency", [&] {
      write_reach_values(hydro.network, flow_frequency(ts, cfg.tau), out_dir / "frequency.geojson");
      output(out_dir / "frequency.geojson");
    });

    stage("annual", [&] {
      const int year = cfg.year ? *cfg.year : std::stoi(dates.front().substr(0, 4));
      write_reach_values(hydro.network, annual_map(ts, year), out_dir / "annual.geojson");
      output(out_dir / "annual.geojson");
    });

    stage("eval", [&] {
      std::vector<AnnotationPolygon> test;
      for (const auto& p : polys)
        if (p.split == Split::test) test.push_back(p);
      if (test.empty()) {
        log_info("no test polygons; skipping evaluation");
        return;
      }
      const EvalResult r = evaluate(prob[label], test);
      const fs::path dir = out_dir / "eval";
      fs::create_directories(dir);
      write_eval_report(r, dir / "eval.json");
      write_pr_csv(r.pr_pixel, dir / "pr_pixel.csv");
      write_pr_csv(r.pr_polygon, dir / "pr_polygon.csv");
      for (const char* name : {"eval.json", "pr_pixel.csv", "pr_polygon.csv"}) output(dir / name);
      log_info("test pixel accuracy " + fmt_g(r.pixel_accuracy) + ", polygon accuracy " + fmt_g(r.polygon_accuracy));
    });

    return mb.finish_ok();
  } catch (const std::exception& e) {
    try {
      mb.finish_failed(current, e.what());
    } catch (const std::exception& inner) {
      log(LogLevel::error, std::string("could not write the failure manifest: ") + inner.what());
    }
    throw;
  }
}

}  // namespace p2s
