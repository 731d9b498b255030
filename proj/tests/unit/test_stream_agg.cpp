#include "p2s/error.hpp"
#include "p2s/stream_agg.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>

using namespace p2s;

namespace {

// A w x h grid on 1 m pixels; reach 1 owns the west half, reach 2 the east.
// Distances grow with the column offset from each half's first column.
struct Scene {
  ReachNetwork net;
  Raster dist;
};

Scene two_reaches(int w = 8, int h = 4) {
  Scene s;
  const GeoTransform t{0, double(h), 1.0, ""};
  s.net.catchment_raster = Raster(w, h, 1, t);
  s.net.channel_mask = Raster(w, h, 1, t);
  s.dist = Raster(w, h, 1, t);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      const bool west = c < w / 2;
      s.net.catchment_raster(r, c) = west ? 1.0f : 2.0f;
      s.dist(r, c) = static_cast<float>(west ? c : c - w / 2);
    }
  for (int id : {1, 2}) {
    Reach reach;
    reach.reach_id = id;
    reach.cells = {{id == 1 ? 0 : w / 2, 0}};
    s.net.reaches.push_back(reach);
  }
  return s;
}

double explicit_mean(const Raster& p, const Scene& s, int id, double dmax) {
  double sum = 0;
  int n = 0;
  for (int r = 0; r < p.height(); ++r)
    for (int c = 0; c < p.width(); ++c)
      if (s.net.catchment_raster(r, c) == id && s.dist(r, c) <= dmax && !p.is_nodata(p(r, c))) {
        sum += p(r, c);
        ++n;
      }
  return sum / n;
}

}  // namespace

TEST_CASE("constant probability fields") {
  Scene s = two_reaches();
  for (float v : {0.0f, 1.0f}) {
    Raster p(s.dist.grid(), 1, kDefaultNodata, v);
    for (const auto& rp : reach_probability(p, s.net, s.dist, {}, "2019-06-01")) {
      REQUIRE(rp.probability);
      CHECK(*rp.probability == v);
      CHECK(rp.coverage == 1.0);
      CHECK(rp.date == "2019-06-01");
    }
  }
}

TEST_CASE("two-pixel hand evaluation") {
  // one row: p = 1 at distance 0, p = 0 at distance 5
  const GeoTransform t{0, 1, 1.0, ""};
  ReachNetwork net;
  net.catchment_raster = Raster(2, 1, 1, t, kDefaultNodata, 1.0f);
  net.channel_mask = Raster(2, 1, 1, t);
  Reach reach;
  reach.reach_id = 1;
  reach.cells = {{0, 0}};
  net.reaches = {reach};
  Raster dist(2, 1, 1, t);
  dist(0, 1) = 5.0f;
  Raster p(2, 1, 1, t);
  p(0, 0) = 1.0f;
  AggConfig cfg;
  cfg.lambda_m = 5;
  const auto rp = reach_probability(p, net, dist, cfg);
  REQUIRE(rp.size() == 1);
  REQUIRE(rp[0].probability);
  CHECK(*rp[0].probability == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))).epsilon(1e-12));
  CHECK(*rp[0].probability == doctest::Approx(0.731).epsilon(1e-3));
  const double w1 = std::exp(-1.0);
  CHECK(rp[0].weighted_pixel_count == doctest::Approx((1 + w1) * (1 + w1) / (1 + w1 * w1)));
}

TEST_CASE("convexity, monotonicity and the flat-weight limit") {
  Scene s = two_reaches(12, 6);
  std::mt19937_64 gen(3);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (int trial = 0; trial < 50; ++trial) {
    Raster p(s.dist.grid(), 1);
    for (float& v : p.data()) v = u(gen);
    AggConfig cfg;
    cfg.d_max_m = 4;
    const auto base = reach_probability(p, s.net, s.dist, cfg);
    for (const auto& rp : base) {
      float lo = 1, hi = 0;
      for (int r = 0; r < 6; ++r)
        for (int c = 0; c < 12; ++c)
          if (s.net.catchment_raster(r, c) == rp.reach_id && s.dist(r, c) <= cfg.d_max_m) {
            lo = std::min(lo, p(r, c));
            hi = std::max(hi, p(r, c));
          }
      REQUIRE(*rp.probability >= lo - 1e-12);
      REQUIRE(*rp.probability <= hi + 1e-12);
    }
    // raise one eligible pixel
    Raster q = p;
    const int r = int(gen() % 6), c = int(gen() % 4);
    q(r, c) = std::min(1.0f, q(r, c) + 0.3f);
    const auto raised = reach_probability(q, s.net, s.dist, cfg);
    REQUIRE(*raised[0].probability >= *base[0].probability);
    REQUIRE(*raised[1].probability == *base[1].probability);

    cfg.lambda_m = 1e6;
    const auto flat = reach_probability(p, s.net, s.dist, cfg);
    for (int id : {1, 2})
      REQUIRE(std::abs(*flat[id - 1].probability - explicit_mean(p, s, id, cfg.d_max_m)) <= 1e-6);
  }
}

TEST_CASE("cutoff and coverage") {
  Scene s = two_reaches();
  Raster p(s.dist.grid(), 1, kDefaultNodata, 0.0f);
  for (int r = 0; r < 4; ++r) p(r, 3) = 1.0f;  // distance 3 in reach 1
  AggConfig cfg;
  cfg.d_max_m = 2;
  CHECK(*reach_probability(p, s.net, s.dist, cfg)[0].probability == 0.0);
  cfg.d_max_m = 3;
  CHECK(*reach_probability(p, s.net, s.dist, cfg)[0].probability > 0.0);

  // cloud over 3 of 4 columns of reach 1: coverage 0.25 < 0.3 gives a gap
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 3; ++c) p(r, c) = kDefaultNodata;
  const auto rp = reach_probability(p, s.net, s.dist, {});
  CHECK(rp[0].coverage == 0.25);
  CHECK(!rp[0].probability);
  CHECK(rp[1].probability);
  AggConfig loose;
  loose.min_coverage = 0.2;
  CHECK(*reach_probability(p, s.net, s.dist, loose)[0].probability == 1.0);

  // fully clouded reach
  for (int r = 0; r < 4; ++r) p(r, 3) = kDefaultNodata;
  const auto none = reach_probability(p, s.net, s.dist, {});
  CHECK(!none[0].probability);
  CHECK(none[0].coverage == 0.0);
}

TEST_CASE("probability on a coarser grid is resampled by nearest neighbour") {
  Scene s = two_reaches(8, 4);
  Raster coarse(4, 2, 1, GeoTransform{0, 4, 2.0, ""});
  coarse(0, 0) = coarse(1, 0) = coarse(0, 1) = coarse(1, 1) = 1.0f;  // west half wet
  const auto rp = reach_probability(coarse, s.net, s.dist, {});
  CHECK(*rp[0].probability == 1.0);
  CHECK(*rp[1].probability == 0.0);
}

TEST_CASE("reach_probability errors") {
  Scene s = two_reaches();
  Raster p(s.dist.grid(), 1);
  Raster bad_dist(3, 3, 1, GeoTransform{});
  CHECK_THROWS_AS(reach_probability(p, s.net, bad_dist, {}), DataError);
  AggConfig cfg;
  cfg.lambda_m = 0;
  CHECK_THROWS_AS(reach_probability(p, s.net, s.dist, cfg), ConfigError);
  cfg = {};
  cfg.min_coverage = 1.5;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  p(0, 0) = 1.5f;
  CHECK_THROWS_AS(reach_probability(p, s.net, s.dist, {}), DataError);
  CHECK_THROWS_AS(reach_probability(Raster(s.dist.grid(), 1), s.net, s.dist, {}, "2019-02-30"), DataError);
}

namespace {

ReachProbability rp(int id, std::optional<double> p) {
  ReachProbability r;
  r.reach_id = id;
  r.probability = p;
  r.coverage = p ? 1.0 : 0.0;
  return r;
}

}  // namespace

TEST_CASE("build_timeseries orders days and rejects duplicates") {
  const auto ts = build_timeseries({{"2019-03-02", {rp(1, 0.2)}}, {"2019-03-01", {rp(1, 0.1)}},
                                    {"2019-03-03", {rp(1, std::nullopt)}}});
  REQUIRE(ts.series.at(1).size() == 3);
  CHECK(ts.series.at(1)[0].date == "2019-03-01");
  CHECK(ts.series.at(1)[1].date == "2019-03-02");
  CHECK(ts.series.at(1)[2].date == "2019-03-03");
  CHECK(ts.observed(1) == 2);
  CHECK(ts.start == "2019-03-01");
  CHECK(ts.end == "2019-03-03");
  CHECK_THROWS_AS(build_timeseries({{"2019-03-01", {rp(1, 0.1)}}, {"2019-03-01", {rp(1, 0.3)}}}), DataError);
  CHECK_THROWS_AS(build_timeseries({{"2019-3-1", {rp(1, 0.1)}}}), DataError);
}

TEST_CASE("flow frequency and annual map") {
  std::vector<std::pair<std::string, std::vector<ReachProbability>>> days;
  for (int d = 1; d <= 10; ++d) {
    char date[16];
    std::snprintf(date, sizeof date, "2019-07-%02d", d);
    days.push_back({date, {rp(1, 1.0), rp(2, 0.0), rp(3, d <= 6 ? 0.9 : 0.1), rp(4, std::nullopt)}});
  }
  const auto ts = build_timeseries(days);
  const auto f = flow_frequency(ts);
  CHECK(*f.at(1) == 1.0);
  CHECK(*f.at(2) == 0.0);
  CHECK(*f.at(3) == doctest::Approx(0.6));
  CHECK(!f.at(4));
  CHECK(*flow_frequency(ts, 0.5, {"2019-07-05", "2019-07-08"}).at(3) == 0.5);
  CHECK_THROWS_AS(flow_frequency(ts, 1.0), ConfigError);

  const auto a = annual_map(ts, 2019);
  CHECK(*a.at(1) == 1.0);
  CHECK(*a.at(3) == doctest::Approx((6 * 0.9 + 4 * 0.1) / 10).epsilon(1e-12));
  CHECK(!a.at(4));
  CHECK(!annual_map(ts, 2020).at(1));

  const auto two = build_timeseries({{"2019-01-01", {rp(1, 0.2)}}, {"2019-12-31", {rp(1, 0.8)}},
                                     {"2020-01-01", {rp(1, 0.0)}}});
  CHECK(*annual_map(two, 2019).at(1) == doctest::Approx(0.5));

  // permutation invariance
  auto shuffled = days;
  std::mt19937_64 gen(5);
  std::shuffle(shuffled.begin(), shuffled.end(), gen);
  CHECK(flow_frequency(build_timeseries(shuffled)) == f);
  CHECK(annual_map(build_timeseries(shuffled), 2019) == a);
}

TEST_CASE("time series CSV round trip") {
  const auto ts = build_timeseries({{"2019-03-01", {rp(1, 0.125), rp(2, std::nullopt)}},
                                    {"2019-03-02", {rp(1, 0.5), rp(2, 0.75)}}});
  const auto path = std::filesystem::temp_directory_path() / "p2s_ts_test.csv";
  write_timeseries_csv(ts, path);
  const auto back = read_timeseries_csv(path);
  CHECK(back.series == ts.series);
  std::filesystem::remove(path);
}
