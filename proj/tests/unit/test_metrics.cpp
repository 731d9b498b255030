#include "p2s/error.hpp"
#include "p2s/log.hpp"
#include "p2s/metrics.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

using namespace p2s;

namespace {

const GeoTransform kT{0, 20, 1.0, ""};

Raster grid(float fill = kDefaultNodata, int w = 20, int h = 20) { return Raster(w, h, 1, kT, kDefaultNodata, fill); }

// Axis-aligned rectangle covering pixel columns [c0, c1) and rows [r0, r1).
AnnotationPolygon rect(int id, int c0, int r0, int c1, int r1, WaterClass cls, std::optional<double> width = {}) {
  AnnotationPolygon p;
  p.id = id;
  const double x0 = kT.x_origin + c0, x1 = kT.x_origin + c1;
  const double y0 = kT.y_origin - r0, y1 = kT.y_origin - r1;
  p.ring = {{x0, y1}, {x1, y1}, {x1, y0}, {x0, y0}};
  p.label = cls;
  p.width_m = width;
  return p;
}

// Brute-force confusion matrix per threshold, pixels only.
std::vector<PrPoint> oracle_pr(const Raster& pred, const Raster& label, const std::vector<double>& ts) {
  std::vector<PrPoint> out;
  for (double t : ts) {
    long tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < label.data().size(); ++i) {
      const float l = label.data()[i];
      if (label.is_nodata(l)) continue;
      const bool pos = pred.data()[i] > t;
      tp += pos && l == 1.0f;
      fp += pos && l == 0.0f;
      fn += !pos && l == 1.0f;
    }
    PrPoint p;
    p.threshold = t;
    if (tp + fp > 0) p.precision = double(tp) / double(tp + fp);
    p.recall = double(tp) / double(tp + fn);
    out.push_back(p);
  }
  return out;
}

}  // namespace

TEST_CASE("pixel accuracy examples") {
  Raster label = grid();
  Raster pred = grid(0.0f);
  label(0, 0) = 1;
  label(0, 1) = 0;
  label(0, 2) = 1;
  pred(0, 0) = 1;
  pred(0, 2) = 1;
  CHECK(pixel_accuracy(pred, label) == 1.0);
  Raster inv = pred;
  for (int c = 0; c < 3; ++c) inv(0, c) = 1.0f - label(0, c);
  CHECK(pixel_accuracy(inv, label) == 0.0);
  pred(0, 2) = 0.2f;
  CHECK(pixel_accuracy(pred, label) == doctest::Approx(2.0 / 3.0));
  CHECK(pixel_accuracy(pred, label) == doctest::Approx(0.6667).epsilon(1e-4));
  CHECK_THROWS_AS(pixel_accuracy(pred, grid()), DataError);
  CHECK_THROWS_AS(pixel_accuracy(grid(0, 5, 5), label), DataError);
}

TEST_CASE("polygon accuracy weights polygons equally") {
  const std::vector<AnnotationPolygon> polys{rect(1, 0, 0, 1, 1, WaterClass::wet),
                                             rect(2, 5, 5, 15, 15, WaterClass::dry)};
  const Rasterized ras = rasterize_polygons(polys, grid().grid());
  Raster pred = grid(1.0f);  // 1-px wet polygon right, 100-px dry polygon wrong
  CHECK(polygon_accuracy(pred, ras.label, ras.polygon_id) == 0.5);
  CHECK(pixel_accuracy(pred, ras.label) == doctest::Approx(1.0 / 101.0));
  CHECK(polygon_accuracy(ras.label, ras.label, ras.polygon_id) == 1.0);
  CHECK(polygon_accuracy(grid(0.7f), ras.label, ras.polygon_id) == 0.5);

  Raster half = grid(0.0f);
  for (int r = 5; r < 15; ++r)
    for (int c = 5; c < 11; ++c) half(r, c) = 1.0f;  // 60% of the dry polygon wrong
  CHECK(polygon_accuracy(half, ras.label, ras.polygon_id) == doctest::Approx((0.0 + 0.4) / 2));
  CHECK(polygon_accuracy(half, ras.label, ras.polygon_id, 0.5, PolygonScoring::majority) == 0.0);
}

TEST_CASE("equal-sized polygons: polygon accuracy equals pixel accuracy exactly") {
  std::mt19937_64 gen(4);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<AnnotationPolygon> polys;
    for (int k = 0; k < 8; ++k)
      polys.push_back(rect(k + 1, (k % 4) * 5, (k / 4) * 5, (k % 4) * 5 + 3, (k / 4) * 5 + 3,
                           k % 3 ? WaterClass::dry : WaterClass::wet));
    const Rasterized ras = rasterize_polygons(polys, grid().grid());
    Raster pred = grid();
    for (float& v : pred.data()) v = u(gen);
    REQUIRE(polygon_accuracy(pred, ras.label, ras.polygon_id) == pixel_accuracy(pred, ras.label));
    const PrCurve a = pr_curve(pred, ras.label, nullptr), b = pr_curve(pred, ras.label, &ras.polygon_id);
    REQUIRE(a.points == b.points);
  }
}

TEST_CASE("accuracies are invariant under monotone remaps that keep the threshold crossing") {
  set_log_level(LogLevel::error);
  std::mt19937_64 gen(8);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  std::vector<AnnotationPolygon> polys{rect(1, 0, 0, 4, 7, WaterClass::wet), rect(2, 6, 0, 9, 3, WaterClass::dry),
                                      rect(3, 10, 10, 19, 19, WaterClass::wet)};
  const Rasterized ras = rasterize_polygons(polys, grid().grid());
  Raster pred = grid();
  for (float& v : pred.data()) v = u(gen);
  Raster remapped = pred;
  for (float& v : remapped.data()) v = 0.5f + 4.0f * (v - 0.5f) * (v - 0.5f) * (v - 0.5f);
  CHECK(pixel_accuracy(pred, ras.label) == pixel_accuracy(remapped, ras.label));
  CHECK(polygon_accuracy(pred, ras.label, ras.polygon_id) == polygon_accuracy(remapped, ras.label, ras.polygon_id));

  // polygon order does not matter
  std::reverse(polys.begin(), polys.end());
  const EvalResult fwd = evaluate(pred, {polys.rbegin(), polys.rend()});
  const EvalResult rev = evaluate(pred, polys);
  CHECK(fwd.pixel_accuracy == rev.pixel_accuracy);
  CHECK(fwd.polygon_accuracy == rev.polygon_accuracy);
  CHECK(fwd.pr_polygon.points == rev.pr_polygon.points);
  set_log_level(LogLevel::info);
}

TEST_CASE("PR curve endpoints, monotone recall and brute-force oracle") {
  std::mt19937_64 gen(21);
  std::uniform_real_distribution<float> u(0.001f, 0.999f);
  for (int trial = 0; trial < 20; ++trial) {
    Raster label = grid(), pred = grid();
    // 200 labelled pixels in rows 0..9
    for (int r = 0; r < 10; ++r)
      for (int c = 0; c < 20; ++c) {
        label(r, c) = (gen() % 3 == 0) ? 1.0f : 0.0f;
        pred(r, c) = u(gen);
      }
    label(0, 0) = 1.0f;
    label(0, 1) = 0.0f;
    const PrCurve c = pr_curve(pred, label, nullptr);
    REQUIRE(c.points.size() == 101);
    CHECK(!c.single_class);
    REQUIRE(c.points == oracle_pr(pred, label, default_thresholds()));
    long wet = 0;
    for (float v : label.data()) wet += v == 1.0f;
    CHECK(c.points.front().recall == 1.0);
    CHECK(*c.points.front().precision == double(wet) / 200.0);
    CHECK(!c.points.back().precision);
    CHECK(c.points.back().recall == 0.0);
    for (std::size_t i = 1; i < c.points.size(); ++i) REQUIRE(c.points[i].recall <= c.points[i - 1].recall);
  }
}

TEST_CASE("PR curve errors and flags") {
  Raster label = grid(), pred = grid(0.5f);
  label(0, 0) = 0.0f;
  CHECK_THROWS_AS(pr_curve(pred, label, nullptr), DataError);
  label(0, 0) = 1.0f;
  CHECK(pr_curve(pred, label, nullptr).single_class);
  CHECK_THROWS_AS(pr_curve(pred, label, nullptr, {0.5, 0.5}), ConfigError);
}

TEST_CASE("width stratification") {
  set_log_level(LogLevel::error);
  const std::vector<AnnotationPolygon> polys{
      rect(1, 0, 0, 2, 2, WaterClass::wet, 3.0), rect(2, 4, 0, 6, 2, WaterClass::wet, 7.0),
      rect(3, 8, 0, 10, 2, WaterClass::wet, 12.0), rect(4, 12, 0, 14, 2, WaterClass::dry, 12.0),
      rect(5, 16, 0, 18, 2, WaterClass::wet)};
  Raster pred = grid(0.0f);
  pred(0, 4) = pred(0, 5) = 1.0f;                     // polygon 2 half right
  for (int c = 8; c < 10; ++c) pred(0, c) = pred(1, c) = 1.0f;  // polygon 3 all right
  const auto bins = width_stratified(polys, pred, {0, 5, 10});
  REQUIRE(bins.size() == 3);
  CHECK(bins[0].n_polygons == 1);
  CHECK(bins[1].n_polygons == 1);
  CHECK(bins[2].n_polygons == 1);
  CHECK(*bins[0].accuracy == 0.0);
  CHECK(*bins[1].accuracy == 0.5);
  CHECK(*bins[2].accuracy == 1.0);
  CHECK(std::isinf(bins[2].hi));

  const auto with_empty = width_stratified(polys, pred, {0, 5, 10, 20, 30});
  CHECK(with_empty[3].n_polygons == 0);
  CHECK(!with_empty[3].accuracy);
  // the boundary is half-open
  const auto edge = width_stratified(polys, pred, {0, 7});
  CHECK(edge[0].n_polygons == 1);
  CHECK(edge[1].n_polygons == 2);
  set_log_level(LogLevel::info);
}

TEST_CASE("evaluate bundles every metric") {
  set_log_level(LogLevel::error);
  const std::vector<AnnotationPolygon> polys{rect(1, 0, 0, 5, 5, WaterClass::wet, 4.0),
                                             rect(2, 10, 10, 20, 20, WaterClass::dry)};
  Raster pred = grid(0.1f);
  for (int r = 0; r < 5; ++r)
    for (int c = 0; c < 5; ++c) pred(r, c) = 0.9f;
  const EvalResult e = evaluate(pred, polys);
  CHECK(e.pixel_accuracy == 1.0);
  CHECK(e.polygon_accuracy == 1.0);
  CHECK(e.pr_pixel.points.size() == 101);
  CHECK(*e.by_width[0].accuracy == 1.0);
  CHECK_THROWS_AS(evaluate(pred, {}), DataError);
  set_log_level(LogLevel::info);
}
