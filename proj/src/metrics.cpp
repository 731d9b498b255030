#include "p2s/metrics.hpp"

#include "p2s/error.hpp"
#include "p2s/log.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

namespace p2s {

namespace {

struct Labelled {
  float pred;
  bool wet;
  int polygon;  ///< -1 when no polygon raster is given
};

std::vector<Labelled> gather(const Raster& pred, const Raster& label, const Raster* polygon_id) {
  if (pred.grid() != label.grid()) throw DataError("prediction and label grids differ");
  if (polygon_id && polygon_id->grid() != label.grid()) throw DataError("polygon id and label grids differ");
  std::vector<Labelled> out;
  for (int r = 0; r < label.height(); ++r)
    for (int c = 0; c < label.width(); ++c) {
      const float l = label(r, c);
      const float p = pred(r, c);
      if (label.is_nodata(l) || pred.is_nodata(p)) continue;
      if (l != 0.0f && l != 1.0f) throw DataError("labels must be 0 or 1");
      if (!std::isfinite(p)) throw DataError("non-finite prediction");
      int id = -1;
      if (polygon_id) {
        const float v = (*polygon_id)(r, c);
        if (polygon_id->is_nodata(v)) throw DataError("labelled pixel without a polygon id");
        id = static_cast<int>(v);
      }
      out.push_back({p, l == 1.0f, id});
    }
  if (out.empty()) throw DataError("no labelled pixels to evaluate");
  return out;
}

struct PolyStats {
  long n = 0;
  long correct = 0;
};

std::map<int, PolyStats> polygon_stats(const std::vector<Labelled>& px, double threshold) {
  std::map<int, PolyStats> s;
  for (const auto& p : px) {
    auto& st = s[p.polygon];
    ++st.n;
    st.correct += (p.pred > threshold) == p.wet;
  }
  return s;
}

// Mean of per-polygon accuracies. Each polygon is weighted by n_ref / n so
// that equal-sized polygons reduce to the plain pixel ratio without rounding.
std::optional<double> mean_polygon_accuracy(const std::map<int, PolyStats>& stats, PolygonScoring scoring) {
  if (stats.empty()) return std::nullopt;
  if (scoring == PolygonScoring::majority) {
    long good = 0;
    for (const auto& [id, s] : stats) good += 2 * s.correct > s.n;
    return static_cast<double>(good) / static_cast<double>(stats.size());
  }
  long n_ref = 0;
  for (const auto& [id, s] : stats) n_ref = std::max(n_ref, s.n);
  double num = 0;
  for (const auto& [id, s] : stats) num += s.n == n_ref ? double(s.correct) : double(s.correct) * n_ref / s.n;
  return num / (static_cast<double>(stats.size()) * n_ref);
}

}  // namespace

double pixel_accuracy(const Raster& pred, const Raster& label, double threshold) {
  const auto px = gather(pred, label, nullptr);
  long correct = 0;
  for (const auto& p : px) correct += (p.pred > threshold) == p.wet;
  return static_cast<double>(correct) / static_cast<double>(px.size());
}

double polygon_accuracy(const Raster& pred, const Raster& label, const Raster& polygon_id, double threshold,
                        PolygonScoring scoring) {
  return *mean_polygon_accuracy(polygon_stats(gather(pred, label, &polygon_id), threshold), scoring);
}

std::vector<double> default_thresholds() {
  std::vector<double> t(101);
  for (int i = 0; i <= 100; ++i) t[i] = i / 100.0;
  return t;
}

PrCurve pr_curve(const Raster& pred, const Raster& label, const Raster* polygon_id,
                 const std::vector<double>& thresholds) {
  if (thresholds.empty()) throw ConfigError("no PR thresholds");
  for (std::size_t i = 1; i < thresholds.size(); ++i)
    if (!(thresholds[i] > thresholds[i - 1])) throw ConfigError("PR thresholds must be strictly increasing");
  const auto px = gather(pred, label, polygon_id);

  std::vector<double> w(px.size(), 1.0);
  if (polygon_id) {
    std::map<int, long> count;
    for (const auto& p : px) ++count[p.polygon];
    long n_ref = 0;
    for (const auto& [id, n] : count) n_ref = std::max(n_ref, n);
    for (std::size_t i = 0; i < px.size(); ++i) {
      const long n = count[px[i].polygon];
      w[i] = n == n_ref ? 1.0 : static_cast<double>(n_ref) / n;
    }
  }
  double wet_total = 0;
  bool any_dry = false;
  for (std::size_t i = 0; i < px.size(); ++i) {
    if (px[i].wet) wet_total += w[i];
    any_dry |= !px[i].wet;
  }
  if (wet_total == 0) throw DataError("PR curve needs wet ground truth");

  PrCurve out;
  out.single_class = !any_dry;
  for (double t : thresholds) {
    double tp = 0, pp = 0;
    for (std::size_t i = 0; i < px.size(); ++i) {
      if (!(px[i].pred > t)) continue;
      pp += w[i];
      if (px[i].wet) tp += w[i];
    }
    PrPoint pt;
    pt.threshold = t;
    if (pp > 0) pt.precision = tp / pp;
    pt.recall = tp / wet_total;
    out.points.push_back(pt);
  }
  return out;
}

std::vector<WidthBin> width_stratified(const std::vector<AnnotationPolygon>& polys, const Raster& pred,
                                       const std::vector<double>& edges, double threshold) {
  if (edges.empty()) throw ConfigError("no width bin edges");
  for (std::size_t i = 1; i < edges.size(); ++i)
    if (!(edges[i] > edges[i - 1])) throw ConfigError("width bin edges must be strictly increasing");
  std::vector<AnnotationPolygon> wet;
  for (const auto& p : polys) {
    if (p.label != WaterClass::wet) continue;
    if (!p.width_m) {
      log_warn("polygon " + std::to_string(p.id) + " has no width and is left out of width stratification");
      continue;
    }
    wet.push_back(p);
  }
  const Rasterized ras = rasterize_polygons(wet, pred.grid());
  std::map<int, PolyStats> stats;
  for (int r = 0; r < pred.height(); ++r)
    for (int c = 0; c < pred.width(); ++c) {
      const float id = ras.polygon_id(r, c);
      const float p = pred(r, c);
      if (ras.polygon_id.is_nodata(id) || pred.is_nodata(p)) continue;
      auto& s = stats[static_cast<int>(id)];
      ++s.n;
      s.correct += p > threshold;
    }

  std::vector<WidthBin> bins;
  for (std::size_t i = 0; i < edges.size(); ++i) {
    WidthBin b;
    b.lo = edges[i];
    if (i + 1 < edges.size()) b.hi = edges[i + 1];
    std::map<int, PolyStats> in_bin;
    for (const auto& p : wet) {
      if (*p.width_m < b.lo || *p.width_m >= b.hi) continue;
      const auto it = stats.find(p.id);
      if (it == stats.end()) continue;  // covers no pixel centre
      in_bin[p.id] = it->second;
    }
    b.n_polygons = static_cast<int>(in_bin.size());
    b.accuracy = mean_polygon_accuracy(in_bin, PolygonScoring::mean_pixel);
    bins.push_back(b);
  }
  return bins;
}

EvalResult evaluate(const Raster& pred, const std::vector<AnnotationPolygon>& polys, const EvalOptions& opts) {
  if (polys.empty()) throw DataError("no polygons to evaluate");
  const Rasterized ras = rasterize_polygons(polys, pred.grid());
  EvalResult r;
  r.pixel_accuracy = pixel_accuracy(pred, ras.label, opts.threshold);
  r.polygon_accuracy = polygon_accuracy(pred, ras.label, ras.polygon_id, opts.threshold, opts.scoring);
  r.pr_pixel = pr_curve(pred, ras.label, nullptr, opts.thresholds);
  r.pr_polygon = pr_curve(pred, ras.label, &ras.polygon_id, opts.thresholds);
  r.by_width = width_stratified(polys, pred, opts.width_edges, opts.threshold);
  return r;
}

namespace {

nlohmann::json curve_json(const PrCurve& c) {
  nlohmann::json pts = nlohmann::json::array();
  for (const auto& p : c.points)
    pts.push_back({{"threshold", p.threshold},
                   {"precision", p.precision ? nlohmann::json(*p.precision) : nlohmann::json(nullptr)},
                   {"recall", p.recall}});
  return {{"single_class", c.single_class}, {"points", pts}};
}

}  // namespace

void write_eval_report(const EvalResult& r, const std::filesystem::path& json_path) {
  using nlohmann::json;
  json bins = json::array();
  for (const auto& b : r.by_width)
    bins.push_back({{"lo", b.lo},
                    {"hi", std::isinf(b.hi) ? json(nullptr) : json(b.hi)},
                    {"polygon_accuracy", b.accuracy ? json(*b.accuracy) : json(nullptr)},
                    {"n_polygons", b.n_polygons}});
  const json doc = {{"pixel_accuracy", r.pixel_accuracy},
                    {"polygon_accuracy", r.polygon_accuracy},
                    {"pr_pixel", curve_json(r.pr_pixel)},
                    {"pr_polygon", curve_json(r.pr_polygon)},
                    {"by_width", bins}};
  std::ofstream f(json_path, std::ios::trunc);
  if (!f) throw DataError("cannot write report '" + json_path.string() + "'");
  f << doc.dump(2) << '\n';
}

void write_pr_csv(const PrCurve& c, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError("cannot write PR curve '" + path.string() + "'");
  f << "threshold,precision,recall\n";
  char buf[96];
  for (const auto& p : c.points) {
    if (p.precision)
      std::snprintf(buf, sizeof buf, "%.9g,%.9g,%.9g\n", p.threshold, *p.precision, p.recall);
    else
      std::snprintf(buf, sizeof buf, "%.9g,,%.9g\n", p.threshold, p.recall);
    f << buf;
  }
}

}  // namespace p2s
