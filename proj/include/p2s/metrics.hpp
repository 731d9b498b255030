#pragma once

#include "p2s/raster.hpp"

#include <filesystem>
#include <limits>
#include <optional>
#include <vector>

namespace p2s {

/// Fraction of labelled pixels (label 0/1, nodata elsewhere) where
/// `pred > threshold` agrees with the label. Pixels whose prediction is nodata
/// are skipped. Throws DataError on a grid mismatch or when nothing is left.
double pixel_accuracy(const Raster& pred, const Raster& label, double threshold = 0.5);

enum class PolygonScoring { mean_pixel, majority };

/// Mean over polygons of their per-pixel accuracy (or of a majority vote).
double polygon_accuracy(const Raster& pred, const Raster& label, const Raster& polygon_id, double threshold = 0.5,
                        PolygonScoring scoring = PolygonScoring::mean_pixel);

struct PrPoint {
  double threshold = 0.0;
  std::optional<double> precision;  ///< empty when nothing is predicted wet
  double recall = 0.0;
  bool operator==(const PrPoint&) const = default;
};

struct PrCurve {
  std::vector<PrPoint> points;
  bool single_class = false;  ///< ground truth has no dry pixels
};

/// 101 thresholds 0, 0.01, ..., 1.
std::vector<double> default_thresholds();

/// Precision/recall of the wet class. With `polygon_id`, every pixel is
/// weighted by the inverse of its polygon's labelled pixel count. Thresholds
/// must be strictly increasing. Throws DataError when there are no wet labels.
PrCurve pr_curve(const Raster& pred, const Raster& label, const Raster* polygon_id,
                 const std::vector<double>& thresholds = default_thresholds());

struct WidthBin {
  double lo = 0.0;
  double hi = std::numeric_limits<double>::infinity();
  std::optional<double> accuracy;
  int n_polygons = 0;
};

/// Per-bin polygon accuracy of the wet polygons, binned by width_m over the
/// half-open intervals [edges[i], edges[i+1]); the last bin is open-ended.
/// Polygons without a width are skipped with a warning.
std::vector<WidthBin> width_stratified(const std::vector<AnnotationPolygon>& polys, const Raster& pred,
                                       const std::vector<double>& edges = {0, 5, 10, 20}, double threshold = 0.5);

struct EvalResult {
  double pixel_accuracy = 0.0;
  double polygon_accuracy = 0.0;
  PrCurve pr_pixel;
  PrCurve pr_polygon;
  std::vector<WidthBin> by_width;
};

struct EvalOptions {
  double threshold = 0.5;
  std::vector<double> thresholds = default_thresholds();
  std::vector<double> width_edges = {0, 5, 10, 20};
  PolygonScoring scoring = PolygonScoring::mean_pixel;
};

/// Rasterises `polys` onto the prediction grid and computes every metric.
EvalResult evaluate(const Raster& pred, const std::vector<AnnotationPolygon>& polys, const EvalOptions& opts = {});

void write_eval_report(const EvalResult& r, const std::filesystem::path& json_path);
void write_pr_csv(const PrCurve& c, const std::filesystem::path& path);

}  // namespace p2s
