#pragma once

#include "p2s/raster.hpp"

#include <vector>

namespace p2s {

/// Result of phase correlation between a reference and a target chip.
///
/// `col_px`/`row_px` follow the registration convention: the translation
/// that moves the target back onto the reference, in grid pixels. When the
/// target content sits (+3, -2) px from the reference this is (-3, +2).
/// `dx_m`/`dy_m` is the map-space translation to add to polygons drawn on the
/// reference so that they line up with the target.
struct ShiftEstimate {
  double col_px = 0.0;
  double row_px = 0.0;
  double dx_m = 0.0;
  double dy_m = 0.0;
  double pixel_size = 1.0;
  double peak_ratio = 1.0;
  bool valid = false;
};

struct CoregOptions {
  int ref_band = 0;
  int target_band = 0;
  double max_shift_m = 20.0;
  int upsample = 10;
  double taper = 0.25;  ///< fraction of each side rolled off by the raised-cosine window
};

/// Phase correlation with local upsampled-DFT refinement. Both rasters are
/// resampled (nearest) to the finer of the two grids over their common
/// footprint, which must coincide.
ShiftEstimate estimate_shift(const Raster& reference, const Raster& target, const CoregOptions& opts = {});

/// Translates every vertex by (dx_m, dy_m). Throws DataError on an invalid estimate.
std::vector<AnnotationPolygon> shift_polygons(const std::vector<AnnotationPolygon>& polys, const ShiftEstimate& s);

struct TileShift {
  Point anchor;     ///< north-west corner
  double size_m = 0;
  ShiftEstimate estimate;
};

/// Per-tile estimates over a grid of square tiles of side `tile_m` (the last
/// row and column are flush with the far edges).
std::vector<TileShift> estimate_tile_shifts(const Raster& reference, const Raster& target, double tile_m,
                                            const CoregOptions& opts = {});

/// Shifts each polygon by the estimate of the tile containing its centroid.
/// Invalid estimates, or polygons outside every tile, get a zero shift and a
/// logged warning.
std::vector<AnnotationPolygon> shift_polygons_by_tile(const std::vector<AnnotationPolygon>& polys,
                                                      const std::vector<TileShift>& tiles);

}  // namespace p2s
