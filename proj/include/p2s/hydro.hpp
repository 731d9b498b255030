#pragma once

#include "p2s/raster.hpp"

#include <array>
#include <filesystem>
#include <optional>
#include <vector>

namespace p2s {

/// D8 codes, TauDEM convention: 1 = east, counting counter-clockwise.
/// Index 0 is unused so that kD8[code] works directly.
struct D8Offset {
  int dcol;
  int drow;
};
inline constexpr std::array<D8Offset, 9> kD8 = {{{0, 0},
                                                 {1, 0},    // 1 E
                                                 {1, -1},   // 2 NE
                                                 {0, -1},   // 3 N
                                                 {-1, -1},  // 4 NW
                                                 {-1, 0},   // 5 W
                                                 {-1, 1},   // 6 SW
                                                 {0, 1},    // 7 S
                                                 {1, 1}}};  // 8 SE

inline constexpr float kFillEpsilon = 1e-5f;

struct Cell {
  int col = 0;
  int row = 0;
  bool operator==(const Cell&) const = default;
};

struct Reach {
  int reach_id = 0;
  std::vector<Cell> cells;  ///< upstream to downstream
  std::optional<int> downstream_id;
  std::vector<int> upstream_ids;
  int strahler = 1;
  double catchment_area_m2 = 0.0;  ///< local catchment (cells draining first into this reach)
  double upstream_area_m2 = 0.0;   ///< total contributing area at the reach's last cell
};

struct ReachNetwork {
  std::vector<Reach> reaches;  ///< sorted by reach_id; ids are 1..n
  Raster catchment_raster;     ///< reach id per cell, nodata where no channel is met
  Raster channel_mask;         ///< 1 on channel cells, 0 elsewhere
  double threshold_m2 = 10000.0;

  const Reach& reach(int id) const { return reaches.at(static_cast<std::size_t>(id - 1)); }
  Reach& reach(int id) { return reaches.at(static_cast<std::size_t>(id - 1)); }
};

/// Priority-flood with epsilon increments: removes sinks and flats so every
/// valid cell has a strictly descending path to the grid edge.
Raster fill_sinks(const Raster& dem);

/// Steepest-descent D8 directions (drop / distance, ties to the lowest code).
/// Edge cells without a lower in-grid neighbour point off-grid, along the
/// outward direction whose opposite neighbour rises the most.
Raster flow_direction(const Raster& filled);

/// Cell counts draining through each cell, the cell itself included.
Raster flow_accumulation(const Raster& flow_dir);

ReachNetwork extract_reaches(const Raster& acc, const Raster& flow_dir, double threshold_m2 = 10000.0);

/// Assigns Strahler orders in place of the existing ones.
ReachNetwork strahler_order(ReachNetwork net);

ReachNetwork delineate_catchments(ReachNetwork net, const Raster& flow_dir);

/// Exact Euclidean distance (meters) from each cell centre to the nearest
/// channel-cell centre.
Raster distance_buffer(const Raster& channel_mask);

/// Squared distances in pixel units from the exact two-pass transform, kept
/// in double precision. `feature` is row-major width x height.
std::vector<double> squared_distance_transform(const std::vector<bool>& feature, int width,
                                               int height);

/// Next cell along D8 code `code`, or nullopt when the code leaves the grid.
std::optional<Cell> downstream_cell(const Raster& flow_dir, Cell c);

/// fill -> direction -> accumulation -> reaches -> Strahler -> catchments.
struct HydroProducts {
  Raster filled;
  Raster flow_dir;
  Raster accumulation;
  ReachNetwork network;
  Raster distance;
};
HydroProducts derive_hydrology(const Raster& dem, double threshold_m2 = 10000.0);

/// Reach LineStrings (cell centres) with topology properties.
void write_reach_network(const ReachNetwork& net, const GeoTransform& transform,
                         const std::filesystem::path& path);

/// Reads back reach topology written by write_reach_network. The catchment
/// and channel rasters are loaded separately.
std::vector<Reach> read_reach_network(const std::filesystem::path& path, const GeoTransform& transform);

}  // namespace p2s
