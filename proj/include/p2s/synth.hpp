#pragma once

#include "p2s/hydro.hpp"
#include "p2s/raster.hpp"

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace p2s {

/// Optical band order at 3 m and the first four reference bands.
enum OpticalBand { kBlue = 0, kGreen = 1, kRed = 2, kNir = 3 };

struct SynthConfig {
  std::uint64_t seed = 1;
  double size_m = 512.0;
  std::vector<double> wetness_schedule = {1.0, 0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1};
  std::string start_date = "2019-06-01";
  double shadow_fraction = 0.15;
  double noise_sigma = 0.02;
  double grade = 0.005;  ///< southward slope of the base plane
  std::array<double, 3> noise_amplitude_m = {8.0, 4.0, 2.0};
  std::array<double, 3> noise_spacing_m = {128.0, 64.0, 32.0};
  double threshold_m2 = 10000.0;  ///< channel initiation area
  double a_min_m2 = 10000.0;      ///< reach flows on day t iff upstream area >= a_min / s_t
  int n_wet = 93;
  int n_dry = 107;
  double shadow_bias = 0.15;
  int label_day = 0;

  /// Throws ConfigError.
  void validate() const;
};

/// Day-independent part of a synthetic scene.
struct SynthWatershed {
  SynthConfig config;
  Raster dem;                      ///< 1 m
  HydroProducts hydro;             ///< derived from `dem` at config.threshold_m2
  Raster terrain;                  ///< 1 m: DEM, reach mask, distance buffer, HAG
  Raster shadow;                   ///< 0.5 m, 1 inside shadow blobs
  std::map<int, double> width_m;   ///< stream width per reach
  std::map<int, std::vector<Point>> polyline;  ///< cell centres plus the link to the downstream reach
};

struct SynthDay {
  int index = 0;
  std::string date;
  Raster optical;    ///< 3 m, 4 bands (blue, green, red, NIR)
  Raster reference;  ///< 0.5 m, 8 bands
  Raster truth;      ///< 0.5 m, 1 water / 0 land
  Raster owner;      ///< 0.5 m, reach id responsible for water, nodata on land
  std::map<int, bool> flowing;
};

/// Inclined plane plus three octaves of hashed value noise.
Raster generate_dem(const SynthConfig& cfg);

/// width = clamp(3 * sqrt(A_up / 1e4), 1, 12) metres.
double stream_width(double upstream_area_m2);

/// Flowing flags for wetness level `s`.
std::map<int, bool> flowing_reaches(const ReachNetwork& net, double a_min_m2, double s);

SynthWatershed make_watershed(const SynthConfig& cfg);

/// Date of day `index` counted from config.start_date.
std::string day_date(const SynthConfig& cfg, int index);

/// Throws ConfigError when `index` is outside the schedule.
SynthDay generate_day(const SynthWatershed& w, int index);

/// Non-overlapping axis-aligned rectangles on the 0.5 m truth grid: wet ones
/// entirely on water, dry ones entirely on land. Polygons alternate between
/// the west (train) and east (test) halves; none straddles the divider.
/// Throws DataError when a polygon cannot be placed.
std::vector<AnnotationPolygon> sample_polygons(const SynthWatershed& w, const SynthDay& day, int n_wet, int n_dry,
                                               double shadow_bias, std::uint64_t seed);

/// Easting of the train/test divider.
double split_x(const SynthWatershed& w);

}  // namespace p2s
