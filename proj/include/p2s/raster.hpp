#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace p2s {

inline constexpr float kDefaultNodata = -9999.0f;

/// North-up affine placement of a raster; (x_origin, y_origin) is the
/// north-west corner of pixel (0, 0).
struct GeoTransform {
  double x_origin = 0.0;
  double y_origin = 0.0;
  double pixel_size = 1.0;
  std::string crs_tag;

  bool operator==(const GeoTransform&) const = default;

  double col_center_x(double col) const { return x_origin + (col + 0.5) * pixel_size; }
  double row_center_y(double row) const { return y_origin - (row + 0.5) * pixel_size; }
};

/// A transform plus dimensions: the pixel lattice a raster lives on.
struct GridSpec {
  GeoTransform transform;
  int width = 0;
  int height = 0;

  bool operator==(const GridSpec&) const = default;

  double extent_x() const { return width * transform.pixel_size; }
  double extent_y() const { return height * transform.pixel_size; }
};

using BandMap = Eigen::Map<Eigen::Array<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstBandMap =
    Eigen::Map<const Eigen::Array<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

/// Multi-band 32-bit raster, band-sequential and row-major within a band.
/// Row 0 is the northern-most row.
class Raster {
 public:
  Raster() = default;
  Raster(int width, int height, int bands, GeoTransform transform, float nodata = kDefaultNodata,
         float fill = 0.0f);
  Raster(const GridSpec& grid, int bands, float nodata = kDefaultNodata, float fill = 0.0f)
      : Raster(grid.width, grid.height, bands, grid.transform, nodata, fill) {}

  int width() const { return width_; }
  int height() const { return height_; }
  int bands() const { return bands_; }
  const GeoTransform& transform() const { return transform_; }
  GeoTransform& transform() { return transform_; }
  float nodata() const { return nodata_; }
  double pixel_size() const { return transform_.pixel_size; }
  GridSpec grid() const { return {transform_, width_, height_}; }
  std::size_t band_size() const { return static_cast<std::size_t>(width_) * height_; }

  const std::vector<float>& data() const { return data_; }
  std::vector<float>& data() { return data_; }

  float& at(int band, int row, int col) { return data_[index(band, row, col)]; }
  float at(int band, int row, int col) const { return data_[index(band, row, col)]; }
  float& operator()(int row, int col) { return at(0, row, col); }
  float operator()(int row, int col) const { return at(0, row, col); }

  bool is_nodata(float v) const { return v == nodata_; }
  bool valid(int band, int row, int col) const { return at(band, row, col) != nodata_; }
  bool in_bounds(int row, int col) const {
    return row >= 0 && col >= 0 && row < height_ && col < width_;
  }

  BandMap band(int b);
  ConstBandMap band(int b) const;

  /// Extracts bands [first, first + count) into a new raster.
  Raster select_bands(int first, int count) const;

  /// Throws DataError when the size or finiteness invariants fail.
  void validate() const;

  bool operator==(const Raster& other) const;

 private:
  std::size_t index(int band, int row, int col) const {
    return (static_cast<std::size_t>(band) * height_ + row) * width_ + col;
  }

  int width_ = 0;
  int height_ = 0;
  int bands_ = 0;
  GeoTransform transform_;
  float nodata_ = kDefaultNodata;
  std::vector<float> data_;
};

/// Pixel window inside a parent raster.
struct Window {
  int col_off = 0;
  int row_off = 0;
  int width = 0;
  int height = 0;
};

enum class RasterFormat { binary, ascii };
enum class ResampleMethod { nearest, bilinear, box_average };

Raster read_raster(const std::filesystem::path& path);
void write_raster(const Raster& r, const std::filesystem::path& path,
                  RasterFormat format = RasterFormat::binary);

Raster crop(const Raster& r, const Window& w);

/// Stacks single- or multi-band rasters on the same grid into one raster.
Raster stack_bands(const std::vector<const Raster*>& layers);

/// Resamples onto a grid with the same origin and `out_pixel_size`.
/// box_average requires an integer ratio; downsampling averages the valid
/// pixels of each block, upsampling replicates.
Raster resample(const Raster& r, double out_pixel_size, ResampleMethod method);

/// Nearest-neighbour lookup of `r` onto an arbitrary north-up grid. Cells
/// falling outside `r` are nodata.
Raster sample_onto(const Raster& r, const GridSpec& grid);

enum class WaterClass { dry = 0, wet = 1 };
enum class Split { train, test };

struct Point {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Point&) const = default;
};

/// Wet/dry annotation polygon. `ring` is stored open (first vertex is not
/// repeated at the end); readers accept closed rings and drop the repeat.
struct AnnotationPolygon {
  int id = 0;
  std::vector<Point> ring;
  WaterClass label = WaterClass::dry;
  std::optional<double> width_m;
  Split split = Split::train;
  std::string aoi;

  bool operator==(const AnnotationPolygon&) const = default;
};

double polygon_area(const std::vector<Point>& ring);

/// Even-odd point-in-polygon test.
bool point_in_ring(const std::vector<Point>& ring, double x, double y);

struct Rasterized {
  Raster label;       ///< 1 wet, 0 dry, nodata unlabeled
  Raster polygon_id;  ///< id of the covering polygon, nodata elsewhere
};

/// Pixel-centre rasterisation. Later polygons overwrite earlier ones.
Rasterized rasterize_polygons(const std::vector<AnnotationPolygon>& polys, const GridSpec& grid);

std::vector<AnnotationPolygon> read_polygons(const std::filesystem::path& path);
void write_polygons(const std::vector<AnnotationPolygon>& polys, const std::filesystem::path& path);

/// Square window of side `size_m` whose north-west corner is `anchor`.
/// The anchor must sit on a pixel corner and the window inside the raster.
Window geo_window(const Raster& r, Point anchor, double size_m);

/// Co-footprint inputs for one training/inference tile.
struct TileTriple {
  Raster optical;
  Raster terrain;
  GridSpec target;
};

/// Cuts optical and terrain tiles whose north-west corner is `anchor` and
/// whose side is `footprint_m`, plus the matching output grid.
TileTriple extract_tile_triple(const Raster& optical, const Raster& terrain, Point anchor,
                               double footprint_m, double output_px_m = 0.5);

/// True when `value` is an integer multiple of `step` up to round-off.
bool is_multiple(double value, double step);

}  // namespace p2s
