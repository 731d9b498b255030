#include "p2s/raster.hpp"

#include "p2s/error.hpp"
#include "io_util.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace p2s {

using nlohmann::json;

Raster::Raster(int width, int height, int bands, GeoTransform transform, float nodata, float fill)
    : width_(width), height_(height), bands_(bands), transform_(std::move(transform)),
      nodata_(nodata) {
  if (width <= 0 || height <= 0 || bands <= 0) {
    throw DataError("raster dimensions must be positive");
  }
  if (!(transform_.pixel_size > 0.0)) throw DataError("pixel_size must be > 0");
  data_.assign(static_cast<std::size_t>(width) * height * bands, fill);
}

BandMap Raster::band(int b) {
  return BandMap(data_.data() + static_cast<std::size_t>(b) * band_size(), height_, width_);
}

ConstBandMap Raster::band(int b) const {
  return ConstBandMap(data_.data() + static_cast<std::size_t>(b) * band_size(), height_, width_);
}

Raster Raster::select_bands(int first, int count) const {
  if (first < 0 || count <= 0 || first + count > bands_) throw DataError("band range out of bounds");
  Raster out(width_, height_, count, transform_, nodata_);
  std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(first * band_size()), count * band_size(),
              out.data_.begin());
  return out;
}

void Raster::validate() const {
  if (data_.size() != static_cast<std::size_t>(width_) * height_ * bands_) {
    throw DataError("raster data length does not match width x height x bands");
  }
  if (!(transform_.pixel_size > 0.0)) throw DataError("pixel_size must be > 0");
  for (float v : data_) {
    if (!std::isfinite(v) && v != nodata_) throw DataError("raster holds a non-finite value");
  }
}

bool Raster::operator==(const Raster& o) const {
  if (width_ != o.width_ || height_ != o.height_ || bands_ != o.bands_ ||
      !(transform_ == o.transform_)) {
    return false;
  }
  if (std::memcmp(&nodata_, &o.nodata_, sizeof(float)) != 0) return false;
  return data_.size() == o.data_.size() &&
         std::memcmp(data_.data(), o.data_.data(), data_.size() * sizeof(float)) == 0;
}

bool is_multiple(double value, double step) {
  const double q = value / step;
  return std::abs(q - std::round(q)) < 1e-9 * std::max(1.0, std::abs(q));
}

// ---------------------------------------------------------------------------
// File I/O

namespace {

constexpr const char* kRasterMagic = "P2S-R1";

std::string format_float(float v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string format_double(double v) {
  char buf[40];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

Raster read_binary(const std::string& bytes) {
  const auto eol = bytes.find('\n');
  if (eol == std::string::npos) throw DataError("P2S-R1 header is not newline terminated");
  json h;
  try {
    h = json::parse(bytes.substr(0, eol));
  } catch (const json::exception& e) {
    throw DataError(std::string("P2S-R1 header is not valid JSON: ") + e.what());
  }
  if (h.value("magic", "") != kRasterMagic) throw DataError("unsupported format: bad magic");
  GeoTransform t;
  int w = 0, ht = 0, b = 0;
  float nodata = kDefaultNodata;
  try {
    w = h.at("width").get<int>();
    ht = h.at("height").get<int>();
    b = h.at("bands").get<int>();
    t.x_origin = h.at("x_origin").get<double>();
    t.y_origin = h.at("y_origin").get<double>();
    t.pixel_size = h.at("pixel_size").get<double>();
    nodata = h.at("nodata").get<float>();
    t.crs_tag = h.value("crs_tag", "");
  } catch (const json::exception& e) {
    throw DataError(std::string("P2S-R1 header field error: ") + e.what());
  }
  Raster r(w, ht, b, t, nodata);
  const std::size_t expected = r.data().size() * sizeof(float);
  if (bytes.size() - eol - 1 != expected) throw DataError("payload size mismatch");
  detail::read_le_floats(bytes.data() + eol + 1, r.data());
  return r;
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

Raster read_ascii(const std::string& text) {
  std::istringstream in(text);
  int ncols = -1, nrows = -1;
  double xll = 0, yll = 0, cell = 0;
  bool x_center = false, y_center = false;
  float nodata = kDefaultNodata;
  std::string key;
  std::streampos data_start = 0;
  for (;;) {
    data_start = in.tellg();
    if (!(in >> key)) break;
    const std::string k = lower(key);
    if (k == "ncols") in >> ncols;
    else if (k == "nrows") in >> nrows;
    else if (k == "xllcorner") in >> xll;
    else if (k == "yllcorner") in >> yll;
    else if (k == "xllcenter") { in >> xll; x_center = true; }
    else if (k == "yllcenter") { in >> yll; y_center = true; }
    else if (k == "cellsize") in >> cell;
    else if (k == "nodata_value") in >> nodata;
    else break;
  }
  if (ncols <= 0 || nrows <= 0 || !(cell > 0)) throw DataError("ESRI ASCII header incomplete");
  if (x_center) xll -= cell / 2;
  if (y_center) yll -= cell / 2;
  GeoTransform t{xll, yll + nrows * cell, cell, ""};
  Raster r(ncols, nrows, 1, t, nodata);
  in.clear();
  in.seekg(data_start);
  std::size_t i = 0;
  std::string tok;
  while (in >> tok) {
    if (i >= r.data().size()) throw DataError("payload size mismatch");
    float v = 0;
    auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (res.ec != std::errc() || res.ptr != tok.data() + tok.size()) {
      throw DataError("ESRI ASCII: bad value '" + tok + "'");
    }
    r.data()[i++] = v;
  }
  if (i != r.data().size()) throw DataError("payload size mismatch");
  return r;
}

}  // namespace

Raster read_raster(const std::filesystem::path& path) {
  const std::string bytes = detail::read_file(path, "raster");
  const auto first = bytes.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) throw DataError("unsupported format: empty file");
  Raster r;
  if (bytes[first] == '{') {
    r = read_binary(bytes);
  } else if (lower(bytes.substr(first, 5)) == "ncols") {
    r = read_ascii(bytes);
  } else {
    throw DataError("unsupported format: '" + path.string() + "'");
  }
  r.validate();
  return r;
}

void write_raster(const Raster& r, const std::filesystem::path& path, RasterFormat format) {
  r.validate();
  if (format == RasterFormat::ascii && r.bands() != 1) {
    throw DataError("ascii format supports a single band only");
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write raster '" + path.string() + "'");
  const auto& t = r.transform();
  if (format == RasterFormat::binary) {
    json h = {{"magic", kRasterMagic},     {"width", r.width()},
              {"height", r.height()},      {"bands", r.bands()},
              {"x_origin", t.x_origin},    {"y_origin", t.y_origin},
              {"pixel_size", t.pixel_size}, {"nodata", r.nodata()},
              {"crs_tag", t.crs_tag}};
    f << h.dump() << '\n';
    detail::write_le_floats(f, r.data());
  } else {
    f << "ncols " << r.width() << '\n'
      << "nrows " << r.height() << '\n'
      << "xllcorner " << format_double(t.x_origin) << '\n'
      << "yllcorner " << format_double(t.y_origin - r.height() * t.pixel_size) << '\n'
      << "cellsize " << format_double(t.pixel_size) << '\n'
      << "NODATA_value " << format_float(r.nodata()) << '\n';
    for (int row = 0; row < r.height(); ++row) {
      for (int col = 0; col < r.width(); ++col) {
        if (col) f << ' ';
        f << format_float(r(row, col));
      }
      f << '\n';
    }
  }
  if (!f) throw DataError("write failed for '" + path.string() + "'");
}

// ---------------------------------------------------------------------------
// Grid operations

Raster crop(const Raster& r, const Window& w) {
  if (w.col_off < 0 || w.row_off < 0 || w.width <= 0 || w.height <= 0 ||
      w.col_off + w.width > r.width() || w.row_off + w.height > r.height()) {
    throw DataError("window lies outside the raster");
  }
  GeoTransform t = r.transform();
  t.x_origin += w.col_off * t.pixel_size;
  t.y_origin -= w.row_off * t.pixel_size;
  Raster out(w.width, w.height, r.bands(), t, r.nodata());
  for (int b = 0; b < r.bands(); ++b) {
    out.band(b) = r.band(b).block(w.row_off, w.col_off, w.height, w.width);
  }
  return out;
}

Raster stack_bands(const std::vector<const Raster*>& layers) {
  if (layers.empty()) throw DataError("nothing to stack");
  const Raster& first = *layers.front();
  int bands = 0;
  for (const Raster* l : layers) {
    if (!(l->grid() == first.grid())) throw DataError("stacked rasters must share a grid");
    bands += l->bands();
  }
  Raster out(first.grid(), bands, first.nodata());
  int b = 0;
  for (const Raster* l : layers) {
    for (int i = 0; i < l->bands(); ++i, ++b) {
      if (l->nodata() == first.nodata()) {
        out.band(b) = l->band(i);
      } else {
        out.band(b) = (l->band(i) == l->nodata()).select(first.nodata(), l->band(i));
      }
    }
  }
  return out;
}

namespace {

int scaled_dim(int n, double in_px, double out_px) {
  const double exact = n * in_px / out_px;
  const double rounded = std::round(exact);
  if (std::abs(exact - rounded) < 1e-9 * std::max(1.0, exact)) return static_cast<int>(rounded);
  return static_cast<int>(std::floor(exact));
}

}  // namespace

Raster resample(const Raster& r, double out_px, ResampleMethod method) {
  if (!(out_px > 0.0)) throw DataError("out_pixel_size must be > 0");
  const double in_px = r.pixel_size();
  if (out_px == in_px) return r;

  GeoTransform t = r.transform();
  t.pixel_size = out_px;
  const int ow = scaled_dim(r.width(), in_px, out_px);
  const int oh = scaled_dim(r.height(), in_px, out_px);
  if (ow <= 0 || oh <= 0) throw DataError("resample output would be empty");
  Raster out(ow, oh, r.bands(), t, r.nodata());
  const float nd = r.nodata();

  if (method == ResampleMethod::box_average) {
    const bool down = out_px > in_px;
    const double ratio = down ? out_px / in_px : in_px / out_px;
    if (std::abs(ratio - std::round(ratio)) > 1e-9 * ratio) {
      throw DataError("box_average needs an integer pixel-size ratio");
    }
    const int k = static_cast<int>(std::round(ratio));
    if (!down) method = ResampleMethod::nearest;  // replication
    else {
      for (int b = 0; b < r.bands(); ++b) {
        for (int row = 0; row < oh; ++row) {
          for (int col = 0; col < ow; ++col) {
            double sum = 0;
            int n = 0;
            for (int i = 0; i < k; ++i) {
              for (int j = 0; j < k; ++j) {
                const float v = r.at(b, row * k + i, col * k + j);
                if (v != nd) {
                  sum += v;
                  ++n;
                }
              }
            }
            out.at(b, row, col) = n ? static_cast<float>(sum / n) : nd;
          }
        }
      }
      return out;
    }
  }

  const double scale = out_px / in_px;
  if (method == ResampleMethod::nearest) {
    std::vector<int> src_col(ow), src_row(oh);
    for (int c = 0; c < ow; ++c) {
      src_col[c] = std::clamp(static_cast<int>(std::floor((c + 0.5) * scale)), 0, r.width() - 1);
    }
    for (int rr = 0; rr < oh; ++rr) {
      src_row[rr] = std::clamp(static_cast<int>(std::floor((rr + 0.5) * scale)), 0, r.height() - 1);
    }
    for (int b = 0; b < r.bands(); ++b) {
      for (int rr = 0; rr < oh; ++rr) {
        for (int c = 0; c < ow; ++c) out.at(b, rr, c) = r.at(b, src_row[rr], src_col[c]);
      }
    }
    return out;
  }

  // bilinear, renormalised over valid neighbours
  for (int b = 0; b < r.bands(); ++b) {
    for (int rr = 0; rr < oh; ++rr) {
      const double v = std::clamp((rr + 0.5) * scale - 0.5, 0.0, r.height() - 1.0);
      const int r0 = static_cast<int>(std::floor(v));
      const int r1 = std::min(r0 + 1, r.height() - 1);
      const double fy = v - r0;
      for (int c = 0; c < ow; ++c) {
        const double u = std::clamp((c + 0.5) * scale - 0.5, 0.0, r.width() - 1.0);
        const int c0 = static_cast<int>(std::floor(u));
        const int c1 = std::min(c0 + 1, r.width() - 1);
        const double fx = u - c0;
        const float vals[4] = {r.at(b, r0, c0), r.at(b, r0, c1), r.at(b, r1, c0), r.at(b, r1, c1)};
        const double wts[4] = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
        double sum = 0, wsum = 0;
        for (int i = 0; i < 4; ++i) {
          if (vals[i] != nd && wts[i] > 0) {
            sum += wts[i] * vals[i];
            wsum += wts[i];
          }
        }
        out.at(b, rr, c) = wsum > 0 ? static_cast<float>(sum / wsum) : nd;
      }
    }
  }
  return out;
}

Raster sample_onto(const Raster& r, const GridSpec& grid) {
  Raster out(grid, r.bands(), r.nodata(), r.nodata());
  const auto& src = r.transform();
  const double px = grid.transform.pixel_size;
  std::vector<int> src_col(grid.width), src_row(grid.height);
  for (int c = 0; c < grid.width; ++c) {
    const double x = grid.transform.x_origin + (c + 0.5) * px;
    const double f = std::floor((x - src.x_origin) / src.pixel_size);
    src_col[c] = (f >= 0 && f < r.width()) ? static_cast<int>(f) : -1;
  }
  for (int rr = 0; rr < grid.height; ++rr) {
    const double y = grid.transform.y_origin - (rr + 0.5) * px;
    const double f = std::floor((src.y_origin - y) / src.pixel_size);
    src_row[rr] = (f >= 0 && f < r.height()) ? static_cast<int>(f) : -1;
  }
  for (int b = 0; b < r.bands(); ++b) {
    for (int rr = 0; rr < grid.height; ++rr) {
      if (src_row[rr] < 0) continue;
      for (int c = 0; c < grid.width; ++c) {
        if (src_col[c] >= 0) out.at(b, rr, c) = r.at(b, src_row[rr], src_col[c]);
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Polygons

double polygon_area(const std::vector<Point>& ring) {
  double a = 0;
  for (std::size_t i = 0, n = ring.size(); i < n; ++i) {
    const Point& p = ring[i];
    const Point& q = ring[(i + 1) % n];
    a += p.x * q.y - q.x * p.y;
  }
  return std::abs(a) / 2;
}

bool point_in_ring(const std::vector<Point>& ring, double x, double y) {
  bool inside = false;
  for (std::size_t i = 0, j = ring.size() - 1; i < ring.size(); j = i++) {
    const Point& a = ring[i];
    const Point& b = ring[j];
    if ((a.y > y) != (b.y > y) && x < (b.x - a.x) * (y - a.y) / (b.y - a.y) + a.x) {
      inside = !inside;
    }
  }
  return inside;
}

namespace {

void check_ring(const AnnotationPolygon& p) {
  std::vector<Point> distinct;
  for (const Point& v : p.ring) {
    if (std::find(distinct.begin(), distinct.end(), v) == distinct.end()) distinct.push_back(v);
  }
  if (distinct.size() < 3) {
    throw DataError("degenerate ring in polygon " + std::to_string(p.id));
  }
}

}  // namespace

Rasterized rasterize_polygons(const std::vector<AnnotationPolygon>& polys, const GridSpec& grid) {
  Rasterized out{Raster(grid, 1, kDefaultNodata, kDefaultNodata),
                 Raster(grid, 1, kDefaultNodata, kDefaultNodata)};
  const auto& t = grid.transform;
  for (const auto& p : polys) {
    check_ring(p);
    double xmin = p.ring[0].x, xmax = xmin, ymin = p.ring[0].y, ymax = ymin;
    for (const Point& v : p.ring) {
      xmin = std::min(xmin, v.x);
      xmax = std::max(xmax, v.x);
      ymin = std::min(ymin, v.y);
      ymax = std::max(ymax, v.y);
    }
    const int c0 = std::max(0, static_cast<int>(std::floor((xmin - t.x_origin) / t.pixel_size - 0.5)));
    const int c1 = std::min(grid.width - 1,
                            static_cast<int>(std::ceil((xmax - t.x_origin) / t.pixel_size - 0.5)));
    const int r0 = std::max(0, static_cast<int>(std::floor((t.y_origin - ymax) / t.pixel_size - 0.5)));
    const int r1 = std::min(grid.height - 1,
                            static_cast<int>(std::ceil((t.y_origin - ymin) / t.pixel_size - 0.5)));
    const float lab = p.label == WaterClass::wet ? 1.0f : 0.0f;
    for (int row = r0; row <= r1; ++row) {
      const double y = t.row_center_y(row);
      for (int col = c0; col <= c1; ++col) {
        if (point_in_ring(p.ring, t.col_center_x(col), y)) {
          out.label(row, col) = lab;
          out.polygon_id(row, col) = static_cast<float>(p.id);
        }
      }
    }
  }
  return out;
}

std::vector<AnnotationPolygon> read_polygons(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open polygons '" + path.string() + "'");
  json doc;
  try {
    doc = json::parse(f);
  } catch (const json::exception& e) {
    throw DataError("polygon file is not valid JSON: " + std::string(e.what()));
  }
  std::vector<AnnotationPolygon> out;
  try {
    if (doc.at("type") != "FeatureCollection") throw DataError("expected a FeatureCollection");
    for (const auto& feat : doc.at("features")) {
      AnnotationPolygon p;
      const auto& props = feat.at("properties");
      p.id = props.at("id").get<int>();
      const std::string cls = props.at("class").get<std::string>();
      if (cls == "wet") p.label = WaterClass::wet;
      else if (cls == "dry") p.label = WaterClass::dry;
      else throw DataError("polygon " + std::to_string(p.id) + ": class must be wet|dry");
      if (props.contains("width_m") && !props["width_m"].is_null()) {
        p.width_m = props["width_m"].get<double>();
        if (!(*p.width_m > 0)) throw DataError("polygon " + std::to_string(p.id) + ": width_m must be > 0");
      }
      const std::string split = props.value("split", "train");
      if (split == "train") p.split = Split::train;
      else if (split == "test") p.split = Split::test;
      else throw DataError("polygon " + std::to_string(p.id) + ": split must be train|test");
      p.aoi = props.value("aoi", "");
      const auto& geom = feat.at("geometry");
      if (geom.at("type") != "Polygon") throw DataError("only Polygon geometries are supported");
      for (const auto& xy : geom.at("coordinates").at(0)) {
        p.ring.push_back({xy.at(0).get<double>(), xy.at(1).get<double>()});
      }
      if (p.ring.size() > 1 && p.ring.front() == p.ring.back()) p.ring.pop_back();
      check_ring(p);
      out.push_back(std::move(p));
    }
  } catch (const json::exception& e) {
    throw DataError("malformed polygon feature: " + std::string(e.what()));
  }
  return out;
}

void write_polygons(const std::vector<AnnotationPolygon>& polys, const std::filesystem::path& path) {
  json features = json::array();
  for (const auto& p : polys) {
    json ring = json::array();
    for (const Point& v : p.ring) ring.push_back({v.x, v.y});
    if (!p.ring.empty()) ring.push_back({p.ring.front().x, p.ring.front().y});
    json props = {{"id", p.id},
                  {"class", p.label == WaterClass::wet ? "wet" : "dry"},
                  {"width_m", p.width_m ? json(*p.width_m) : json(nullptr)},
                  {"split", p.split == Split::train ? "train" : "test"},
                  {"aoi", p.aoi}};
    features.push_back({{"type", "Feature"},
                        {"geometry", {{"type", "Polygon"}, {"coordinates", json::array({ring})}}},
                        {"properties", props}});
  }
  json doc = {{"type", "FeatureCollection"}, {"features", features}};
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError("cannot write polygons '" + path.string() + "'");
  f << doc.dump() << '\n';
}

// ---------------------------------------------------------------------------
// Tiles

Window geo_window(const Raster& r, Point anchor, double footprint_m) {
  const auto& t = r.transform();
  const double cx = (anchor.x - t.x_origin) / t.pixel_size;
  const double cy = (t.y_origin - anchor.y) / t.pixel_size;
  if (std::abs(cx - std::round(cx)) > 1e-6 || std::abs(cy - std::round(cy)) > 1e-6) {
    throw DataError("tile anchor is not aligned to the raster grid");
  }
  Window w{static_cast<int>(std::round(cx)), static_cast<int>(std::round(cy)),
           static_cast<int>(std::round(footprint_m / t.pixel_size)),
           static_cast<int>(std::round(footprint_m / t.pixel_size))};
  if (w.col_off < 0 || w.row_off < 0 || w.col_off + w.width > r.width() ||
      w.row_off + w.height > r.height()) {
    throw DataError("tile footprint out of bounds");
  }
  return w;
}

TileTriple extract_tile_triple(const Raster& optical, const Raster& terrain, Point anchor,
                               double footprint_m, double output_px_m) {
  if (!(footprint_m > 0) || !is_multiple(footprint_m, optical.pixel_size()) ||
      !is_multiple(footprint_m, terrain.pixel_size()) || !is_multiple(footprint_m, output_px_m)) {
    throw DataError("footprint is not divisible by every pixel size");
  }
  TileTriple tt{crop(optical, geo_window(optical, anchor, footprint_m)),
                crop(terrain, geo_window(terrain, anchor, footprint_m)), {}};
  const int n = static_cast<int>(std::round(footprint_m / output_px_m));
  tt.target = GridSpec{GeoTransform{anchor.x, anchor.y, output_px_m, optical.transform().crs_tag}, n, n};
  return tt;
}

}  // namespace p2s
