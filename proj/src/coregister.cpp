#include "p2s/coregister.hpp"

#include "p2s/error.hpp"
#include "p2s/log.hpp"

#include <Eigen/Core>
#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <numbers>

namespace p2s {

namespace {

using cd = std::complex<double>;
using CMat = Eigen::Matrix<cd, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

std::vector<double> tukey(int n, double taper) {
  std::vector<double> w(n, 1.0);
  if (taper <= 0) return w;
  const double edge = std::min(taper, 0.5);
  for (int i = 0; i < n; ++i) {
    const double x = (i + 0.5) / n;
    const double d = std::min(x, 1.0 - x);
    if (d < edge) w[i] = 0.5 - 0.5 * std::cos(std::numbers::pi * d / edge);
  }
  return w;
}

RMat chip(const Raster& r, int band, double taper) {
  RMat m(r.height(), r.width());
  double sum = 0;
  long n = 0;
  for (int row = 0; row < r.height(); ++row)
    for (int col = 0; col < r.width(); ++col) {
      const float v = r.at(band, row, col);
      if (r.is_nodata(v)) continue;
      sum += v;
      ++n;
    }
  if (n == 0) throw DataError("correlation chip has no valid pixels");
  const double mean = sum / n;
  double var = 0;
  for (int row = 0; row < r.height(); ++row)
    for (int col = 0; col < r.width(); ++col) {
      const float v = r.at(band, row, col);
      m(row, col) = r.is_nodata(v) ? 0.0 : v - mean;
      var += m(row, col) * m(row, col);
    }
  if (var / n < 1e-20) throw DataError("correlation chip is constant");
  const auto wr = tukey(r.height(), taper), wc = tukey(r.width(), taper);
  for (int row = 0; row < r.height(); ++row)
    for (int col = 0; col < r.width(); ++col) m(row, col) *= wr[row] * wc[col];
  return m;
}

CMat fft2(const CMat& in, bool inverse) {
  Eigen::FFT<double> fft;
  const int rows = static_cast<int>(in.rows()), cols = static_cast<int>(in.cols());
  CMat out(rows, cols);
  std::vector<cd> src, dst;
  src.resize(cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) src[c] = in(r, c);
    inverse ? fft.inv(dst, src) : fft.fwd(dst, src);
    for (int c = 0; c < cols; ++c) out(r, c) = dst[c];
  }
  src.resize(rows);
  for (int c = 0; c < cols; ++c) {
    for (int r = 0; r < rows; ++r) src[r] = out(r, c);
    inverse ? fft.inv(dst, src) : fft.fwd(dst, src);
    for (int r = 0; r < rows; ++r) out(r, c) = dst[r];
  }
  return out;
}

// numpy.fft.fftfreq(n, d)
double fftfreq(int k, int n, double d) {
  const int kk = k < (n + 1) / 2 ? k : k - n;
  return kk / (n * d);
}

// Kernel rows i = 0..ups-1: exp(-2 pi i (i - offset) f_k).
CMat dft_kernel(int n, int ups, double factor, double offset) {
  CMat k(ups, n);
  for (int i = 0; i < ups; ++i)
    for (int j = 0; j < n; ++j) {
      const double a = -2.0 * std::numbers::pi * (i - offset) * fftfreq(j, n, factor);
      k(i, j) = cd(std::cos(a), std::sin(a));
    }
  return k;
}

Raster on_grid(const Raster& r, const GridSpec& g) {
  if (r.grid() == g) return r;
  return sample_onto(r, g);
}

}  // namespace

ShiftEstimate estimate_shift(const Raster& reference, const Raster& target, const CoregOptions& opts) {
  if (opts.upsample < 1) throw ConfigError("upsample must be >= 1");
  if (!(opts.max_shift_m > 0)) throw ConfigError("max_shift_m must be positive");
  if (opts.ref_band < 0 || opts.ref_band >= reference.bands() || opts.target_band < 0 ||
      opts.target_band >= target.bands()) {
    throw DataError("correlation band index out of range");
  }
  const auto& rt = reference.transform();
  const auto& tt = target.transform();
  const double tol = 1e-6 * std::max(1.0, reference.grid().extent_x());
  if (std::abs(rt.x_origin - tt.x_origin) > tol || std::abs(rt.y_origin - tt.y_origin) > tol ||
      std::abs(reference.grid().extent_x() - target.grid().extent_x()) > tol ||
      std::abs(reference.grid().extent_y() - target.grid().extent_y()) > tol) {
    throw DataError("reference and target footprints differ");
  }
  const double ps = std::min(reference.pixel_size(), target.pixel_size());
  const GridSpec g{GeoTransform{rt.x_origin, rt.y_origin, ps, rt.crs_tag},
                   static_cast<int>(std::lround(reference.grid().extent_x() / ps)),
                   static_cast<int>(std::lround(reference.grid().extent_y() / ps))};
  const RMat a = chip(on_grid(reference, g), opts.ref_band, opts.taper);
  const RMat b = chip(on_grid(target, g), opts.target_band, opts.taper);
  const int rows = g.height, cols = g.width;

  CMat fa = fft2(a.cast<cd>(), false);
  CMat fb = fft2(b.cast<cd>(), false);
  CMat prod = fa.cwiseProduct(fb.conjugate());
  const double floor_mag = 100 * std::numeric_limits<double>::epsilon();
  for (Eigen::Index i = 0; i < prod.size(); ++i) prod.data()[i] /= std::max(std::abs(prod.data()[i]), floor_mag);
  const CMat cc = fft2(prod, true);
  const RMat mag = cc.cwiseAbs();

  Eigen::Index pr = 0, pc = 0;
  const double peak = mag.maxCoeff(&pr, &pc);
  double second = 0;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      int dr = std::abs(r - static_cast<int>(pr)), dc = std::abs(c - static_cast<int>(pc));
      dr = std::min(dr, rows - dr);
      dc = std::min(dc, cols - dc);
      if (dr <= 1 && dc <= 1) continue;
      second = std::max(second, mag(r, c));
    }

  double sr = static_cast<double>(pr), sc = static_cast<double>(pc);
  if (sr > rows / 2) sr -= rows;
  if (sc > cols / 2) sc -= cols;

  if (opts.upsample > 1) {
    const double u = opts.upsample;
    const int region = static_cast<int>(std::ceil(u * 1.5));
    const double dftshift = std::floor(region / 2.0);
    const CMat kr = dft_kernel(rows, region, u, dftshift - sr * u);
    const CMat kc = dft_kernel(cols, region, u, dftshift - sc * u);
    const CMat up = (kr * prod.conjugate() * kc.transpose()).conjugate();
    Eigen::Index ur = 0, uc = 0;
    up.cwiseAbs().maxCoeff(&ur, &uc);
    sr += (static_cast<double>(ur) - dftshift) / u;
    sc += (static_cast<double>(uc) - dftshift) / u;
  }

  ShiftEstimate s;
  s.col_px = sc;
  s.row_px = sr;
  s.pixel_size = ps;
  s.dx_m = -sc * ps;
  s.dy_m = sr * ps;
  s.peak_ratio = second > 0 ? std::min(peak / second, 1e6) : 1e6;
  const double lim = opts.max_shift_m + 1e-9;
  s.valid = std::abs(s.dx_m) <= lim && std::abs(s.dy_m) <= lim;
  return s;
}

std::vector<AnnotationPolygon> shift_polygons(const std::vector<AnnotationPolygon>& polys, const ShiftEstimate& s) {
  if (!s.valid) throw DataError("cannot shift polygons by an invalid estimate");
  std::vector<AnnotationPolygon> out = polys;
  for (auto& p : out)
    for (auto& v : p.ring) {
      v.x += s.dx_m;
      v.y += s.dy_m;
    }
  return out;
}

namespace {

std::vector<double> tile_starts(double extent, double tile) {
  std::vector<double> out;
  if (extent <= tile + 1e-9) return {0.0};
  for (double p = 0; p + tile < extent - 1e-9; p += tile) out.push_back(p);
  out.push_back(extent - tile);
  return out;
}

}  // namespace

std::vector<TileShift> estimate_tile_shifts(const Raster& reference, const Raster& target, double tile_m,
                                            const CoregOptions& opts) {
  if (!(tile_m > 0)) throw ConfigError("tile size must be positive");
  const double coarse = std::max(reference.pixel_size(), target.pixel_size());
  if (!is_multiple(tile_m, reference.pixel_size()) || !is_multiple(tile_m, target.pixel_size())) {
    throw ConfigError("tile size must be a multiple of both pixel sizes");
  }
  const double ex = reference.grid().extent_x(), ey = reference.grid().extent_y();
  const auto& t = reference.transform();
  std::vector<TileShift> out;
  for (double oy : tile_starts(ey, tile_m))
    for (double ox : tile_starts(ex, tile_m)) {
      const double size = std::min({tile_m, ex, ey});
      // keep anchors on the coarser lattice
      const double ax = std::floor(ox / coarse + 1e-9) * coarse, ay = std::floor(oy / coarse + 1e-9) * coarse;
      const Point anchor{t.x_origin + ax, t.y_origin - ay};
      TileShift ts{anchor, size, {}};
      const Raster rc = crop(reference, geo_window(reference, anchor, size));
      const Raster tc = crop(target, geo_window(target, anchor, size));
      try {
        ts.estimate = estimate_shift(rc, tc, opts);
      } catch (const DataError& e) {
        log_warn(std::string("tile shift estimate failed: ") + e.what());
        ts.estimate.valid = false;
      }
      out.push_back(ts);
    }
  return out;
}

std::vector<AnnotationPolygon> shift_polygons_by_tile(const std::vector<AnnotationPolygon>& polys,
                                                      const std::vector<TileShift>& tiles) {
  std::vector<AnnotationPolygon> out = polys;
  for (auto& p : out) {
    double cx = 0, cy = 0;
    for (const auto& v : p.ring) {
      cx += v.x;
      cy += v.y;
    }
    cx /= static_cast<double>(p.ring.size());
    cy /= static_cast<double>(p.ring.size());
    const TileShift* hit = nullptr;
    for (const auto& t : tiles) {
      if (cx >= t.anchor.x && cx < t.anchor.x + t.size_m && cy <= t.anchor.y && cy > t.anchor.y - t.size_m) {
        hit = &t;
        break;
      }
    }
    if (!hit || !hit->estimate.valid) {
      log_warn("polygon " + std::to_string(p.id) + ": no valid shift estimate, keeping it in place");
      continue;
    }
    for (auto& v : p.ring) {
      v.x += hit->estimate.dx_m;
      v.y += hit->estimate.dy_m;
    }
  }
  return out;
}

}  // namespace p2s
