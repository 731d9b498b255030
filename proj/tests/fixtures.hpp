#pragma once

// Shared test fixtures: deterministic textured fields for registration trials.

#include "p2s/raster.hpp"

#include <cmath>
#include <cstdint>
#include <random>

namespace fixture {

inline std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

/// Continuous multi-octave value noise: bilinear interpolation of random
/// lattice values at several spacings, roughly 1/f like natural scenes.
struct Texture {
  std::uint64_t seed = 1;

  double lattice(int octave, long i, long j) const {
    const std::uint64_t h = mix(seed ^ mix(static_cast<std::uint64_t>(octave) * 1000003ull ^
                                           mix(static_cast<std::uint64_t>(i) * 7919ull ^ static_cast<std::uint64_t>(j))));
    return static_cast<double>(h >> 11) / 9007199254740992.0 - 0.5;
  }

  double operator()(double x, double y) const {
    static const double spacing[4] = {1.3, 2.7, 5.1, 11.0};
    double v = 0;
    for (int o = 0; o < 4; ++o) {
      const double u = x / spacing[o] + 1000.0, w = y / spacing[o] + 1000.0;
      const long i = static_cast<long>(std::floor(u)), j = static_cast<long>(std::floor(w));
      const double fu = u - i, fw = w - j;
      const double a = lattice(o, i, j) * (1 - fu) + lattice(o, i + 1, j) * fu;
      const double b = lattice(o, i, j + 1) * (1 - fu) + lattice(o, i + 1, j + 1) * fu;
      v += std::sqrt(spacing[o]) * (a * (1 - fw) + b * fw);
    }
    return v;
  }
};

/// Samples `tex` on an n x n grid of 1-unit pixels, with content moved by
/// (+dx, +dy) pixels (east, south) and optional Gaussian noise relative to
/// the field's standard deviation.
inline p2s::Raster sample(const Texture& tex, int n, double dx, double dy, double noise = 0.0, unsigned seed = 0,
                          double pixel_size = 1.0) {
  p2s::Raster r(n, n, 1, p2s::GeoTransform{0.0, n * pixel_size, pixel_size, "test"});
  for (int row = 0; row < n; ++row)
    for (int col = 0; col < n; ++col) r(row, col) = static_cast<float>(tex(col - dx, row - dy));
  if (noise > 0) {
    double s = 0, s2 = 0;
    for (float v : r.data()) {
      s += v;
      s2 += double(v) * v;
    }
    const double sd = std::sqrt(s2 / r.data().size() - (s / r.data().size()) * (s / r.data().size()));
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> g(0.0, noise * sd);
    for (float& v : r.data()) v = static_cast<float>(v + g(gen));
  }
  return r;
}

/// Bilinear resampling of a raster's band 0 at (col - dx, row - dy), with edge clamping.
inline p2s::Raster bilinear_shift(const p2s::Raster& src, double dx, double dy) {
  p2s::Raster out = src;
  const int w = src.width(), h = src.height();
  auto at = [&](int r, int c) {
    r = std::clamp(r, 0, h - 1);
    c = std::clamp(c, 0, w - 1);
    return double(src(r, c));
  };
  for (int row = 0; row < h; ++row)
    for (int col = 0; col < w; ++col) {
      const double x = col - dx, y = row - dy;
      const int c0 = static_cast<int>(std::floor(x)), r0 = static_cast<int>(std::floor(y));
      const double fx = x - c0, fy = y - r0;
      out(row, col) = static_cast<float>((at(r0, c0) * (1 - fx) + at(r0, c0 + 1) * fx) * (1 - fy) +
                                         (at(r0 + 1, c0) * (1 - fx) + at(r0 + 1, c0 + 1) * fx) * fy);
    }
  return out;
}

/// Circular roll by whole pixels: content moves (+dx, +dy).
inline p2s::Raster roll(const p2s::Raster& src, int dx, int dy) {
  p2s::Raster out = src;
  const int w = src.width(), h = src.height();
  for (int row = 0; row < h; ++row)
    for (int col = 0; col < w; ++col) out(((row + dy) % h + h) % h, ((col + dx) % w + w) % w) = src(row, col);
  return out;
}

}  // namespace fixture
