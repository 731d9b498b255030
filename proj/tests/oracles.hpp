#pragma once

// Brute-force reference implementations used only by tests. Each one follows
// the textbook definition directly and shares no code path with the library.

#include "p2s/hydro.hpp"
#include "p2s/raster.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <vector>

namespace oracle {

inline p2s::Raster random_dem(int w, int h, unsigned seed, double relief = 10.0) {
  std::mt19937 gen(seed);
  std::uniform_real_distribution<double> u(0.0, relief);
  p2s::Raster r(w, h, 1, p2s::GeoTransform{0, static_cast<double>(h), 1.0, "test"});
  for (float& v : r.data()) v = static_cast<float>(u(gen));
  return r;
}

inline bool is_edge(const p2s::Raster& r, int row, int col) {
  if (row == 0 || col == 0 || row == r.height() - 1 || col == r.width() - 1) return true;
  for (int dr = -1; dr <= 1; ++dr)
    for (int dc = -1; dc <= 1; ++dc)
      if (!r.valid(0, row + dr, col + dc)) return true;
  return false;
}

/// Every valid interior cell has a strictly lower 8-neighbour.
inline bool no_sink_certificate(const p2s::Raster& filled) {
  for (int row = 0; row < filled.height(); ++row) {
    for (int col = 0; col < filled.width(); ++col) {
      if (!filled.valid(0, row, col) || is_edge(filled, row, col)) continue;
      bool lower = false;
      for (int dr = -1; dr <= 1 && !lower; ++dr)
        for (int dc = -1; dc <= 1; ++dc)
          if ((dr || dc) && filled(row + dr, col + dc) < filled(row, col)) lower = true;
      if (!lower) return false;
    }
  }
  return true;
}

/// Exhaustive search: can `cell` reach an edge through strictly descending steps?
inline bool has_descending_path(const p2s::Raster& dem, int row, int col) {
  std::vector<bool> seen(dem.band_size(), false);
  std::vector<std::pair<int, int>> stack{{row, col}};
  while (!stack.empty()) {
    auto [r, c] = stack.back();
    stack.pop_back();
    if (is_edge(dem, r, c)) return true;
    for (int dr = -1; dr <= 1; ++dr)
      for (int dc = -1; dc <= 1; ++dc) {
        const int nr = r + dr, nc = c + dc;
        if ((dr || dc) && dem(nr, nc) < dem(r, c) && !seen[nr * dem.width() + nc]) {
          seen[nr * dem.width() + nc] = true;
          stack.push_back({nr, nc});
        }
      }
  }
  return false;
}

/// Steepest-descent argmax over the eight neighbours, written from scratch.
inline int d8_code(const p2s::Raster& z, int row, int col) {
  static const int dc[9] = {0, 1, 1, 0, -1, -1, -1, 0, 1};
  static const int dr[9] = {0, 0, -1, -1, -1, 0, 1, 1, 1};
  auto inside = [&](int r, int c) { return r >= 0 && c >= 0 && r < z.height() && c < z.width() && z.valid(0, r, c); };
  double best = 0, off_best = -1;
  int code = 0, off = 0;
  for (int k = 1; k <= 8; ++k) {
    const int nr = row + dr[k], nc = col + dc[k];
    if (!inside(nr, nc)) {
      // off-grid: mirror the opposite neighbour's rise
      const int orow = row - dr[k], ocol = col - dc[k];
      double rise = inside(orow, ocol) ? double(z(orow, ocol)) - double(z(row, col)) : 0.0;
      if (rise < 0) rise = 0;
      const double s = rise / ((dr[k] && dc[k]) ? std::sqrt(2.0) * z.pixel_size() : z.pixel_size());
      if (s > off_best) {
        off_best = s;
        off = k;
      }
      continue;
    }
    const double dist = (dr[k] && dc[k]) ? std::sqrt(2.0) * z.pixel_size() : z.pixel_size();
    const double s = (double(z(row, col)) - double(z(nr, nc))) / dist;
    if (s > best) {
      best = s;
      code = k;
    }
  }
  return code ? code : off;
}

inline std::optional<std::pair<int, int>> step(const p2s::Raster& fd, int row, int col) {
  static const int dc[9] = {0, 1, 1, 0, -1, -1, -1, 0, 1};
  static const int dr[9] = {0, 0, -1, -1, -1, 0, 1, 1, 1};
  const int k = static_cast<int>(fd(row, col));
  const int nr = row + dr[k], nc = col + dc[k];
  if (nr < 0 || nc < 0 || nr >= fd.height() || nc >= fd.width() || !fd.valid(0, nr, nc)) {
    return std::nullopt;
  }
  return std::make_pair(nr, nc);
}

/// O(n^2) accumulation: walk every cell to the edge, incrementing each visit.
inline std::vector<long> path_walk_accumulation(const p2s::Raster& fd) {
  std::vector<long> acc(fd.band_size(), 0);
  for (int row = 0; row < fd.height(); ++row)
    for (int col = 0; col < fd.width(); ++col) {
      if (!fd.valid(0, row, col)) continue;
      std::optional<std::pair<int, int>> cur = std::make_pair(row, col);
      std::size_t steps = 0;
      while (cur) {
        ++acc[cur->first * fd.width() + cur->second];
        cur = step(fd, cur->first, cur->second);
        if (++steps > fd.band_size()) return {};  // cycle
      }
    }
  return acc;
}

/// Reach id of the first channel cell on each cell's path (0 = none).
inline std::vector<int> path_walk_catchments(const p2s::Raster& fd, const p2s::ReachNetwork& net) {
  std::vector<int> owner(fd.band_size(), 0);
  for (const auto& r : net.reaches)
    for (const auto& c : r.cells) owner[c.row * fd.width() + c.col] = r.reach_id;
  std::vector<int> out(fd.band_size(), 0);
  for (int row = 0; row < fd.height(); ++row)
    for (int col = 0; col < fd.width(); ++col) {
      if (!fd.valid(0, row, col)) continue;
      std::optional<std::pair<int, int>> cur = std::make_pair(row, col);
      while (cur) {
        const int id = owner[cur->first * fd.width() + cur->second];
        if (id) {
          out[row * fd.width() + col] = id;
          break;
        }
        cur = step(fd, cur->first, cur->second);
      }
    }
  return out;
}

/// min over all channel cells of the centre-to-centre distance.
inline std::vector<double> brute_distance(const p2s::Raster& mask) {
  std::vector<std::pair<int, int>> sites;
  for (int row = 0; row < mask.height(); ++row)
    for (int col = 0; col < mask.width(); ++col)
      if (mask(row, col) > 0.5f) sites.push_back({row, col});
  std::vector<double> out(mask.band_size());
  for (int row = 0; row < mask.height(); ++row)
    for (int col = 0; col < mask.width(); ++col) {
      double best = std::numeric_limits<double>::infinity();
      for (auto [r, c] : sites) best = std::min(best, std::hypot(double(row - r), double(col - c)));
      out[row * mask.width() + col] = best * mask.pixel_size();
    }
  return out;
}

/// Recursive Strahler order over an explicit child map.
inline int strahler(int node, const std::map<int, std::vector<int>>& upstream) {
  auto it = upstream.find(node);
  if (it == upstream.end() || it->second.empty()) return 1;
  std::vector<int> orders;
  for (int u : it->second) orders.push_back(strahler(u, upstream));
  int top = 0, n = 0;
  for (int o : orders) top = std::max(top, o);
  for (int o : orders) n += (o == top);
  return n >= 2 ? top + 1 : top;
}

}  // namespace oracle
