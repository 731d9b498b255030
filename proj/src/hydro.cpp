#include "p2s/hydro.hpp"

#include "p2s/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <fstream>
#include <limits>
#include <queue>

namespace p2s {

namespace {

bool on_edge(const Raster& r, int row, int col) {
  if (row == 0 || col == 0 || row == r.height() - 1 || col == r.width() - 1) return true;
  for (int code = 1; code <= 8; ++code) {
    if (!r.valid(0, row + kD8[code].drow, col + kD8[code].dcol)) return true;
  }
  return false;
}

void require_single_band(const Raster& r, const char* what) {
  if (r.bands() != 1) throw DataError(std::string(what) + " must be single-band");
}

}  // namespace

std::optional<Cell> downstream_cell(const Raster& fd, Cell c) {
  const float v = fd(c.row, c.col);
  if (v == fd.nodata()) return std::nullopt;
  const int code = static_cast<int>(v);
  if (code < 1 || code > 8) return std::nullopt;
  Cell n{c.col + kD8[code].dcol, c.row + kD8[code].drow};
  if (!fd.in_bounds(n.row, n.col) || fd(n.row, n.col) == fd.nodata()) return std::nullopt;
  return n;
}

Raster fill_sinks(const Raster& dem) {
  require_single_band(dem, "DEM");
  Raster out = dem;
  const int w = dem.width(), h = dem.height();
  struct Entry {
    float z;
    std::uint64_t seq;
    int idx;
    bool operator>(const Entry& o) const { return z != o.z ? z > o.z : seq > o.seq; }
  };
  std::priority_queue<Entry, std::vector<Entry>, std::greater<>> open;
  std::vector<bool> closed(static_cast<std::size_t>(w) * h, false);
  std::uint64_t seq = 0;
  bool any_valid = false;
  for (int row = 0; row < h; ++row) {
    for (int col = 0; col < w; ++col) {
      if (!dem.valid(0, row, col)) continue;
      any_valid = true;
      if (on_edge(dem, row, col)) {
        const int i = row * w + col;
        closed[i] = true;
        open.push({out(row, col), seq++, i});
      }
    }
  }
  if (!any_valid) throw DataError("DEM is entirely nodata");

  while (!open.empty()) {
    const Entry e = open.top();
    open.pop();
    const int row = e.idx / w, col = e.idx % w;
    const float zc = out(row, col);
    for (int code = 1; code <= 8; ++code) {
      const int nr = row + kD8[code].drow, nc = col + kD8[code].dcol;
      if (!out.in_bounds(nr, nc) || !out.valid(0, nr, nc)) continue;
      const int ni = nr * w + nc;
      if (closed[ni]) continue;
      closed[ni] = true;
      float& zn = out(nr, nc);
      if (zn <= zc) {
        float raised = zc + kFillEpsilon;
        if (raised <= zc) raised = std::nextafter(zc, std::numeric_limits<float>::infinity());
        zn = raised;
      }
      open.push({zn, seq++, ni});
    }
  }
  return out;
}

Raster flow_direction(const Raster& filled) {
  require_single_band(filled, "filled DEM");
  const int w = filled.width(), h = filled.height();
  Raster fd(filled.grid(), 1, kDefaultNodata, kDefaultNodata);
  const double px = filled.pixel_size();
  const double diag = px * std::sqrt(2.0);
  for (int row = 0; row < h; ++row) {
    for (int col = 0; col < w; ++col) {
      if (!filled.valid(0, row, col)) continue;
      const double zc = filled(row, col);
      double best = 0.0;
      int best_code = 0;
      int off_grid_code = 0;
      double off_grid_best = -1.0;
      for (int code = 1; code <= 8; ++code) {
        const int nr = row + kD8[code].drow, nc = col + kD8[code].dcol;
        if (!filled.in_bounds(nr, nc) || !filled.valid(0, nr, nc)) {
          // outlets follow the slope extrapolated from the opposite neighbour
          const int orow = row - kD8[code].drow, ocol = col - kD8[code].dcol;
          const double rise = filled.in_bounds(orow, ocol) && filled.valid(0, orow, ocol)
                                  ? std::max(0.0, static_cast<double>(filled(orow, ocol)) - zc)
                                  : 0.0;
          const double s = rise / ((code % 2) ? px : diag);
          if (s > off_grid_best) {
            off_grid_best = s;
            off_grid_code = code;
          }
          continue;
        }
        const double slope = (zc - filled(nr, nc)) / ((code % 2) ? px : diag);
        if (slope > best) {
          best = slope;
          best_code = code;
        }
      }
      if (best_code) {
        fd(row, col) = static_cast<float>(best_code);
      } else if (off_grid_code) {
        fd(row, col) = static_cast<float>(off_grid_code);
      } else {
        throw DataError("sink at row " + std::to_string(row) + ", col " + std::to_string(col) +
                        ": fill the DEM first");
      }
    }
  }
  return fd;
}

Raster flow_accumulation(const Raster& fd) {
  require_single_band(fd, "flow direction");
  const int w = fd.width(), h = fd.height();
  const std::size_t n = static_cast<std::size_t>(w) * h;
  std::vector<int> indeg(n, 0);
  std::vector<int> next(n, -1);
  std::size_t valid = 0;
  for (int row = 0; row < h; ++row) {
    for (int col = 0; col < w; ++col) {
      if (!fd.valid(0, row, col)) continue;
      ++valid;
      if (auto d = downstream_cell(fd, {col, row})) {
        next[row * w + col] = d->row * w + d->col;
        ++indeg[next[row * w + col]];
      }
    }
  }
  std::vector<double> acc(n, 1.0);
  std::deque<int> ready;
  for (std::size_t i = 0; i < n; ++i) {
    if (fd.data()[i] != fd.nodata() && indeg[i] == 0) ready.push_back(static_cast<int>(i));
  }
  std::size_t done = 0;
  while (!ready.empty()) {
    const int i = ready.front();
    ready.pop_front();
    ++done;
    if (next[i] >= 0) {
      acc[next[i]] += acc[i];
      if (--indeg[next[i]] == 0) ready.push_back(next[i]);
    }
  }
  if (done != valid) throw NumericError("cycle detected in flow directions");
  Raster out(fd.grid(), 1, kDefaultNodata, kDefaultNodata);
  for (std::size_t i = 0; i < n; ++i) {
    if (fd.data()[i] != fd.nodata()) out.data()[i] = static_cast<float>(acc[i]);
  }
  return out;
}

ReachNetwork extract_reaches(const Raster& acc, const Raster& fd, double threshold_m2) {
  if (!(threshold_m2 > 0)) throw ConfigError("threshold_m2 must be > 0");
  if (!(acc.grid() == fd.grid())) throw DataError("accumulation and flow direction grids differ");
  const int w = acc.width(), h = acc.height();
  const double cell_area = acc.pixel_size() * acc.pixel_size();
  ReachNetwork net;
  net.threshold_m2 = threshold_m2;
  net.channel_mask = Raster(acc.grid(), 1, kDefaultNodata, 0.0f);
  net.catchment_raster = Raster(acc.grid(), 1, kDefaultNodata, kDefaultNodata);

  std::vector<bool> channel(static_cast<std::size_t>(w) * h, false);
  bool any = false;
  for (std::size_t i = 0; i < channel.size(); ++i) {
    const float a = acc.data()[i];
    if (a != acc.nodata() && static_cast<double>(a) * cell_area >= threshold_m2) {
      channel[i] = true;
      net.channel_mask.data()[i] = 1.0f;
      any = true;
    }
  }
  if (!any) throw DataError("no channel cells: threshold exceeds the largest contributing area");

  auto channel_down = [&](Cell c) -> std::optional<Cell> {
    auto d = downstream_cell(fd, c);
    if (d && channel[d->row * w + d->col]) return d;
    return std::nullopt;
  };

  std::vector<int> inflow(channel.size(), 0);
  for (int row = 0; row < h; ++row) {
    for (int col = 0; col < w; ++col) {
      if (!channel[row * w + col]) continue;
      if (auto d = channel_down({col, row})) ++inflow[d->row * w + d->col];
    }
  }
  std::vector<int> start_id(channel.size(), 0);
  int next_id = 1;
  std::vector<Cell> starts;
  for (int row = 0; row < h; ++row) {
    for (int col = 0; col < w; ++col) {
      const int i = row * w + col;
      if (channel[i] && inflow[i] != 1) {
        start_id[i] = next_id++;
        starts.push_back({col, row});
      }
    }
  }
  for (const Cell& s : starts) {
    Reach r;
    r.reach_id = start_id[s.row * w + s.col];
    Cell cur = s;
    r.cells.push_back(cur);
    for (;;) {
      auto d = channel_down(cur);
      if (!d) break;
      const int di = d->row * w + d->col;
      if (inflow[di] != 1) {
        r.downstream_id = start_id[di];
        break;
      }
      cur = *d;
      r.cells.push_back(cur);
    }
    r.upstream_area_m2 = static_cast<double>(acc(cur.row, cur.col)) * cell_area;
    for (const Cell& c : r.cells) net.catchment_raster(c.row, c.col) = static_cast<float>(r.reach_id);
    net.reaches.push_back(std::move(r));
  }
  for (const Reach& r : net.reaches) {
    if (r.downstream_id) net.reach(*r.downstream_id).upstream_ids.push_back(r.reach_id);
  }
  for (Reach& r : net.reaches) std::sort(r.upstream_ids.begin(), r.upstream_ids.end());
  return net;
}

ReachNetwork strahler_order(ReachNetwork net) {
  const std::size_t n = net.reaches.size();
  std::vector<int> pending(n);
  std::deque<int> ready;
  for (const Reach& r : net.reaches) {
    pending[r.reach_id - 1] = static_cast<int>(r.upstream_ids.size());
    if (r.upstream_ids.empty()) ready.push_back(r.reach_id);
  }
  std::size_t done = 0;
  while (!ready.empty()) {
    Reach& r = net.reach(ready.front());
    ready.pop_front();
    ++done;
    int top = 0, count = 0;
    for (int u : r.upstream_ids) {
      const int o = net.reach(u).strahler;
      if (o > top) {
        top = o;
        count = 1;
      } else if (o == top) {
        ++count;
      }
    }
    r.strahler = r.upstream_ids.empty() ? 1 : (count >= 2 ? top + 1 : top);
    if (r.downstream_id && --pending[*r.downstream_id - 1] == 0) ready.push_back(*r.downstream_id);
  }
  if (done != n) throw DataError("reach graph contains a cycle");
  return net;
}

ReachNetwork delineate_catchments(ReachNetwork net, const Raster& fd) {
  if (!(net.catchment_raster.grid() == fd.grid())) throw DataError("network and flow grid differ");
  const int w = fd.width(), h = fd.height();
  constexpr int kUnknown = -2, kNone = -1;
  std::vector<int> label(static_cast<std::size_t>(w) * h, kUnknown);
  for (const Reach& r : net.reaches) {
    for (const Cell& c : r.cells) label[c.row * w + c.col] = r.reach_id;
  }
  std::vector<int> path;
  for (int row = 0; row < h; ++row) {
    for (int col = 0; col < w; ++col) {
      if (!fd.valid(0, row, col)) {
        label[row * w + col] = kNone;
        continue;
      }
      path.clear();
      Cell cur{col, row};
      int result = kNone;
      for (;;) {
        const int i = cur.row * w + cur.col;
        if (label[i] != kUnknown) {
          result = label[i];
          break;
        }
        path.push_back(i);
        auto d = downstream_cell(fd, cur);
        if (!d) break;
        cur = *d;
      }
      for (int i : path) label[i] = result;
    }
  }
  const double cell_area = fd.pixel_size() * fd.pixel_size();
  std::vector<double> area(net.reaches.size(), 0.0);
  for (std::size_t i = 0; i < label.size(); ++i) {
    if (label[i] > 0) {
      net.catchment_raster.data()[i] = static_cast<float>(label[i]);
      area[label[i] - 1] += cell_area;
    } else {
      net.catchment_raster.data()[i] = net.catchment_raster.nodata();
    }
  }
  for (Reach& r : net.reaches) r.catchment_area_m2 = area[r.reach_id - 1];
  return net;
}

// Felzenszwalb & Huttenlocher lower envelope of parabolas, restricted to
// finite sites so the result stays exact in integers.
namespace {

void edt_1d(const double* f, int n, std::ptrdiff_t stride, double* out, std::vector<int>& v,
            std::vector<double>& z) {
  constexpr double kInf = std::numeric_limits<double>::infinity();
  v.assign(n, 0);
  z.assign(n + 1, 0.0);
  int k = -1;
  for (int q = 0; q < n; ++q) {
    const double fq = f[q * stride];
    if (fq == kInf) continue;
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -kInf;
      z[1] = kInf;
      continue;
    }
    auto intersect = [&](int p) {
      return ((fq + double(q) * q) - (f[p * stride] + double(p) * p)) / (2.0 * (q - p));
    };
    double s = intersect(v[k]);
    while (s <= z[k]) s = intersect(v[--k]);
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kInf;
  }
  if (k < 0) {
    for (int q = 0; q < n; ++q) out[q * stride] = kInf;
    return;
  }
  int j = 0;
  for (int q = 0; q < n; ++q) {
    while (z[j + 1] < q) ++j;
    const double d = q - v[j];
    out[q * stride] = d * d + f[v[j] * stride];
  }
}

}  // namespace

std::vector<double> squared_distance_transform(const std::vector<bool>& feature, int width,
                                               int height) {
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> f(feature.size());
  for (std::size_t i = 0; i < f.size(); ++i) f[i] = feature[i] ? 0.0 : kInf;
  std::vector<double> tmp(f.size());
  std::vector<int> v;
  std::vector<double> z;
  for (int col = 0; col < width; ++col) edt_1d(f.data() + col, height, width, tmp.data() + col, v, z);
  for (int row = 0; row < height; ++row) {
    edt_1d(tmp.data() + static_cast<std::ptrdiff_t>(row) * width, width, 1,
           f.data() + static_cast<std::ptrdiff_t>(row) * width, v, z);
  }
  return f;
}

Raster distance_buffer(const Raster& channel_mask) {
  require_single_band(channel_mask, "channel mask");
  std::vector<bool> feature(channel_mask.band_size());
  bool any = false;
  for (std::size_t i = 0; i < feature.size(); ++i) {
    const float v = channel_mask.data()[i];
    feature[i] = v != channel_mask.nodata() && v > 0.5f;
    any = any || feature[i];
  }
  if (!any) throw DataError("channel mask is empty");
  const auto d2 = squared_distance_transform(feature, channel_mask.width(), channel_mask.height());
  Raster out(channel_mask.grid(), 1, kDefaultNodata);
  const double px = channel_mask.pixel_size();
  for (std::size_t i = 0; i < d2.size(); ++i) out.data()[i] = static_cast<float>(std::sqrt(d2[i]) * px);
  return out;
}

HydroProducts derive_hydrology(const Raster& dem, double threshold_m2) {
  HydroProducts p;
  p.filled = fill_sinks(dem);
  p.flow_dir = flow_direction(p.filled);
  p.accumulation = flow_accumulation(p.flow_dir);
  p.network = extract_reaches(p.accumulation, p.flow_dir, threshold_m2);
  p.network = strahler_order(std::move(p.network));
  p.network = delineate_catchments(std::move(p.network), p.flow_dir);
  p.distance = distance_buffer(p.network.channel_mask);
  return p;
}

// ---------------------------------------------------------------------------

void write_reach_network(const ReachNetwork& net, const GeoTransform& t,
                         const std::filesystem::path& path) {
  using nlohmann::json;
  json features = json::array();
  for (const Reach& r : net.reaches) {
    json coords = json::array();
    for (const Cell& c : r.cells) coords.push_back({t.col_center_x(c.col), t.row_center_y(c.row)});
    if (r.cells.size() == 1) coords.push_back(coords.front());
    json props = {{"reach_id", r.reach_id},
                  {"strahler", r.strahler},
                  {"downstream_id", r.downstream_id ? json(*r.downstream_id) : json(nullptr)},
                  {"upstream_ids", r.upstream_ids},
                  {"catchment_area_m2", r.catchment_area_m2},
                  {"upstream_area_m2", r.upstream_area_m2}};
    features.push_back({{"type", "Feature"},
                        {"geometry", {{"type", "LineString"}, {"coordinates", coords}}},
                        {"properties", props}});
  }
  json doc = {{"type", "FeatureCollection"},
              {"threshold_m2", net.threshold_m2},
              {"features", features}};
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError("cannot write reach network '" + path.string() + "'");
  f << doc.dump() << '\n';
}

std::vector<Reach> read_reach_network(const std::filesystem::path& path, const GeoTransform& t) {
  using nlohmann::json;
  std::ifstream f(path);
  if (!f) throw DataError("cannot open reach network '" + path.string() + "'");
  std::vector<Reach> out;
  try {
    const json doc = json::parse(f);
    for (const auto& feat : doc.at("features")) {
      const auto& p = feat.at("properties");
      Reach r;
      r.reach_id = p.at("reach_id").get<int>();
      r.strahler = p.at("strahler").get<int>();
      if (!p.at("downstream_id").is_null()) r.downstream_id = p.at("downstream_id").get<int>();
      r.upstream_ids = p.at("upstream_ids").get<std::vector<int>>();
      r.catchment_area_m2 = p.at("catchment_area_m2").get<double>();
      r.upstream_area_m2 = p.value("upstream_area_m2", 0.0);
      for (const auto& xy : feat.at("geometry").at("coordinates")) {
        Cell c{static_cast<int>(std::floor((xy.at(0).get<double>() - t.x_origin) / t.pixel_size)),
               static_cast<int>(std::floor((t.y_origin - xy.at(1).get<double>()) / t.pixel_size))};
        if (r.cells.empty() || !(r.cells.back() == c)) r.cells.push_back(c);
      }
      out.push_back(std::move(r));
    }
  } catch (const json::exception& e) {
    throw DataError("malformed reach network: " + std::string(e.what()));
  }
  std::sort(out.begin(), out.end(), [](const Reach& a, const Reach& b) { return a.reach_id < b.reach_id; });
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (out[i].reach_id != static_cast<int>(i) + 1) throw DataError("reach ids must be 1..n");
  }
  return out;
}

}  // namespace p2s
