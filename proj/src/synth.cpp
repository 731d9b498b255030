#include "p2s/synth.hpp"

#include "p2s/date.hpp"
#include "p2s/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iterator>

namespace p2s {

namespace {

constexpr double kRefPx = 0.5;
constexpr double kOpticalPx = 3.0;
constexpr double kShadowFactor = 0.35;

// land / water reflectance for blue, green, red, NIR
constexpr std::array<double, 4> kLand = {0.10, 0.15, 0.12, 0.35};
constexpr std::array<double, 4> kWater = {0.08, 0.10, 0.07, 0.05};

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

std::uint64_t hash(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0) {
  return mix(seed ^ mix(a ^ mix(b ^ mix(c))));
}

double unit(std::uint64_t h) { return static_cast<double>(h >> 11) * 0x1.0p-53; }

// Zero-mean, unit-variance Irwin-Hall sample built from one hash.
double gauss(std::uint64_t h) {
  double s = 0;
  for (int i = 0; i < 4; ++i) {
    s += static_cast<double>((h >> (16 * i)) & 0xffffu) / 65536.0;
  }
  return (s - 2.0 + 2.0 / 65536.0) * 1.7320508075688772;
}

// Sequential stream for placement decisions.
struct Stream {
  std::uint64_t state;
  std::uint64_t next() { return mix(state++); }
  double uniform() { return unit(next()); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  long below(long n) { return static_cast<long>(next() % static_cast<std::uint64_t>(n)); }
};

double smooth(double t) { return t * t * (3.0 - 2.0 * t); }

double value_noise(std::uint64_t seed, int octave, double x, double y) {
  const double fx = std::floor(x), fy = std::floor(y);
  const auto i = static_cast<std::int64_t>(fx), j = static_cast<std::int64_t>(fy);
  auto lat = [&](std::int64_t a, std::int64_t b) {
    return 2.0 * unit(hash(seed, 0x444500 + octave, static_cast<std::uint64_t>(a), static_cast<std::uint64_t>(b))) -
           1.0;
  };
  const double u = smooth(x - fx), v = smooth(y - fy);
  const double top = lat(i, j) * (1 - u) + lat(i + 1, j) * u;
  const double bot = lat(i, j + 1) * (1 - u) + lat(i + 1, j + 1) * u;
  return top * (1 - v) + bot * v;
}

int cells(double size_m, double px) { return static_cast<int>(std::floor(size_m / px + 1e-9)); }

double seg_dist(Point p, Point a, Point b) {
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0 ? ((p.x - a.x) * dx + (p.y - a.y) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double ex = p.x - (a.x + t * dx), ey = p.y - (a.y + t * dy);
  return std::sqrt(ex * ex + ey * ey);
}

struct Blob {
  double cx, cy, a, b, ux, uy;
  bool contains(double x, double y, double scale = 1.0) const {
    const double dx = x - cx, dy = y - cy;
    const double p = (dx * ux + dy * uy) / (a * scale), q = (-dx * uy + dy * ux) / (b * scale);
    return p * p + q * q <= 1.0;
  }
};

}  // namespace

void SynthConfig::validate() const {
  if (!(size_m >= 48) || !std::isfinite(size_m)) throw ConfigError("size_m must be at least 48");
  if (!is_multiple(size_m, 1.0)) throw ConfigError("size_m must be a whole number of metres");
  if (wetness_schedule.empty()) throw ConfigError("wetness_schedule must not be empty");
  for (double s : wetness_schedule)
    if (!(s >= 0 && s <= 1)) throw ConfigError("wetness_schedule values must be in [0, 1]");
  if (!(shadow_fraction >= 0 && shadow_fraction <= 1)) throw ConfigError("shadow_fraction must be in [0, 1]");
  if (!(shadow_bias >= 0 && shadow_bias <= 1)) throw ConfigError("shadow_bias must be in [0, 1]");
  if (!(noise_sigma >= 0) || !std::isfinite(noise_sigma)) throw ConfigError("noise_sigma must be >= 0");
  if (!std::isfinite(grade)) throw ConfigError("grade must be finite");
  for (int o = 0; o < 3; ++o) {
    if (!(noise_amplitude_m[o] >= 0)) throw ConfigError("noise amplitudes must be >= 0");
    if (!(noise_spacing_m[o] > 0)) throw ConfigError("noise spacings must be > 0");
  }
  if (!(threshold_m2 > 0)) throw ConfigError("threshold_m2 must be > 0");
  if (!(a_min_m2 > 0)) throw ConfigError("a_min_m2 must be > 0");
  if (n_wet < 0 || n_dry < 0) throw ConfigError("polygon counts must be >= 0");
  if (label_day < 0 || label_day >= static_cast<int>(wetness_schedule.size()))
    throw ConfigError("label_day outside the wetness schedule");
  try {
    validate_date(start_date);
  } catch (const DataError& e) {
    throw ConfigError(std::string("start_date: ") + e.what());
  }
}

Raster generate_dem(const SynthConfig& cfg) {
  cfg.validate();
  const int n = cells(cfg.size_m, 1.0);
  Raster dem(n, n, 1, GeoTransform{0.0, cfg.size_m, 1.0, "synthetic"});
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) {
      const double x = c + 0.5, y_from_south = n - r - 0.5;
      double z = 100.0 + cfg.grade * y_from_south;
      for (int o = 0; o < 3; ++o)
        if (cfg.noise_amplitude_m[o] > 0)
          z += cfg.noise_amplitude_m[o] *
               value_noise(cfg.seed, o, x / cfg.noise_spacing_m[o], (r + 0.5) / cfg.noise_spacing_m[o]);
      dem(r, c) = static_cast<float>(z);
    }
  return dem;
}

double stream_width(double upstream_area_m2) {
  return std::clamp(3.0 * std::sqrt(upstream_area_m2 / 1e4), 1.0, 12.0);
}

std::map<int, bool> flowing_reaches(const ReachNetwork& net, double a_min_m2, double s) {
  std::map<int, bool> out;
  for (const Reach& r : net.reaches) out[r.reach_id] = s > 0 && r.upstream_area_m2 * s >= a_min_m2;
  return out;
}

SynthWatershed make_watershed(const SynthConfig& cfg) {
  cfg.validate();
  SynthWatershed w;
  w.config = cfg;
  w.dem = generate_dem(cfg);
  w.hydro = derive_hydrology(w.dem, cfg.threshold_m2);
  const auto& net = w.hydro.network;
  const GeoTransform& t = w.dem.transform();
  for (const Reach& r : net.reaches) {
    w.width_m[r.reach_id] = stream_width(r.upstream_area_m2);
    auto& line = w.polyline[r.reach_id];
    for (const Cell& c : r.cells) line.push_back({t.col_center_x(c.col), t.row_center_y(c.row)});
    if (r.downstream_id) {
      const Cell& d = net.reach(*r.downstream_id).cells.front();
      line.push_back({t.col_center_x(d.col), t.row_center_y(d.row)});
    }
  }

  // static shadow blobs at 0.5 m and the canopy casting them at 1 m
  const int n2 = cells(cfg.size_m, kRefPx), n1 = w.dem.width();
  w.shadow = Raster(n2, n2, 1, GeoTransform{0.0, cfg.size_m, kRefPx, "synthetic"}, kDefaultNodata, 0.0f);
  Raster hag(w.dem.grid(), 1, kDefaultNodata, 0.0f);
  Stream rng{hash(cfg.seed, 0x5ad0)};
  const long target = std::lround(cfg.shadow_fraction * n2 * double(n2));
  long covered = 0;
  for (int attempt = 0; covered < target && attempt < 100000; ++attempt) {
    Blob b{};
    b.cx = rng.uniform(0, cfg.size_m);
    b.cy = rng.uniform(0, cfg.size_m);
    b.a = rng.uniform(4, 12);
    b.b = b.a * rng.uniform(0.4, 1.0);
    double ux = 0, uy = 0, len = 0;
    do {
      ux = rng.uniform(-1, 1);
      uy = rng.uniform(-1, 1);
      len = std::sqrt(ux * ux + uy * uy);
    } while (len < 1e-3 || len > 1);
    b.ux = ux / len;
    b.uy = uy / len;
    const double height = rng.uniform(8, 20);
    const GeoTransform& st = w.shadow.transform();
    const int c0 = std::max(0, int((b.cx - b.a) / kRefPx)), c1 = std::min(n2 - 1, int((b.cx + b.a) / kRefPx));
    const int r0 = std::max(0, int((st.y_origin - b.cy - b.a) / kRefPx));
    const int r1 = std::min(n2 - 1, int((st.y_origin - b.cy + b.a) / kRefPx));
    for (int r = r0; r <= r1; ++r)
      for (int c = c0; c <= c1; ++c)
        if (w.shadow(r, c) == 0.0f && b.contains(st.col_center_x(c), st.row_center_y(r))) {
          w.shadow(r, c) = 1.0f;
          ++covered;
        }
    for (int r = std::max(0, r0 / 2); r <= std::min(n1 - 1, r1 / 2); ++r)
      for (int c = std::max(0, c0 / 2); c <= std::min(n1 - 1, c1 / 2); ++c)
        if (b.contains(t.col_center_x(c), t.row_center_y(r), 0.6))
          hag(r, c) = std::max(hag(r, c), static_cast<float>(height));
  }
  w.terrain = stack_bands({&w.dem, &net.channel_mask, &w.hydro.distance, &hag});
  return w;
}

std::string day_date(const SynthConfig& cfg, int index) { return add_days(cfg.start_date, index); }

SynthDay generate_day(const SynthWatershed& w, int index) {
  const SynthConfig& cfg = w.config;
  if (index < 0 || index >= static_cast<int>(cfg.wetness_schedule.size()))
    throw ConfigError("day " + std::to_string(index) + " is outside the wetness schedule");
  SynthDay day;
  day.index = index;
  day.date = day_date(cfg, index);
  day.flowing = flowing_reaches(w.hydro.network, cfg.a_min_m2, cfg.wetness_schedule[index]);

  const GridSpec g = w.shadow.grid();
  const GeoTransform& t = g.transform;
  const int n = g.width;
  day.truth = Raster(g, 1, kDefaultNodata, 0.0f);
  day.owner = Raster(g, 1, kDefaultNodata, kDefaultNodata);
  for (const auto& [id, flows] : day.flowing) {
    if (!flows) continue;
    const double width = w.width_m.at(id), hw = width / 2;
    const auto& line = w.polyline.at(id);
    for (std::size_t k = 0; k < line.size(); ++k) {
      const Point a = line[k], b = line[std::min(k + 1, line.size() - 1)];
      if (k + 1 == line.size() && line.size() > 1) break;
      const int c0 = std::max(0, int(std::floor((std::min(a.x, b.x) - hw - t.x_origin) / kRefPx)));
      const int c1 = std::min(n - 1, int(std::floor((std::max(a.x, b.x) + hw - t.x_origin) / kRefPx)));
      const int r0 = std::max(0, int(std::floor((t.y_origin - std::max(a.y, b.y) - hw) / kRefPx)));
      const int r1 = std::min(n - 1, int(std::floor((t.y_origin - std::min(a.y, b.y) + hw) / kRefPx)));
      for (int r = r0; r <= r1; ++r)
        for (int c = c0; c <= c1; ++c) {
          if (seg_dist({t.col_center_x(c), t.row_center_y(r)}, a, b) > hw) continue;
          day.truth(r, c) = 1.0f;
          const float cur = day.owner(r, c);
          if (day.owner.is_nodata(cur) || w.width_m.at(int(cur)) < width ||
              (w.width_m.at(int(cur)) == width && id < int(cur)))
            day.owner(r, c) = static_cast<float>(id);
        }
    }
  }

  // coastal, blue, green, yellow, red, red edge, NIR1, NIR2
  day.reference = Raster(g, 8);
  const std::uint64_t seed = hash(cfg.seed, 0xda7, static_cast<std::uint64_t>(index));
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) {
      const auto& base = day.truth(r, c) == 1.0f ? kWater : kLand;
      const std::array<double, 8> v = {base[kBlue],
                                       base[kBlue],
                                       base[kGreen],
                                       0.5 * (base[kGreen] + base[kRed]),
                                       base[kRed],
                                       0.5 * (base[kRed] + base[kNir]),
                                       base[kNir],
                                       base[kNir]};
      const double shade = w.shadow(r, c) == 1.0f ? kShadowFactor : 1.0;
      const auto idx = static_cast<std::uint64_t>(r) * n + c;
      for (int b = 0; b < 8; ++b) {
        const double noise = cfg.noise_sigma > 0 ? cfg.noise_sigma * gauss(hash(seed, idx, b)) : 0.0;
        day.reference.at(b, r, c) = static_cast<float>(v[b] * shade + noise);
      }
    }

  const int n3 = cells(cfg.size_m, kOpticalPx), span = n3 * int(kOpticalPx / kRefPx);
  Raster four(span, span, 4, t);
  const int src_band[4] = {1, 2, 4, 6};
  for (int b = 0; b < 4; ++b)
    for (int r = 0; r < span; ++r)
      for (int c = 0; c < span; ++c) four.at(b, r, c) = day.reference.at(src_band[b], r, c);
  day.optical = resample(four, kOpticalPx, ResampleMethod::box_average);
  return day;
}

double split_x(const SynthWatershed& w) { return w.shadow.transform().x_origin + w.config.size_m / 2; }

std::vector<AnnotationPolygon> sample_polygons(const SynthWatershed& w, const SynthDay& day, int n_wet, int n_dry,
                                               double shadow_bias, std::uint64_t seed) {
  if (n_wet < 1 || n_dry < 1) throw ConfigError("polygon counts must be >= 1");
  if (!(shadow_bias >= 0 && shadow_bias <= 1)) throw ConfigError("shadow_bias must be in [0, 1]");
  const Raster& truth = day.truth;
  const GeoTransform& t = truth.transform();
  const int n = truth.width(), div = n / 2;
  std::vector<bool> used(static_cast<std::size_t>(n) * n, false);
  std::vector<AnnotationPolygon> out;
  Stream rng{hash(seed, 0x9017)};

  // candidate cells per (half, shadowed); wet cells are grouped by owning
  // reach so that narrow and wide streams are drawn equally often
  std::map<int, std::vector<int>> wet_pool[2][2];
  std::vector<int> dry_pool[2][2];
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) {
      const int half = c >= div, sh = w.shadow(r, c) == 1.0f;
      if (truth(r, c) == 1.0f)
        wet_pool[half][sh][static_cast<int>(day.owner(r, c))].push_back(r * n + c);
      else
        dry_pool[half][sh].push_back(r * n + c);
    }

  auto place = [&](bool wet, int half, bool shadowed) {
    const auto& owners = wet_pool[half][shadowed];
    if (wet ? owners.empty() : dry_pool[half][shadowed].empty()) return false;
    auto draw = [&]() {
      if (!wet) {
        const auto& pool = dry_pool[half][shadowed];
        return pool[static_cast<std::size_t>(rng.below(long(pool.size())))];
      }
      auto it = owners.begin();
      std::advance(it, rng.below(long(owners.size())));
      return it->second[static_cast<std::size_t>(rng.below(long(it->second.size())))];
    };
    const int max_side = wet ? 12 : 24, min_side = wet ? 2 : 4;
    for (int attempt = 0; attempt < 4000; ++attempt) {
      const int cap = std::max(min_side, max_side - attempt / 200);
      const int sw = min_side + int(rng.below(cap - min_side + 1));
      const int sh = min_side + int(rng.below(cap - min_side + 1));
      const int centre = draw();
      const int c0 = centre % n - sw / 2, r0 = centre / n - sh / 2, c1 = c0 + sw, r1 = r0 + sh;
      if (r0 < 0 || c0 < 0 || r1 > n || c1 > n) continue;
      if (half == 0 ? c1 > div : c0 < div) continue;
      bool ok = true;
      for (int r = std::max(0, r0 - 1); ok && r < std::min(n, r1 + 1); ++r)
        for (int c = std::max(0, c0 - 1); ok && c < std::min(n, c1 + 1); ++c)
          if (used[r * n + c]) ok = false;
      for (int r = r0; ok && r < r1; ++r)
        for (int c = c0; ok && c < c1; ++c)
          if ((truth(r, c) == 1.0f) != wet || (shadowed && w.shadow(r, c) != 1.0f)) ok = false;
      if (!ok) continue;
      for (int r = r0; r < r1; ++r)
        for (int c = c0; c < c1; ++c) used[r * n + c] = true;
      AnnotationPolygon p;
      p.id = static_cast<int>(out.size()) + 1;
      const double x0 = t.x_origin + c0 * kRefPx, x1 = t.x_origin + c1 * kRefPx;
      const double yn = t.y_origin - r0 * kRefPx, ys = t.y_origin - r1 * kRefPx;
      p.ring = {{x0, ys}, {x1, ys}, {x1, yn}, {x0, yn}};
      p.label = wet ? WaterClass::wet : WaterClass::dry;
      if (wet) p.width_m = w.width_m.at(int(day.owner(centre / n, centre % n)));
      p.split = half == 0 ? Split::train : Split::test;
      p.aoi = "synthetic";
      out.push_back(std::move(p));
      return true;
    }
    return false;
  };

  for (const bool wet : {true, false}) {
    const int count = wet ? n_wet : n_dry;
    const long shadowed = std::lround(shadow_bias * count);
    for (int k = 0; k < count; ++k) {
      const int half = k % 2;
      const bool in_shadow = k < shadowed;
      if (!place(wet, half, in_shadow))
        throw DataError(std::string("cannot place ") + (wet ? "wet" : "dry") + " polygon " + std::to_string(k + 1) +
                        (in_shadow ? " inside shadow" : "") + " in the " + (half ? "east" : "west") + " half");
    }
  }
  return out;
}

}  // namespace p2s
