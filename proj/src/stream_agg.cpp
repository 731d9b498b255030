#include "p2s/stream_agg.hpp"

#include "p2s/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace p2s {

void AggConfig::validate() const {
  if (!(lambda_m > 0) || !std::isfinite(lambda_m)) throw ConfigError("lambda_m must be positive");
  if (!(d_max_m > 0) || !std::isfinite(d_max_m)) throw ConfigError("d_max_m must be positive");
  if (!(min_coverage > 0) || min_coverage > 1) throw ConfigError("min_coverage must be in (0, 1]");
}

std::size_t StreamTimeSeries::observed(int reach_id) const {
  const auto it = series.find(reach_id);
  if (it == series.end()) return 0;
  std::size_t n = 0;
  for (const auto& rp : it->second) n += rp.probability.has_value();
  return n;
}

std::vector<ReachProbability> reach_probability(const Raster& prob, const ReachNetwork& net, const Raster& dist,
                                                const AggConfig& cfg, const std::string& date) {
  cfg.validate();
  if (!date.empty()) validate_date(date);
  const Raster& catch_r = net.catchment_raster;
  const GridSpec grid = catch_r.grid();
  if (dist.grid() != grid) throw DataError("distance raster grid does not match the catchment grid");
  if (prob.bands() < 1) throw DataError("probability raster has no bands");
  const Raster p = prob.grid() == grid ? prob : sample_onto(prob, grid);

  const std::size_t n = net.reaches.size();
  std::vector<long> eligible(n + 1, 0), seen(n + 1, 0);
  std::vector<double> sw(n + 1, 0.0), swp(n + 1, 0.0), sw2(n + 1, 0.0);
  for (int row = 0; row < grid.height; ++row)
    for (int col = 0; col < grid.width; ++col) {
      const float id = catch_r(row, col);
      if (catch_r.is_nodata(id)) continue;
      const float d = dist(row, col);
      if (dist.is_nodata(d) || d > cfg.d_max_m) continue;
      const auto r = static_cast<std::size_t>(id);
      if (r < 1 || r > n) throw DataError("catchment raster references unknown reach " + std::to_string(r));
      ++eligible[r];
      const float v = p(row, col);
      if (p.is_nodata(v)) continue;
      if (!std::isfinite(v) || v < 0.0f || v > 1.0f) throw DataError("probability outside [0, 1]");
      const double w = std::exp(-static_cast<double>(d) / cfg.lambda_m);
      ++seen[r];
      sw[r] += w;
      swp[r] += w * v;
      sw2[r] += w * w;
    }

  std::vector<ReachProbability> out;
  out.reserve(n);
  for (const Reach& reach : net.reaches) {
    const auto r = static_cast<std::size_t>(reach.reach_id);
    ReachProbability rp;
    rp.reach_id = reach.reach_id;
    rp.date = date;
    rp.coverage = eligible[r] > 0 ? static_cast<double>(seen[r]) / eligible[r] : 0.0;
    if (seen[r] > 0 && sw[r] > 0) {
      rp.weighted_pixel_count = sw[r] * sw[r] / sw2[r];
      if (rp.coverage >= cfg.min_coverage) rp.probability = std::clamp(swp[r] / sw[r], 0.0, 1.0);
    }
    out.push_back(rp);
  }
  return out;
}

StreamTimeSeries build_timeseries(const std::vector<std::pair<std::string, std::vector<ReachProbability>>>& days) {
  StreamTimeSeries ts;
  std::set<std::pair<int, std::string>> keys;
  for (const auto& [date, rows] : days) {
    validate_date(date);
    for (ReachProbability rp : rows) {
      if (!rp.date.empty() && rp.date != date)
        throw DataError("reach " + std::to_string(rp.reach_id) + " carries date " + rp.date + " under day " + date);
      rp.date = date;
      if (!keys.emplace(rp.reach_id, date).second)
        throw DataError("duplicate entry for reach " + std::to_string(rp.reach_id) + " on " + date);
      ts.series[rp.reach_id].push_back(rp);
    }
    if (ts.start.empty() || date < ts.start) ts.start = date;
    if (ts.end.empty() || date > ts.end) ts.end = date;
  }
  // ISO dates order lexicographically
  for (auto& [id, s] : ts.series)
    std::sort(s.begin(), s.end(), [](const auto& a, const auto& b) { return a.date < b.date; });
  return ts;
}

bool Period::contains(const std::string& date) const {
  return (start.empty() || date >= start) && (end.empty() || date <= end);
}

std::map<int, std::optional<double>> flow_frequency(const StreamTimeSeries& ts, double tau, const Period& period) {
  if (!(tau > 0 && tau < 1)) throw ConfigError("tau must be in (0, 1)");
  std::map<int, std::optional<double>> out;
  for (const auto& [id, s] : ts.series) {
    long n = 0, wet = 0;
    for (const auto& rp : s) {
      if (!rp.probability || !period.contains(rp.date)) continue;
      ++n;
      wet += *rp.probability > tau;
    }
    out[id] = n > 0 ? std::optional<double>(static_cast<double>(wet) / n) : std::nullopt;
  }
  return out;
}

std::map<int, std::optional<double>> annual_map(const StreamTimeSeries& ts, int year) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d", year);
  const std::string prefix = buf;
  std::map<int, std::optional<double>> out;
  for (const auto& [id, s] : ts.series) {
    long n = 0;
    double sum = 0;
    for (const auto& rp : s) {
      if (!rp.probability || rp.date.compare(0, 4, prefix) != 0) continue;
      ++n;
      sum += *rp.probability;
    }
    out[id] = n > 0 ? std::optional<double>(sum / n) : std::nullopt;
  }
  return out;
}

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

void write_timeseries_csv(const StreamTimeSeries& ts, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError("cannot write time series '" + path.string() + "'");
  f << "reach_id,date,probability,coverage\n";
  for (const auto& [id, s] : ts.series)
    for (const auto& rp : s)
      f << id << ',' << rp.date << ',' << (rp.probability ? num(*rp.probability) : "") << ',' << num(rp.coverage)
        << '\n';
  if (!f) throw DataError("failed writing time series '" + path.string() + "'");
}

StreamTimeSeries read_timeseries_csv(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open time series '" + path.string() + "'");
  std::string line;
  if (!std::getline(f, line) || line != "reach_id,date,probability,coverage")
    throw DataError("time series '" + path.string() + "' has an unexpected header");
  std::map<std::string, std::vector<ReachProbability>> by_date;
  int lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (line.back() == ',') fields.emplace_back();
    if (fields.size() != 4) throw DataError("time series line " + std::to_string(lineno) + ": expected 4 fields");
    try {
      ReachProbability rp;
      rp.reach_id = std::stoi(fields[0]);
      rp.date = fields[1];
      if (!fields[2].empty()) rp.probability = std::stod(fields[2]);
      rp.coverage = std::stod(fields[3]);
      by_date[rp.date].push_back(rp);
    } catch (const std::logic_error&) {
      throw DataError("time series line " + std::to_string(lineno) + ": malformed number");
    }
  }
  return build_timeseries({by_date.begin(), by_date.end()});
}

void write_reach_values(const ReachNetwork& net, const std::map<int, std::optional<double>>& values,
                        const std::filesystem::path& path) {
  using nlohmann::json;
  const GeoTransform& t = net.catchment_raster.transform();
  json features = json::array();
  for (const Reach& r : net.reaches) {
    json coords = json::array();
    for (const Cell& c : r.cells) coords.push_back({t.col_center_x(c.col), t.row_center_y(c.row)});
    if (r.cells.size() == 1) coords.push_back(coords.front());
    const auto it = values.find(r.reach_id);
    const json value = it != values.end() && it->second ? json(*it->second) : json(nullptr);
    features.push_back({{"type", "Feature"},
                        {"geometry", {{"type", "LineString"}, {"coordinates", coords}}},
                        {"properties", {{"reach_id", r.reach_id}, {"value", value}}}});
  }
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError("cannot write reach values '" + path.string() + "'");
  f << json{{"type", "FeatureCollection"}, {"features", features}}.dump() << '\n';
}

}  // namespace p2s
