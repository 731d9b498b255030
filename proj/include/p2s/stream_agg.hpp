#pragma once

#include "p2s/date.hpp"
#include "p2s/hydro.hpp"
#include "p2s/raster.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace p2s {

struct AggConfig {
  double lambda_m = 5.0;
  double d_max_m = 30.0;
  double min_coverage = 0.3;

  /// Throws ConfigError.
  void validate() const;
};

/// Water probability of one reach on one day. An empty `probability` marks a
/// gap day (coverage below the threshold or no eligible pixels).
struct ReachProbability {
  int reach_id = 0;
  std::string date;
  std::optional<double> probability;
  double weighted_pixel_count = 0.0;  ///< Kish effective sample size (sum w)^2 / sum w^2
  double coverage = 0.0;

  bool operator==(const ReachProbability&) const = default;
};

struct StreamTimeSeries {
  std::map<int, std::vector<ReachProbability>> series;  ///< per reach, dates strictly increasing
  std::string start;
  std::string end;

  /// Number of non-gap entries for a reach.
  std::size_t observed(int reach_id) const;
};

/// Distance-weighted mean of `prob` over each reach's catchment cells within
/// d_max of the channel, with weights exp(-d / lambda). `prob` is resampled
/// (nearest) onto the catchment grid when it lives on a different grid;
/// `dist` must already share that grid.
std::vector<ReachProbability> reach_probability(const Raster& prob, const ReachNetwork& net, const Raster& dist,
                                                const AggConfig& cfg, const std::string& date = "");

/// Groups daily results per reach in date order. Throws DataError on a
/// duplicate (reach, date) or malformed date.
StreamTimeSeries build_timeseries(const std::vector<std::pair<std::string, std::vector<ReachProbability>>>& days);

/// Inclusive date range; empty bounds are open.
struct Period {
  std::string start;
  std::string end;
  bool contains(const std::string& date) const;
};

/// Fraction of non-gap days in `period` with probability > tau. Reaches with
/// no observed day map to nullopt.
std::map<int, std::optional<double>> flow_frequency(const StreamTimeSeries& ts, double tau = 0.5,
                                                    const Period& period = {});

/// Mean probability over the non-gap days of `year`.
std::map<int, std::optional<double>> annual_map(const StreamTimeSeries& ts, int year);

/// CSV with header `reach_id,date,probability,coverage`; gaps leave the
/// probability field empty.
void write_timeseries_csv(const StreamTimeSeries& ts, const std::filesystem::path& path);
StreamTimeSeries read_timeseries_csv(const std::filesystem::path& path);

/// Reach lines as GeoJSON with properties {reach_id, value}; missing values are null.
void write_reach_values(const ReachNetwork& net, const std::map<int, std::optional<double>>& values,
                        const std::filesystem::path& path);

}  // namespace p2s
