#pragma once

#include "p2s/coregister.hpp"
#include "p2s/error.hpp"
#include "p2s/model.hpp"
#include "p2s/stream_agg.hpp"
#include "p2s/synth.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace p2s {

/// Strict reader over a JSON object: every key must be consumed before
/// finish(), and type mismatches raise ConfigError naming the full key path.
class JsonReader {
 public:
  JsonReader(const nlohmann::json& j, std::string path);

  bool has(const std::string& key) const { return obj_.contains(key); }

  template <typename T>
  void get(const std::string& key, T& out) {
    if (!obj_.contains(key)) return;
    seen_.insert(key);
    try {
      out = obj_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(where(key) + ": unexpected type " + std::string(obj_.at(key).type_name()));
    }
  }

  /// Nested object; a missing key yields an empty object.
  JsonReader child(const std::string& key);
  const nlohmann::json& raw(const std::string& key);
  std::string where(const std::string& key) const;

  /// Throws ConfigError on keys that were never read.
  void finish() const;

 private:
  nlohmann::json obj_;
  std::string path_;
  std::set<std::string> seen_;
};

struct TrainSection {
  TrainOptions options = [] {
    TrainOptions o;
    o.flips = true;
    return o;
  }();
  int tiles = 200;
};

/// Pipeline model settings. The network defaults are scaled down from
/// NetConfig's so a full synthetic run trains in minutes on one core.
struct ModelSection {
  Variant variant = Variant::wassernetz;
  NetConfig net = [] {
    NetConfig c;
    c.optical_channels = 4;
    c.base_channels = 8;
    c.footprint_m = 96.0;
    return c;
  }();
  int time_window = 1;
};

struct OpticalInput {
  std::string date;
  std::filesystem::path path;
};

struct PipelineInputs {
  std::filesystem::path dem;
  std::filesystem::path terrain;
  std::vector<OpticalInput> optical;
  std::filesystem::path polygons;
  std::string label_date;
  std::filesystem::path reference;  ///< optional, enables co-registration of polygons
  std::filesystem::path model;      ///< optional pre-trained weights; skips training
};

struct PipelineConfig {
  std::uint64_t seed = 1;
  std::optional<SynthConfig> synth;  ///< generate inputs when `inputs` is absent
  std::optional<PipelineInputs> inputs;
  double threshold_m2 = 10000.0;
  ModelSection model;
  TrainSection train;
  bool coregister = false;
  CoregOptions coreg;
  double coreg_tile_m = 96.0;
  AggConfig aggregate;
  double tau = 0.5;
  std::optional<int> year;  ///< annual map year; defaults to the first day's year
  int jobs = 1;
};

nlohmann::json read_json_file(const std::filesystem::path& path);

SynthConfig parse_synth(JsonReader r);
AggConfig parse_aggregate(JsonReader r);
CoregOptions parse_coregister(JsonReader r);
ModelSection parse_model(JsonReader r);
TrainSection parse_train(JsonReader r);
PipelineConfig parse_pipeline(const nlohmann::json& j, const std::filesystem::path& base_dir = {});

nlohmann::json to_json(const SynthConfig& c);
nlohmann::json to_json(const AggConfig& c);
nlohmann::json to_json(const CoregOptions& c);
nlohmann::json to_json(const ModelSection& m);
nlohmann::json to_json(const TrainSection& t);
nlohmann::json to_json(const PipelineConfig& c);

/// Seed from P2S_SEED when set, else `fallback`. Throws ConfigError on a
/// malformed value.
std::uint64_t seed_override(std::uint64_t fallback);

}  // namespace p2s
