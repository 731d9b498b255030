#include "p2s/config.hpp"

#include "p2s/error.hpp"

#include <cstdlib>
#include <fstream>

namespace p2s {

using nlohmann::json;

JsonReader::JsonReader(const json& j, std::string path) : obj_(j), path_(std::move(path)) {
  if (obj_.is_null()) obj_ = json::object();
  if (!obj_.is_object()) throw ConfigError((path_.empty() ? std::string("config") : path_) + ": expected an object");
}

std::string JsonReader::where(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

JsonReader JsonReader::child(const std::string& key) {
  if (!obj_.contains(key)) return JsonReader(json::object(), where(key));
  seen_.insert(key);
  return JsonReader(obj_.at(key), where(key));
}

const json& JsonReader::raw(const std::string& key) {
  seen_.insert(key);
  return obj_.at(key);
}

void JsonReader::finish() const {
  for (const auto& [key, value] : obj_.items())
    if (!seen_.count(key)) throw ConfigError("unknown key '" + where(key) + "'");
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config '" + path.string() + "'");
  try {
    return json::parse(f);
  } catch (const json::parse_error& e) {
    throw ConfigError("config '" + path.string() + "' is not valid JSON: " + e.what());
  }
}

namespace {

void require(bool ok, const JsonReader& r, const std::string& key, const std::string& what) {
  if (!ok) throw ConfigError(r.where(key) + ": " + what);
}

template <typename Fn>
void rethrow_as(const JsonReader& r, Fn&& fn) {
  try {
    fn();
  } catch (const ConfigError& e) {
    throw ConfigError(r.where("") + e.what());
  }
}

}  // namespace

SynthConfig parse_synth(JsonReader r) {
  SynthConfig c;
  r.get("seed", c.seed);
  r.get("size_m", c.size_m);
  r.get("wetness_schedule", c.wetness_schedule);
  r.get("start_date", c.start_date);
  r.get("shadow_fraction", c.shadow_fraction);
  r.get("noise_sigma", c.noise_sigma);
  r.get("grade", c.grade);
  r.get("noise_amplitude_m", c.noise_amplitude_m);
  r.get("noise_spacing_m", c.noise_spacing_m);
  r.get("threshold_m2", c.threshold_m2);
  r.get("a_min_m2", c.a_min_m2);
  r.get("n_wet", c.n_wet);
  r.get("n_dry", c.n_dry);
  r.get("shadow_bias", c.shadow_bias);
  r.get("label_day", c.label_day);
  r.finish();
  rethrow_as(r, [&] { c.validate(); });
  return c;
}

AggConfig parse_aggregate(JsonReader r) {
  AggConfig c;
  r.get("lambda_m", c.lambda_m);
  r.get("d_max_m", c.d_max_m);
  r.get("min_coverage", c.min_coverage);
  r.finish();
  rethrow_as(r, [&] { c.validate(); });
  return c;
}

CoregOptions parse_coregister(JsonReader r) {
  CoregOptions c;
  r.get("ref_band", c.ref_band);
  r.get("target_band", c.target_band);
  r.get("max_shift_m", c.max_shift_m);
  r.get("upsample", c.upsample);
  r.get("taper", c.taper);
  r.finish();
  require(c.ref_band >= 0 && c.target_band >= 0, r, "ref_band", "band indices must be >= 0");
  require(c.max_shift_m > 0, r, "max_shift_m", "must be positive");
  require(c.upsample >= 1, r, "upsample", "must be >= 1");
  require(c.taper >= 0 && c.taper <= 0.5, r, "taper", "must be in [0, 0.5]");
  return c;
}

ModelSection parse_model(JsonReader r) {
  ModelSection m;
  std::string variant = to_string(m.variant);
  int bands = 4;
  r.get("variant", variant);
  r.get("bands", bands);
  r.get("time_window", m.time_window);
  r.get("terrain_channels", m.net.terrain_channels);
  r.get("base_channels", m.net.base_channels);
  r.get("encoder_levels", m.net.encoder_levels);
  r.get("footprint_m", m.net.footprint_m);
  r.get("optical_px_m", m.net.optical_px_m);
  r.get("terrain_px_m", m.net.terrain_px_m);
  r.get("output_px_m", m.net.output_px_m);
  r.get("seed", m.net.seed);
  r.finish();
  try {
    m.variant = variant_from_string(variant);
  } catch (const ConfigError& e) {
    throw ConfigError(r.where("variant") + ": " + e.what());
  }
  require(bands >= 1, r, "bands", "must be >= 1");
  require(m.time_window >= 1, r, "time_window", "must be >= 1");
  m.net.optical_channels = bands * m.time_window;
  rethrow_as(r, [&] { validate(m.net, m.variant); });
  return m;
}

TrainSection parse_train(JsonReader r) {
  TrainSection t;
  std::string weighting = "per_polygon";
  r.get("epochs", t.options.epochs);
  r.get("batch_size", t.options.batch_size);
  r.get("learning_rate", t.options.learning_rate);
  r.get("seed", t.options.seed);
  r.get("weighting", weighting);
  r.get("flips", t.options.flips);
  r.get("tiles", t.tiles);
  r.finish();
  require(t.options.epochs >= 1, r, "epochs", "must be >= 1");
  require(t.options.batch_size >= 1, r, "batch_size", "must be >= 1");
  require(t.options.learning_rate > 0, r, "learning_rate", "must be positive");
  require(t.tiles >= 1, r, "tiles", "must be >= 1");
  if (weighting == "per_polygon")
    t.options.weighting = nn::LossWeighting::per_polygon;
  else if (weighting == "per_pixel")
    t.options.weighting = nn::LossWeighting::per_pixel;
  else
    throw ConfigError(r.where("weighting") + ": expected per_polygon or per_pixel");
  return t;
}

namespace {

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

PipelineInputs parse_inputs(JsonReader r, const std::filesystem::path& base) {
  PipelineInputs in;
  std::string dem, terrain, polygons, reference, model;
  r.get("dem", dem);
  r.get("terrain", terrain);
  r.get("polygons", polygons);
  r.get("label_date", in.label_date);
  r.get("reference", reference);
  r.get("model", model);
  if (r.has("optical")) {
    const json& arr = r.raw("optical");
    if (!arr.is_array()) throw ConfigError(r.where("optical") + ": expected an array");
    for (std::size_t i = 0; i < arr.size(); ++i) {
      JsonReader item(arr[i], r.where("optical") + "[" + std::to_string(i) + "]");
      std::string date, path;
      item.get("date", date);
      item.get("path", path);
      item.finish();
      if (date.empty() || path.empty()) throw ConfigError(item.where("") + "date and path are required");
      try {
        validate_date(date);
      } catch (const DataError& e) {
        throw ConfigError(item.where("date") + ": " + e.what());
      }
      in.optical.push_back({date, resolve(base, path)});
    }
  }
  r.finish();
  require(!dem.empty(), r, "dem", "required");
  require(!in.optical.empty(), r, "optical", "at least one day is required");
  require(!polygons.empty() || !model.empty(), r, "polygons", "required unless a model is given");
  in.dem = resolve(base, dem);
  if (!terrain.empty()) in.terrain = resolve(base, terrain);
  if (!polygons.empty()) in.polygons = resolve(base, polygons);
  if (!reference.empty()) in.reference = resolve(base, reference);
  if (!model.empty()) in.model = resolve(base, model);
  if (in.label_date.empty()) in.label_date = in.optical.front().date;
  bool found = false;
  for (const auto& o : in.optical) found |= o.date == in.label_date;
  require(found, r, "label_date", "must match one of the optical dates");
  return in;
}

}  // namespace

PipelineConfig parse_pipeline(const json& j, const std::filesystem::path& base_dir) {
  JsonReader r(j, "");
  PipelineConfig c;
  r.get("seed", c.seed);
  c.seed = seed_override(c.seed);
  if (r.has("synth") && r.has("inputs")) throw ConfigError("give either 'synth' or 'inputs', not both");
  if (r.has("inputs")) {
    c.inputs = parse_inputs(r.child("inputs"), base_dir);
  } else {
    JsonReader s = r.child("synth");
    if (s.has("seed")) throw ConfigError("synth.seed: set the top-level seed instead");
    c.synth = parse_synth(s);
    c.synth->seed = c.seed;
  }
  {
    JsonReader h = r.child("hydro");
    h.get("threshold_m2", c.threshold_m2);
    h.finish();
    require(c.threshold_m2 > 0, h, "threshold_m2", "must be positive");
    if (c.synth) c.synth->threshold_m2 = c.threshold_m2;
  }
  {
    JsonReader m = r.child("model");
    if (m.has("seed")) throw ConfigError("model.seed: set the top-level seed instead");
    c.model = parse_model(m);
    c.model.net.seed = c.seed;
  }
  {
    JsonReader t = r.child("train");
    if (t.has("seed")) throw ConfigError("train.seed: set the top-level seed instead");
    c.train = parse_train(t);
    c.train.options.seed = c.seed;
  }
  {
    JsonReader g = r.child("coregister");
    g.get("enabled", c.coregister);
    g.get("tile_m", c.coreg_tile_m);
    JsonReader opts = g.child("options");
    c.coreg = parse_coregister(opts);
    g.finish();
    require(c.coreg_tile_m > 0, g, "tile_m", "must be positive");
    if (c.coregister && c.inputs && c.inputs->reference.empty())
      throw ConfigError("coregister.enabled: needs inputs.reference");
  }
  c.aggregate = parse_aggregate(r.child("aggregate"));
  {
    JsonReader f = r.child("frequency");
    f.get("tau", c.tau);
    f.finish();
    require(c.tau > 0 && c.tau < 1, f, "tau", "must be in (0, 1)");
  }
  {
    JsonReader a = r.child("annual");
    if (a.has("year")) {
      int y = 0;
      a.get("year", y);
      c.year = y;
    }
    a.finish();
  }
  r.get("jobs", c.jobs);
  require(c.jobs >= 1, r, "jobs", "must be >= 1");
  r.finish();
  return c;
}

json to_json(const SynthConfig& c) {
  return {{"seed", c.seed},
          {"size_m", c.size_m},
          {"wetness_schedule", c.wetness_schedule},
          {"start_date", c.start_date},
          {"shadow_fraction", c.shadow_fraction},
          {"noise_sigma", c.noise_sigma},
          {"grade", c.grade},
          {"noise_amplitude_m", c.noise_amplitude_m},
          {"noise_spacing_m", c.noise_spacing_m},
          {"threshold_m2", c.threshold_m2},
          {"a_min_m2", c.a_min_m2},
          {"n_wet", c.n_wet},
          {"n_dry", c.n_dry},
          {"shadow_bias", c.shadow_bias},
          {"label_day", c.label_day}};
}

json to_json(const AggConfig& c) {
  return {{"lambda_m", c.lambda_m}, {"d_max_m", c.d_max_m}, {"min_coverage", c.min_coverage}};
}

json to_json(const CoregOptions& c) {
  return {{"ref_band", c.ref_band},
          {"target_band", c.target_band},
          {"max_shift_m", c.max_shift_m},
          {"upsample", c.upsample},
          {"taper", c.taper}};
}

json to_json(const ModelSection& m) {
  return {{"variant", to_string(m.variant)},
          {"bands", m.net.optical_channels / m.time_window},
          {"time_window", m.time_window},
          {"terrain_channels", m.net.terrain_channels},
          {"base_channels", m.net.base_channels},
          {"encoder_levels", m.net.encoder_levels},
          {"footprint_m", m.net.footprint_m},
          {"optical_px_m", m.net.optical_px_m},
          {"terrain_px_m", m.net.terrain_px_m},
          {"output_px_m", m.net.output_px_m},
          {"seed", m.net.seed}};
}

json to_json(const TrainSection& t) {
  return {{"epochs", t.options.epochs},
          {"batch_size", t.options.batch_size},
          {"learning_rate", t.options.learning_rate},
          {"seed", t.options.seed},
          {"weighting", t.options.weighting == nn::LossWeighting::per_polygon ? "per_polygon" : "per_pixel"},
          {"flips", t.options.flips},
          {"tiles", t.tiles}};
}

json to_json(const PipelineConfig& c) {
  json j = {{"seed", c.seed},
            {"hydro", {{"threshold_m2", c.threshold_m2}}},
            {"model", to_json(c.model)},
            {"train", to_json(c.train)},
            {"coregister", {{"enabled", c.coregister}, {"tile_m", c.coreg_tile_m}, {"options", to_json(c.coreg)}}},
            {"aggregate", to_json(c.aggregate)},
            {"frequency", {{"tau", c.tau}}},
            {"annual", c.year ? json{{"year", *c.year}} : json::object()},
            {"jobs", c.jobs}};
  if (c.synth) j["synth"] = to_json(*c.synth);
  if (c.inputs) {
    json opt = json::array();
    for (const auto& o : c.inputs->optical) opt.push_back({{"date", o.date}, {"path", o.path.string()}});
    j["inputs"] = {{"dem", c.inputs->dem.string()},         {"terrain", c.inputs->terrain.string()},
                   {"optical", opt},                        {"polygons", c.inputs->polygons.string()},
                   {"label_date", c.inputs->label_date},    {"reference", c.inputs->reference.string()},
                   {"model", c.inputs->model.string()}};
  }
  return j;
}

std::uint64_t seed_override(std::uint64_t fallback) {
  const char* env = std::getenv("P2S_SEED");
  if (!env || !*env) return fallback;
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(env, &used);
    if (used != std::string(env).size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw ConfigError(std::string("P2S_SEED is not an unsigned integer: '") + env + "'");
  }
}

}  // namespace p2s
