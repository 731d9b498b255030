// p2s command line: one subcommand per pipeline stage plus `run` for the
// whole chain. Exit codes: 0 ok, 1 unexpected failure, 2 config error,
// 3 data error, 4 numeric failure.

#include "p2s/config.hpp"
#include "p2s/coregister.hpp"
#include "p2s/error.hpp"
#include "p2s/log.hpp"
#include "p2s/manifest.hpp"
#include "p2s/metrics.hpp"
#include "p2s/pipeline.hpp"
#include "p2s/stream_agg.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <iostream>
#include <mutex>

using namespace p2s;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Globals {
  std::string log_level = "info";
  std::string progress = "none";
  int jobs = 0;  // 0: keep the configured value
};

ProgressFn make_progress(const Globals& g) {
  if (g.progress != "json") return {};
  return [](const json& e) {
    static std::mutex mu;
    std::lock_guard<std::mutex> lock(mu);
    std::cout << e.dump() << std::endl;
  };
}

json load_config(const std::string& path) { return path.empty() ? json::object() : read_json_file(path); }

fs::path config_dir(const std::string& path) {
  return path.empty() ? fs::path() : fs::absolute(path).parent_path();
}

fs::path default_manifest(const std::string& out) { return fs::path(out + ".manifest.json"); }

/// Runs `body` as a single stage, writing a success or failure manifest.
void with_manifest(ManifestBuilder& mb, const Globals& g, const std::string& stage,
                   const std::function<void()>& body) {
  try {
    run_stage(stage, body, make_progress(g));
    mb.finish_ok();
  } catch (const std::exception& e) {
    try {
      mb.finish_failed(stage, e.what());
    } catch (const std::exception& inner) {
      log(LogLevel::error, std::string("could not write the failure manifest: ") + inner.what());
    }
    throw;
  }
}

std::vector<std::string> split_list(const std::vector<std::string>& items) {
  std::vector<std::string> out;
  for (const auto& s : items) {
    std::size_t start = 0;
    while (start <= s.size()) {
      const std::size_t comma = s.find(',', start);
      const std::string part = s.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
      if (!part.empty()) out.push_back(part);
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
  }
  return out;
}

// ---- hydro ------------------------------------------------------------------------

struct HydroArgs {
  std::string config, dem, out, hag;
  double threshold_m2 = 0;
};

void cmd_hydro(const HydroArgs& a, const Globals& g) {
  JsonReader r(load_config(a.config), "");
  double threshold = 10000.0;
  r.get("threshold_m2", threshold);
  r.finish();
  if (a.threshold_m2 > 0) threshold = a.threshold_m2;
  if (!(threshold > 0)) throw ConfigError("threshold_m2 must be positive");
  const fs::path out(a.out);
  fs::create_directories(out);
  ManifestBuilder mb("hydro", out / "manifest.json");
  mb.set_config({{"threshold_m2", threshold}, {"dem", a.dem}, {"hag", a.hag}});
  with_manifest(mb, g, "hydro", [&] {
    mb.add_input(a.dem);
    const Raster dem = read_raster(a.dem);
    const HydroProducts h = derive_hydrology(dem, threshold);
    for (const auto& p : save_hydro(h, out)) mb.add_output(p);
    std::optional<Raster> hag;
    if (!a.hag.empty()) {
      mb.add_input(a.hag);
      hag = read_raster(a.hag);
    }
    write_raster(terrain_stack(dem, h, hag ? &*hag : nullptr), out / "terrain.p2sr");
    mb.add_output(out / "terrain.p2sr");
    log_info(std::to_string(h.network.reaches.size()) + " reaches");
  });
}

// ---- synth --------------------------------------------------------------------------

struct SynthArgs {
  std::string config, out;
  bool label_reference_only = false;
};

void cmd_synth(const SynthArgs& a, const Globals& g) {
  SynthConfig cfg = parse_synth(JsonReader(load_config(a.config), ""));
  cfg.seed = seed_override(cfg.seed);
  const fs::path out(a.out);
  fs::create_directories(out);
  ManifestBuilder mb("synth", out / "manifest.json");
  mb.set_config(to_json(cfg));
  mb.set_seed("seed", cfg.seed);
  mb.set_seed("polygons", polygon_seed(cfg));
  with_manifest(mb, g, "synth", [&] {
    const SynthFiles f = write_synth(cfg, out, !a.label_reference_only, std::max(1, g.jobs));
    for (const auto& p : f.all) mb.add_output(p);
  });
}

// ---- coregister ------------------------------------------------------------------------

struct CoregArgs {
  std::string config, reference, target, polygons, out, report, manifest;
  double max_shift_m = 0, tile_m = -1;
  int upsample = 0;
};

void cmd_coregister(const CoregArgs& a, const Globals& g) {
  json j = load_config(a.config);
  if (!j.is_object()) throw ConfigError("config: expected an object");
  double tile_m = 96.0;
  if (j.contains("tile_m")) {
    if (!j["tile_m"].is_number()) throw ConfigError("tile_m: expected a number");
    tile_m = j["tile_m"].get<double>();
    j.erase("tile_m");
  }
  CoregOptions opts = parse_coregister(JsonReader(j, ""));
  if (a.tile_m >= 0) tile_m = a.tile_m;
  if (a.max_shift_m > 0) opts.max_shift_m = a.max_shift_m;
  if (a.upsample > 0) opts.upsample = a.upsample;
  if (tile_m < 0) throw ConfigError("tile_m: must be >= 0 (0 estimates one global shift)");
  const fs::path report = a.report.empty() ? fs::path(a.out + ".report.json") : fs::path(a.report);
  ManifestBuilder mb("coregister", a.manifest.empty() ? default_manifest(a.out) : fs::path(a.manifest));
  json snapshot = to_json(opts);
  snapshot["tile_m"] = tile_m;
  mb.set_config(snapshot);
  with_manifest(mb, g, "coregister", [&] {
    mb.add_input(a.reference);
    mb.add_input(a.target);
    mb.add_input(a.polygons);
    const Raster ref = read_raster(a.reference), tgt = read_raster(a.target);
    const std::vector<AnnotationPolygon> polys = read_polygons(a.polygons);
    auto estimate_json = [](const ShiftEstimate& s) {
      return json{{"col_px", s.col_px},         {"row_px", s.row_px}, {"dx_m", s.dx_m},
                  {"dy_m", s.dy_m},             {"pixel_size", s.pixel_size},
                  {"peak_ratio", s.peak_ratio}, {"valid", s.valid}};
    };
    json tiles_json = json::array();
    std::vector<AnnotationPolygon> shifted;
    if (tile_m > 0) {
      const auto tiles = estimate_tile_shifts(ref, tgt, tile_m, opts);
      for (const auto& t : tiles)
        tiles_json.push_back(
            {{"anchor", {t.anchor.x, t.anchor.y}}, {"size_m", t.size_m}, {"estimate", estimate_json(t.estimate)}});
      shifted = shift_polygons_by_tile(polys, tiles);
    } else {
      const ShiftEstimate s = estimate_shift(ref, tgt, opts);
      tiles_json.push_back({{"anchor", nullptr}, {"size_m", nullptr}, {"estimate", estimate_json(s)}});
      shifted = s.valid ? shift_polygons(polys, s) : polys;
      if (!s.valid) log_warn("shift estimate is invalid; polygons left in place");
    }
    write_polygons(shifted, a.out);
    mb.add_output(a.out);
    write_file_atomic(report, json{{"tiles", tiles_json}}.dump(2) + "\n");
    mb.add_output(report);
  });
}

// ---- train ----------------------------------------------------------------------------------

struct TrainArgs {
  std::string config, out, manifest;
};

void cmd_train(const TrainArgs& a, const Globals& g) {
  JsonReader r(load_config(a.config), "");
  const fs::path base = config_dir(a.config);
  std::uint64_t seed = 1;
  r.get("seed", seed);
  seed = seed_override(seed);
  std::string terrain, polygons, label_date;
  std::optional<double> east_limit;
  r.get("terrain", terrain);
  r.get("polygons", polygons);
  r.get("label_date", label_date);
  if (r.has("east_limit")) {
    double v = 0;
    r.get("east_limit", v);
    east_limit = v;
  }
  std::vector<OpticalInput> optical;
  if (r.has("optical")) {
    const json& arr = r.raw("optical");
    if (!arr.is_array()) throw ConfigError("optical: expected an array");
    for (std::size_t i = 0; i < arr.size(); ++i) {
      JsonReader item(arr[i], "optical[" + std::to_string(i) + "]");
      OpticalInput o;
      std::string path;
      item.get("date", o.date);
      item.get("path", path);
      item.finish();
      if (o.date.empty() || path.empty()) throw ConfigError(item.where("") + "date and path are required");
      o.path = fs::path(path).is_absolute() ? fs::path(path) : base / path;
      optical.push_back(o);
    }
  }
  JsonReader mr = r.child("model");
  if (mr.has("seed")) throw ConfigError("model.seed: set the top-level seed instead");
  ModelSection model = parse_model(mr);
  JsonReader tr = r.child("train");
  if (tr.has("seed")) throw ConfigError("train.seed: set the top-level seed instead");
  TrainSection train_cfg = parse_train(tr);
  r.finish();
  if (optical.empty()) throw ConfigError("optical: at least one scene is required");
  if (polygons.empty()) throw ConfigError("polygons: required");
  if (model.variant == Variant::wassernetz && terrain.empty()) throw ConfigError("terrain: required for wassernetz");
  if (label_date.empty()) label_date = optical.back().date;
  int label = -1;
  for (std::size_t i = 0; i < optical.size(); ++i)
    if (optical[i].date == label_date) label = static_cast<int>(i);
  if (label < 0) throw ConfigError("label_date: must match one of the optical dates");
  model.net.seed = seed;
  train_cfg.options.seed = seed;
  auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };

  ManifestBuilder mb("train", a.manifest.empty() ? default_manifest(a.out) : fs::path(a.manifest));
  mb.set_config({{"seed", seed}, {"model", to_json(model)}, {"train", to_json(train_cfg)}, {"label_date", label_date}});
  mb.set_seed("seed", seed);
  with_manifest(mb, g, "train", [&] {
    std::vector<Raster> days;
    for (const auto& o : optical) {
      mb.add_input(o.path);
      days.push_back(read_raster(o.path));
    }
    std::optional<Raster> ter;
    if (model.variant == Variant::wassernetz) {
      mb.add_input(resolve(terrain));
      ter = read_raster(resolve(terrain));
    }
    mb.add_input(resolve(polygons));
    std::vector<AnnotationPolygon> train_polys;
    for (const auto& p : read_polygons(resolve(polygons)))
      if (p.split == Split::train) train_polys.push_back(p);
    const auto window = optical_window(days, label, model.time_window);
    const Raster stack = window.size() == 1 ? *window[0] : stack_bands(window);
    const auto examples = sample_training_tiles(stack, ter ? &*ter : nullptr, train_polys, model.net,
                                                train_cfg.tiles, seed, east_limit);
    Model m = build_model(model.net, model.variant);
    const TrainHistory hist = train(m, examples, train_cfg.options);
    save_model(m, a.out);
    mb.add_output(a.out);
    log_info("final epoch loss " + std::to_string(hist.epoch_loss.empty() ? 0.0 : hist.epoch_loss.back()));
  });
}

// ---- predict ---------------------------------------------------------------------------------

struct PredictArgs {
  std::string config, model, terrain, out, manifest;
  std::vector<std::string> optical;
};

void cmd_predict(const PredictArgs& a, const Globals& g) {
  JsonReader r(load_config(a.config), "");
  int jobs = 1;
  r.get("jobs", jobs);
  r.finish();
  if (g.jobs > 0) jobs = g.jobs;
  if (jobs < 1) throw ConfigError("jobs must be >= 1");
  const auto optical = split_list(a.optical);
  if (optical.empty()) throw ConfigError("--optical: at least one scene is required");
  ManifestBuilder mb("predict", a.manifest.empty() ? default_manifest(a.out) : fs::path(a.manifest));
  mb.set_config({{"jobs", jobs}, {"optical", optical}, {"terrain", a.terrain}, {"model", a.model}});
  with_manifest(mb, g, "predict", [&] {
    mb.add_input(a.model);
    Model m = load_model(a.model);
    std::vector<Raster> days;
    for (const auto& p : optical) {
      mb.add_input(p);
      days.push_back(read_raster(p));
    }
    std::optional<Raster> ter;
    if (m.uses_terrain()) {
      if (a.terrain.empty()) throw DataError("the model needs a terrain stack (--terrain)");
      if (!fs::exists(a.terrain)) throw DataError("terrain stack '" + a.terrain + "' not found");
      mb.add_input(a.terrain);
      ter = read_raster(a.terrain);
    }
    std::vector<const Raster*> ptrs;
    for (const auto& d : days) ptrs.push_back(&d);
    write_raster(predict_scene(m, ptrs, ter ? &*ter : nullptr, jobs), a.out);
    mb.add_output(a.out);
  });
}

// ---- aggregate / timeseries / frequency / annual -------------------------------------------------

struct AggregateArgs {
  std::string config, prob, hydro, date, out, manifest;
};

void cmd_aggregate(const AggregateArgs& a, const Globals& g) {
  const AggConfig cfg = parse_aggregate(JsonReader(load_config(a.config), ""));
  try {
    validate_date(a.date);
  } catch (const DataError& e) {
    throw ConfigError(std::string("--date: ") + e.what());
  }
  ManifestBuilder mb("aggregate", a.manifest.empty() ? default_manifest(a.out) : fs::path(a.manifest));
  mb.set_config(to_json(cfg));
  with_manifest(mb, g, "aggregate", [&] {
    mb.add_input(a.prob);
    const HydroProducts h = load_hydro(a.hydro);
    for (const char* n : {"catchments.p2sr", "channels.p2sr", "distance.p2sr", "reaches.geojson"})
      mb.add_input(fs::path(a.hydro) / n);
    const auto rp = reach_probability(read_raster(a.prob), h.network, h.distance, cfg, a.date);
    write_timeseries_csv(build_timeseries({{a.date, rp}}), a.out);
    mb.add_output(a.out);
  });
}

struct TimeseriesArgs {
  std::string config, out, manifest;
  std::vector<std::string> inputs;
};

void cmd_timeseries(const TimeseriesArgs& a, const Globals& g) {
  JsonReader(load_config(a.config), "").finish();
  const auto inputs = split_list(a.inputs);
  if (inputs.empty()) throw ConfigError("--inputs: at least one file is required");
  ManifestBuilder mb("timeseries", a.manifest.empty() ? default_manifest(a.out) : fs::path(a.manifest));
  mb.set_config({{"inputs", inputs}});
  with_manifest(mb, g, "timeseries", [&] {
    std::map<std::string, std::vector<ReachProbability>> by_date;
    for (const auto& p : inputs) {
      mb.add_input(p);
      for (const auto& [id, series] : read_timeseries_csv(p).series)
        for (const auto& rp : series) by_date[rp.date].push_back(rp);
    }
    std::vector<std::pair<std::string, std::vector<ReachProbability>>> days(by_date.begin(), by_date.end());
    write_timeseries_csv(build_timeseries(days), a.out);
    mb.add_output(a.out);
  });
}

struct FrequencyArgs {
  std::string config, timeseries, hydro, out, manifest, start, end;
  double tau = -1;
};

void cmd_frequency(const FrequencyArgs& a, const Globals& g) {
  JsonReader r(load_config(a.config), "");
  double tau = 0.5;
  Period period;
  r.get("tau", tau);
  r.get("start", period.start);
  r.get("end", period.end);
  r.finish();
  if (a.tau >= 0) tau = a.tau;
  if (!a.start.empty()) period.start = a.start;
  if (!a.end.empty()) period.end = a.end;
  if (!(tau > 0 && tau < 1)) throw ConfigError("tau must be in (0, 1)");
  for (const auto* d : {&period.start, &period.end}) {
    if (d->empty()) continue;
    try {
      validate_date(*d);
    } catch (const DataError& e) {
      throw ConfigError(std::string("period: ") + e.what());
    }
  }
  ManifestBuilder mb("frequency", a.manifest.empty() ? default_manifest(a.out) : fs::path(a.manifest));
  mb.set_config({{"tau", tau}, {"start", period.start}, {"end", period.end}});
  with_manifest(mb, g, "frequency", [&] {
    mb.add_input(a.timeseries);
    const HydroProducts h = load_hydro(a.hydro);
    mb.add_input(fs::path(a.hydro) / "reaches.geojson");
    write_reach_values(h.network, flow_frequency(read_timeseries_csv(a.timeseries), tau, period), a.out);
    mb.add_output(a.out);
  });
}

struct AnnualArgs {
  std::string config, timeseries, hydro, out, manifest;
  int year = 0;
};

void cmd_annual(const AnnualArgs& a, const Globals& g) {
  JsonReader r(load_config(a.config), "");
  int year = 0;
  r.get("year", year);
  r.finish();
  if (a.year != 0) year = a.year;
  ManifestBuilder mb("annual", a.manifest.empty() ? default_manifest(a.out) : fs::path(a.manifest));
  with_manifest(mb, g, "annual", [&] {
    mb.add_input(a.timeseries);
    const StreamTimeSeries ts = read_timeseries_csv(a.timeseries);
    if (year == 0) {
      if (ts.start.empty()) throw DataError("empty time series and no --year");
      year = std::stoi(ts.start.substr(0, 4));
    }
    mb.set_config({{"year", year}});
    const HydroProducts h = load_hydro(a.hydro);
    mb.add_input(fs::path(a.hydro) / "reaches.geojson");
    write_reach_values(h.network, annual_map(ts, year), a.out);
    mb.add_output(a.out);
  });
}

// ---- eval ---------------------------------------------------------------------------------------

struct EvalArgs {
  std::string config, prob, polygons, out, pr_prefix, manifest, split;
};

void cmd_eval(const EvalArgs& a, const Globals& g) {
  JsonReader r(load_config(a.config), "");
  EvalOptions opts;
  std::string scoring = "mean_pixel", split = "test";
  r.get("threshold", opts.threshold);
  r.get("width_edges", opts.width_edges);
  r.get("scoring", scoring);
  r.get("split", split);
  r.finish();
  if (!a.split.empty()) split = a.split;
  if (scoring == "majority") opts.scoring = PolygonScoring::majority;
  else if (scoring != "mean_pixel") throw ConfigError("scoring: expected mean_pixel or majority");
  if (split != "test" && split != "train" && split != "all") throw ConfigError("split: expected test, train or all");
  if (!(opts.threshold >= 0 && opts.threshold <= 1)) throw ConfigError("threshold must be in [0, 1]");
  ManifestBuilder mb("eval", a.manifest.empty() ? default_manifest(a.out) : fs::path(a.manifest));
  mb.set_config({{"threshold", opts.threshold}, {"width_edges", opts.width_edges}, {"scoring", scoring}, {"split", split}});
  with_manifest(mb, g, "eval", [&] {
    mb.add_input(a.prob);
    mb.add_input(a.polygons);
    std::vector<AnnotationPolygon> polys;
    for (const auto& p : read_polygons(a.polygons))
      if (split == "all" || (split == "test") == (p.split == Split::test)) polys.push_back(p);
    if (polys.empty()) throw DataError("no polygons in split '" + split + "'");
    const EvalResult res = evaluate(read_raster(a.prob), polys, opts);
    write_eval_report(res, a.out);
    mb.add_output(a.out);
    std::string prefix = a.pr_prefix;
    if (prefix.empty()) {
      const fs::path o(a.out);
      prefix = (o.extension() == ".json" ? fs::path(o).replace_extension() : o).string() + "_pr";
    }
    write_pr_csv(res.pr_pixel, prefix + "_pixel.csv");
    write_pr_csv(res.pr_polygon, prefix + "_polygon.csv");
    mb.add_output(prefix + "_pixel.csv");
    mb.add_output(prefix + "_polygon.csv");
    std::cout << json{{"pixel_accuracy", res.pixel_accuracy}, {"polygon_accuracy", res.polygon_accuracy}}.dump()
              << std::endl;
  });
}

// ---- verify / run -----------------------------------------------------------------------------------

int cmd_verify(const std::string& manifest) {
  const VerifyReport rep = verify_manifest(manifest);
  for (const auto& p : rep.problems) log(LogLevel::error, p);
  if (rep.ok) log_info("all hashes verified");
  return rep.ok ? 0 : 3;
}

void cmd_run(const std::string& config, const std::string& out, const Globals& g) {
  PipelineConfig cfg = parse_pipeline(load_config(config), config_dir(config));
  if (g.jobs > 0) cfg.jobs = g.jobs;
  RunOptions opts;
  opts.progress = make_progress(g);
  run_pipeline(cfg, out, opts);
}

LogLevel parse_level(const std::string& s) {
  if (s == "debug") return LogLevel::debug;
  if (s == "info") return LogLevel::info;
  if (s == "warn") return LogLevel::warn;
  if (s == "error") return LogLevel::error;
  return LogLevel::quiet;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stream and water mapping from optical imagery and terrain"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--log-level", g.log_level, "debug, info, warn, error or quiet")
      ->check(CLI::IsMember({"debug", "info", "warn", "error", "quiet"}));
  app.add_option("--progress", g.progress, "none or json (progress events on stdout)")
      ->check(CLI::IsMember({"none", "json"}));
  app.add_option("--jobs", g.jobs, "worker threads (overrides the config)")->check(CLI::PositiveNumber);

  HydroArgs hy;
  auto* hydro = app.add_subcommand("hydro", "derive filled DEM, flow, reaches, catchments and a terrain stack");
  hydro->add_option("--config", hy.config);
  hydro->add_option("--dem", hy.dem)->required();
  hydro->add_option("--out", hy.out, "output directory")->required();
  hydro->add_option("--hag", hy.hag, "height above ground raster for the terrain stack");
  hydro->add_option("--threshold-m2", hy.threshold_m2);

  SynthArgs sy;
  auto* synth = app.add_subcommand("synth", "generate a synthetic watershed and image series");
  synth->add_option("--config", sy.config);
  synth->add_option("--out", sy.out, "output directory")->required();
  synth->add_flag("--label-reference-only", sy.label_reference_only, "write the 0.5 m reference for the label day only");

  CoregArgs co;
  auto* coreg = app.add_subcommand("coregister", "align polygons drawn on a reference image to a target image");
  coreg->add_option("--config", co.config);
  coreg->add_option("--ref", co.reference)->required();
  coreg->add_option("--target", co.target)->required();
  coreg->add_option("--polys", co.polygons)->required();
  coreg->add_option("--out", co.out, "shifted polygons (GeoJSON)")->required();
  coreg->add_option("--report", co.report, "per-tile shift report (default: <out>.report.json)");
  coreg->add_option("--max-shift", co.max_shift_m, "metres");
  coreg->add_option("--upsample", co.upsample);
  coreg->add_option("--tile-m", co.tile_m, "tile side in metres; 0 for one global shift");
  coreg->add_option("--manifest", co.manifest);

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "train a segmentation model");
  train_cmd->add_option("--config", tr.config)->required();
  train_cmd->add_option("--out", tr.out, "model weights")->required();
  train_cmd->add_option("--manifest", tr.manifest);

  PredictArgs pr;
  auto* predict = app.add_subcommand("predict", "water probability for one scene");
  predict->add_option("--config", pr.config);
  predict->add_option("--model", pr.model)->required();
  predict->add_option("--optical", pr.optical, "comma-separated scenes, oldest first")->required();
  predict->add_option("--terrain", pr.terrain);
  predict->add_option("--out", pr.out)->required();
  predict->add_option("--manifest", pr.manifest);

  AggregateArgs ag;
  auto* aggregate = app.add_subcommand("aggregate", "per-reach probability for one day");
  aggregate->add_option("--config", ag.config);
  aggregate->add_option("--prob", ag.prob)->required();
  aggregate->add_option("--hydro", ag.hydro, "directory written by `hydro`")->required();
  aggregate->add_option("--date", ag.date)->required();
  aggregate->add_option("--out", ag.out)->required();
  aggregate->add_option("--manifest", ag.manifest);

  TimeseriesArgs ts;
  auto* timeseries = app.add_subcommand("timeseries", "merge daily reach CSVs into one time series");
  timeseries->add_option("--config", ts.config);
  timeseries->add_option("--inputs", ts.inputs, "comma-separated daily CSVs")->required();
  timeseries->add_option("--out", ts.out)->required();
  timeseries->add_option("--manifest", ts.manifest);

  FrequencyArgs fr;
  auto* frequency = app.add_subcommand("frequency", "flow frequency per reach");
  frequency->add_option("--config", fr.config);
  frequency->add_option("--timeseries", fr.timeseries)->required();
  frequency->add_option("--hydro", fr.hydro)->required();
  frequency->add_option("--out", fr.out)->required();
  frequency->add_option("--tau", fr.tau);
  frequency->add_option("--start", fr.start);
  frequency->add_option("--end", fr.end);
  frequency->add_option("--manifest", fr.manifest);

  AnnualArgs an;
  auto* annual = app.add_subcommand("annual", "mean probability per reach over a year");
  annual->add_option("--config", an.config);
  annual->add_option("--timeseries", an.timeseries)->required();
  annual->add_option("--hydro", an.hydro)->required();
  annual->add_option("--year", an.year);
  annual->add_option("--out", an.out)->required();
  annual->add_option("--manifest", an.manifest);

  EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "accuracy, precision-recall and width-binned scores");
  eval->add_option("--config", ev.config);
  eval->add_option("--pred", ev.prob)->required();
  eval->add_option("--polys", ev.polygons)->required();
  eval->add_option("--split", ev.split, "test, train or all");
  eval->add_option("--out", ev.out, "report (JSON)")->required();
  eval->add_option("--pr-csv", ev.pr_prefix, "prefix for the precision-recall CSVs (default: <out> minus .json)");
  eval->add_option("--manifest", ev.manifest);

  std::string verify_path;
  auto* verify = app.add_subcommand("verify", "recompute the hashes recorded in a manifest");
  verify->add_option("manifest", verify_path)->required();

  std::string run_config, run_out;
  auto* run = app.add_subcommand("run", "the whole pipeline from one config");
  run->add_option("--config", run_config);
  run->add_option("--out", run_out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  set_log_level(parse_level(g.log_level));

  try {
    if (*hydro) cmd_hydro(hy, g);
    else if (*synth) cmd_synth(sy, g);
    else if (*coreg) cmd_coregister(co, g);
    else if (*train_cmd) cmd_train(tr, g);
    else if (*predict) cmd_predict(pr, g);
    else if (*aggregate) cmd_aggregate(ag, g);
    else if (*timeseries) cmd_timeseries(ts, g);
    else if (*frequency) cmd_frequency(fr, g);
    else if (*annual) cmd_annual(an, g);
    else if (*eval) cmd_eval(ev, g);
    else if (*verify) return cmd_verify(verify_path);
    else if (*run) cmd_run(run_config, run_out, g);
    return 0;
  } catch (const ConfigError& e) {
    log(LogLevel::error, std::string("config error: ") + e.what());
    return 2;
  } catch (const DataError& e) {
    log(LogLevel::error, std::string("data error: ") + e.what());
    return 3;
  } catch (const NumericError& e) {
    log(LogLevel::error, std::string("numeric failure: ") + e.what());
    return 4;
  } catch (const std::exception& e) {
    log(LogLevel::error, e.what());
    return 1;
  }
}
