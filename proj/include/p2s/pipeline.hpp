#pragma once

#include "p2s/config.hpp"
#include "p2s/hydro.hpp"
#include "p2s/manifest.hpp"
#include "p2s/model.hpp"
#include "p2s/synth.hpp"

#include <json.hpp>

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace p2s {

/// Receives one JSON object per progress event: {"stage", "event", ...}.
using ProgressFn = std::function<void(const nlohmann::json&)>;

/// Runs `fn` as the named stage. ConfigError, DataError and NumericError are
/// rethrown as the same type with the stage name prefixed.
void run_stage(const std::string& stage, const std::function<void()>& fn, const ProgressFn& progress = {});

// ---- hydrology products on disk ------------------------------------------------

/// filled, flow_dir, accumulation, distance, catchments and channels rasters
/// plus reaches.geojson. Returns the written paths.
std::vector<std::filesystem::path> save_hydro(const HydroProducts& h, const std::filesystem::path& dir);
HydroProducts load_hydro(const std::filesystem::path& dir);

/// DEM, channel mask, distance buffer and height above ground. `hag` may be
/// null, in which case that band is zero.
Raster terrain_stack(const Raster& dem, const HydroProducts& h, const Raster* hag = nullptr);

// ---- synthetic scenes on disk --------------------------------------------------

struct SynthFiles {
  std::filesystem::path dem;
  std::filesystem::path terrain;
  std::vector<OpticalInput> optical;
  std::vector<std::filesystem::path> reference;  ///< empty entries where not written
  std::vector<std::filesystem::path> truth;
  std::filesystem::path polygons;
  std::filesystem::path flow_truth;  ///< CSV reach_id,date,flowing,width_m
  std::vector<std::filesystem::path> all;
};

/// Generates the watershed and every day of the schedule into `dir`. The
/// 0.5 m reference is written for every day when `all_references`, else
/// only for the label day. Days are generated `jobs` at a time.
SynthFiles write_synth(const SynthConfig& cfg, const std::filesystem::path& dir, bool all_references = true,
                       int jobs = 1);

/// Polygon sampling seed used for a synthetic config.
std::uint64_t polygon_seed(const SynthConfig& cfg);

// ---- training data ----------------------------------------------------------------

/// Optical rasters for day `index` and the `window - 1` days before it, oldest
/// first; indices before the first day repeat day 0.
std::vector<const Raster*> optical_window(const std::vector<Raster>& days, int index, int window);

/// Random co-footprint tiles, each centred loosely on a randomly drawn
/// polygon and lying entirely west of `east_limit` when given.
std::vector<TrainExample> sample_training_tiles(const Raster& optical, const Raster* terrain,
                                                const std::vector<AnnotationPolygon>& polygons, const NetConfig& net,
                                                int count, std::uint64_t seed,
                                                std::optional<double> east_limit = std::nullopt);

// ---- end to end ----------------------------------------------------------------------

struct RunOptions {
  ProgressFn progress;
  std::string command = "run";
};

/// hydro -> (coregister) -> predict (training first unless a model is given)
/// -> aggregate -> timeseries -> frequency -> annual -> eval, writing every
/// artifact under `out_dir` and a manifest at out_dir/manifest.json. On
/// failure the manifest records the stage and the partial outputs, and the
/// error is rethrown with the stage name.
RunManifest run_pipeline(const PipelineConfig& cfg, const std::filesystem::path& out_dir, const RunOptions& opts = {});

}  // namespace p2s
