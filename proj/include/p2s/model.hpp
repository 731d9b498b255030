#pragma once

#include "p2s/raster.hpp"
#include "p2s/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace p2s {

enum class Variant { wassernetz, unet_single };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);

struct NetConfig {
  int optical_channels = 12;  ///< bands x time window
  int terrain_channels = 4;   ///< DEM, reach mask, distance buffer, HAG
  int base_channels = 32;
  int encoder_levels = 3;
  double footprint_m = 192.0;
  double optical_px_m = 3.0;
  double terrain_px_m = 1.0;
  double output_px_m = 0.5;
  std::uint64_t seed = 0;

  bool operator==(const NetConfig&) const = default;

  int optical_px() const;
  int terrain_px() const;
  int output_px() const;
};

/// Throws ConfigError when the geometry cannot be realised by the network.
void validate(const NetConfig& cfg, Variant variant);

/// Per-band affine standardisation applied before the forward pass.
struct Standardization {
  std::vector<float> mean;
  std::vector<float> stddev;
};

struct Model {
  NetConfig config;
  Variant variant = Variant::wassernetz;
  std::vector<std::string> order;  ///< parameter creation order
  std::map<std::string, nn::Tensor<float>> params;
  std::map<std::string, nn::Tensor<float>> buffers;  ///< running normalisation statistics
  Standardization optical_norm;
  Standardization terrain_norm;

  bool uses_terrain() const { return variant == Variant::wassernetz; }
};

Model build_model(const NetConfig& cfg, Variant variant);

enum class Mode { train, eval };

/// Parameter handles created on a tape by `forward`, keyed by name.
using ParamVars = std::map<std::string, nn::Var>;

/// Runs the network on standardised inputs. Train mode normalises with batch
/// statistics and updates the running statistics; eval mode uses the running
/// ones. Returns the (N,1,out,out) probability map. Entries already present
/// in `vars` (created on the same tape) replace the stored parameter of that
/// name; all other parameters are added to `vars` as they are used.
template <typename S>
nn::Var forward(nn::Tape<S>& t, Model& m, const nn::Tensor<S>& optical, const nn::Tensor<S>& terrain,
                Mode mode, ParamVars* vars = nullptr, bool track_grad = false);

void save_model(const Model& m, const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path);

// ---- data --------------------------------------------------------------------

struct TrainExample {
  nn::Tensor<float> optical;  ///< (1, optical_channels, h, w), raw values
  nn::Tensor<float> terrain;  ///< (1, terrain_channels, H, W), raw values; empty for unet_single
  nn::Tensor<float> label;    ///< (1,1,out,out): 0/1, negative where unlabelled
  nn::Tensor<float> polygon_id;
};

/// Converts a raster to a (1,bands,h,w) tensor. Nodata values stay in place.
nn::Tensor<float> to_tensor(const Raster& r);

/// Label and polygon-id tensors for the given grid.
TrainExample make_example(const Raster& optical, const Raster* terrain,
                          const std::vector<AnnotationPolygon>& polygons, const GridSpec& target);

/// Mean and standard deviation per band over valid pixels of the examples.
void fit_standardization(Model& m, const std::vector<TrainExample>& data);

/// Applies the model's standardisation to a tensor; nodata maps to 0.
nn::Tensor<float> standardize(const nn::Tensor<float>& x, const Standardization& s, float nodata);

struct TrainOptions {
  int epochs = 30;
  int batch_size = 4;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  nn::LossWeighting weighting = nn::LossWeighting::per_polygon;
  bool flips = false;  ///< random horizontal/vertical flips
  float nodata = kDefaultNodata;
};

struct TrainHistory {
  std::vector<double> epoch_loss;
  std::vector<double> step_loss;
  std::vector<double> validation_accuracy;  ///< empty when no validation set
};

/// Trains in place. Fits standardisation first unless it is already set.
TrainHistory train(Model& m, const std::vector<TrainExample>& data, const TrainOptions& opts,
                   const std::vector<TrainExample>* validation = nullptr);

/// Pixel accuracy at 0.5 over labelled pixels of the examples.
double pixel_accuracy(Model& m, const std::vector<TrainExample>& data, float nodata = kDefaultNodata);

/// Forward pass on one example in eval mode; returns probabilities.
nn::Tensor<float> predict_tile(Model& m, const TrainExample& ex, float nodata = kDefaultNodata);

/// Full-scene inference with 50% tile overlap and raised-cosine blending.
/// `optical_days` are stacked as channels; `terrain` may be null for
/// unet_single. Output lives on the optical extent at output_px_m. Tiles run
/// `jobs` at a time; the result does not depend on `jobs`.
Raster predict_scene(Model& m, const std::vector<const Raster*>& optical_days, const Raster* terrain,
                     int jobs = 1);

// ---- NDWI baseline -------------------------------------------------------------

Raster ndwi(const Raster& green, const Raster& nir);
Raster classify_ndwi(const Raster& index, double threshold = 0.0);

}  // namespace p2s
