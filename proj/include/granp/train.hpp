#pragma once

// Adam, the training loop, evaluation metrics, baselines, and checkpoints.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "granp/model.hpp"

namespace granp::train {

using data::Position;
using data::TrajectoryScene;
using model::GranpModel;
using model::ModelConfig;
using model::Prediction;

struct AdamState {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t t = 0;
  std::map<std::string, std::vector<double>> m, v;

  AdamState() = default;
  AdamState(const ad::ParameterSet& params, double learning_rate);
};

// One bias-corrected Adam update of every parameter. Throws ValueError if a
// parameter has no gradient or a gradient of the wrong size.
void adam_step(AdamState& state, ad::ParameterSet& params, const ad::GradientMap& grads);

// ---------------------------------------------------------------------------

inline constexpr std::array<std::size_t, 5> kHorizonSteps{5, 10, 15, 20, 25};

struct EvalReport {
  std::array<double, 5> rmse_m{};
  std::array<double, 5> nll_nats{};
  std::size_t n_scenes = 0;
  nlohmann::json config;  // echoed into the JSON when not null

  nlohmann::json to_json() const;
};

// Metrics of given predictions against the scenes' futures (meters).
// Per-scene terms are summed in sorted order, so the result does not depend
// on the order of the scenes.
EvalReport score_predictions(std::span<const Prediction> predictions,
                             std::span<const TrajectoryScene> scenes);

// Mean over scenes and all future steps of the diagonal Gaussian NLL.
double mean_nll(std::span<const Prediction> predictions, std::span<const TrajectoryScene> scenes);

// Constant-velocity extrapolation from the last two history positions,
// sigma 0.5 m.
Prediction cv_baseline(const TrajectoryScene& scene, std::size_t future_steps = data::kFutureSteps);
// Last observed position at every step, sigma 0.5 m.
Prediction constant_position(const TrajectoryScene& scene,
                             std::size_t future_steps = data::kFutureSteps);
inline constexpr double kBaselineSigma = 0.5;

// ---------------------------------------------------------------------------

// A model plus the reference context it predicts against.
struct Checkpoint {
  GranpModel model;
  std::vector<TrajectoryScene> reference;

  std::vector<Prediction> predict(std::span<const TrajectoryScene> queries, std::size_t samples,
                                  std::uint64_t seed) const;
};

inline constexpr int kCheckpointVersion = 1;

// Writes manifest.json and params.bin into `dir` (created if needed).
// Parameters are stored as little-endian 32-bit floats.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

// Byte offsets of each parameter in params.bin, in manifest order.
std::vector<std::size_t> blob_offsets(const std::vector<ad::Shape>& shapes);

// Predictions in chunks of queries; noise depends only on `seed`, and each
// scene's result does not depend on the order of `scenes`.
std::vector<Prediction> predict_all(const Checkpoint& ckpt, std::span<const TrajectoryScene> scenes,
                                    std::size_t samples, std::uint64_t seed);

// Horizons past the model's future length are a ValueError.
EvalReport evaluate(const Checkpoint& ckpt, std::span<const TrajectoryScene> scenes,
                    std::size_t samples = 30, std::uint64_t seed = 0);

// ---------------------------------------------------------------------------

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double loss = 0;        // means over the epoch's batches
  double recon_nll = 0;
  double kl = 0;
  double val_nll = 0;     // mean per-step predictive NLL on the validation split, nats
};

struct TrainOptions {
  ModelConfig config{};
  std::size_t epochs = 200;
  double lr = 5e-4;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  std::size_t patience = 0;          // 0: no early stop
  double validation_fraction = 0.1;
  std::size_t reference_size = 64;
  std::size_t validation_samples = 10;
  // called after every epoch; may be empty
  std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
  Checkpoint best;  // parameters of the epoch with the lowest validation NLL
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  std::vector<std::size_t> train_indices, validation_indices;
};

// Throws NumericError naming the epoch and batch on a non-finite loss.
TrainResult train(std::span<const TrajectoryScene> scenes, const TrainOptions& options);

void write_loss_csv(const std::filesystem::path& path, std::span<const EpochRecord> history);

}  // namespace granp::train
