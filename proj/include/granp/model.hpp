#pragma once

// The trajectory model: scene encoder (embedding, two GAT layers per
// timestep, LSTM over the ego node), pair encoders for (history, future)
// pairs, cross-attention deterministic path, Gaussian latent path, and a
// Gaussian decoder over the ego future.
//
// All tensors inside the model are in ego-frame z-score units. prepare()
// does the conversion from scenes in meters; predictions come back in meters.

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include <json.hpp>

#include "granp/layers.hpp"
#include "granp/pipeline.hpp"

namespace granp::model {

using ad::ParameterSet;
using ad::Tensor;
using data::Position;
using data::TrajectoryScene;

struct ModelConfig {
  std::size_t hidden = 64;
  std::size_t heads = 4;
  std::size_t latent = 0;  // 0 means "same as hidden"
  std::size_t history_steps = data::kHistorySteps;
  std::size_t future_steps = data::kFutureSteps;
  std::size_t kernel = 3;
  graph::OccupancyGrid grid{};

  static constexpr std::size_t kGatLayers = 2;

  std::size_t latent_dim() const { return latent == 0 ? hidden : latent; }
  // hidden in {16, 32, 64, 128}, heads in {2, 4, 8}
  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

// Padded tensors for a set of scenes. Graph g = t * B + b holds scene b at
// history step t; scenes with fewer vehicles are padded with isolated nodes.
struct PreparedScenes {
  std::size_t count = 0;         // B
  std::size_t max_nodes = 0;     // n
  Tensor features;               // [T_N * B, n, 4]
  Tensor mask;                   // [T_N * B, n, n], 0 on edges, large negative elsewhere
  Tensor future_rows;            // [2B, T_F]: row 2b is x, row 2b+1 is y (when futures known)
  Tensor future;                 // [B, T_F, 2]
  std::vector<Position> origins; // ego position at the last history step, meters
  std::vector<std::vector<int>> node_ids;  // gated vehicles per scene, ego first

  bool has_future() const { return future.defined(); }
};

struct Encoded {
  Tensor H;  // [B, d]
  Tensor r;  // [B, d] deterministic-path pair representation (pairs only)
  Tensor s;  // [B, d] latent-path pair representation (pairs only)
  // per GAT layer, per head: [T_N * B, n, n]; kept only on request
  std::vector<std::vector<Tensor>> attention;
};

struct LatentDistribution {
  Tensor mu;     // [1, L]
  Tensor sigma;  // [1, L], in [0.1, 1]
};

struct Decoded {
  Tensor mean;   // [k, T_F, 2]
  Tensor sigma;  // [k, T_F, 2], >= 0.01
};

struct ElboResult {
  Tensor loss;           // scalar
  double recon_nll = 0;  // per target per step
  double kl = 0;         // total KL
};

// Per-scene predictive output in meters, in the scene's own frame.
struct Prediction {
  std::vector<Position> mean;
  std::vector<Position> sigma;
  std::vector<Position> lower, upper;            // 95% interval
  std::vector<std::vector<Position>> samples;    // decoder means per latent sample
};

inline constexpr double kLatentSigmaMin = 0.1;
inline constexpr double kLatentSigmaSpan = 0.9;
inline constexpr double kDecoderSigmaMin = 0.01;
inline constexpr double kCiZ = 1.96;

class GranpModel {
 public:
  GranpModel(const ModelConfig& config, std::uint64_t init_seed);
  GranpModel(const GranpModel&) = delete;
  GranpModel& operator=(const GranpModel&) = delete;
  GranpModel(GranpModel&&) = default;
  GranpModel& operator=(GranpModel&&) = default;

  const ModelConfig& config() const { return config_; }
  ParameterSet& parameters() { return params_; }
  const ParameterSet& parameters() const { return params_; }

  void set_normalization(const data::NormalizationStats& stats);
  const data::NormalizationStats& normalization() const { return stats_; }

  // Grid gating at the last history step, ego-frame translation, z-scoring.
  PreparedScenes prepare(std::span<const TrajectoryScene> scenes, bool with_future) const;

  // H for every scene; r and s as well when `pairs` (requires futures).
  Encoded encode(const PreparedScenes& batch, bool pairs, bool keep_attention = false) const;

  // r*_C [k, d] from queries H_T [k, d], keys H_C [m, d], values r_C [m, d].
  nn::CrossAttention::Output deterministic_path(const Tensor& H_T, const Tensor& H_C,
                                                const Tensor& r_C) const;
  // Mean-pool over pairs, then an MLP to (mu, sigma).
  LatentDistribution latent_path(const Tensor& s) const;
  Decoded decode(const Tensor& H_T, const Tensor& r_star, const Tensor& z) const;

  // Training objective on an episode of scenes in meters. `noise` is [1, L].
  ElboResult elbo_loss(const data::EpisodeBatch& batch, const Tensor& noise) const;

  // Predictions for `queries` given a context set with known futures. Row i
  // of `noise` is the standard-normal draw for latent sample i.
  std::vector<Prediction> predict(std::span<const TrajectoryScene> queries,
                                  std::span<const TrajectoryScene> context,
                                  const std::vector<std::vector<double>>& noise) const;
  std::vector<Prediction> predict(std::span<const TrajectoryScene> queries,
                                  std::span<const TrajectoryScene> context, std::size_t samples,
                                  std::uint64_t seed) const;

 private:
  ModelConfig config_;
  ParameterSet params_;
  data::NormalizationStats stats_;
  nn::Linear embed_;
  std::vector<nn::GatLayer> gat_;
  nn::LstmEncoder lstm_;
  nn::MlpBlock interp_;
  nn::ConvMlpEncoder det_encoder_, lat_encoder_;
  nn::CrossAttention cross_;
  nn::MlpBlock latent_head_;
  nn::MlpBlock decoder_;
};

// z = mu + sigma * noise
Tensor sample_latent(const LatentDistribution& dist, const Tensor& noise);
// Closed-form KL(posterior || prior) between diagonal Gaussians; scalar tensor.
Tensor kl_diag(const LatentDistribution& posterior, const LatentDistribution& prior);
// Sum over all entries of -log N(y; mean, sigma^2).
Tensor gaussian_nll(const Tensor& y, const Tensor& mean, const Tensor& sigma);

// Standard-normal draws, one row per sample.
std::vector<std::vector<double>> standard_normal(std::size_t rows, std::size_t cols,
                                                 std::mt19937_64& rng);

// Attention of the ego node at the last history step.
struct AttentionExport {
  int ego_id = 0;
  std::vector<int> node_ids;                             // ego first
  std::vector<std::vector<std::vector<double>>> layers;  // [layer][head][node]
  std::vector<std::pair<int, double>> top;               // up to 3 neighbors, descending
};
AttentionExport export_attention(const GranpModel& model, const TrajectoryScene& scene);

}  // namespace granp::model
