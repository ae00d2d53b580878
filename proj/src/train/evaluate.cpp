#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "granp/error.hpp"
#include "granp/train.hpp"

namespace granp::train {

namespace {

double sorted_sum(std::vector<double> terms) {
  std::sort(terms.begin(), terms.end());
  return std::accumulate(terms.begin(), terms.end(), 0.0);
}

double axis_nll(double y, double mu, double sigma) {
  const double z = (y - mu) / sigma;
  return 0.5 * std::log(2.0 * std::numbers::pi) + std::log(sigma) + 0.5 * z * z;
}

void check_pairing(std::span<const Prediction> predictions, std::span<const TrajectoryScene> scenes,
                   std::size_t steps) {
  if (predictions.size() != scenes.size()) {
    throw ValueError("evaluation: " + std::to_string(predictions.size()) + " predictions for " +
                     std::to_string(scenes.size()) + " scenes");
  }
  if (scenes.empty()) throw ValueError("evaluation: no scenes");
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    if (scenes[i].future.size() < steps) {
      throw ValueError("evaluation: scene " + std::to_string(i) + " has " +
                       std::to_string(scenes[i].future.size()) + " future steps, need " +
                       std::to_string(steps));
    }
    if (predictions[i].mean.size() < steps || predictions[i].sigma.size() < steps) {
      throw ValueError("evaluation: horizon step " + std::to_string(steps) +
                       " is beyond the predicted length " +
                       std::to_string(predictions[i].mean.size()));
    }
  }
}

}  // namespace

nlohmann::json EvalReport::to_json() const {
  nlohmann::json rmse, nll;
  for (std::size_t h = 0; h < kHorizonSteps.size(); ++h) {
    const std::string key = std::to_string(h + 1) + "s";
    rmse[key] = rmse_m[h];
    nll[key] = nll_nats[h];
  }
  nlohmann::json j{{"rmse_m", rmse}, {"nll_nats", nll}, {"n_scenes", n_scenes}};
  if (!config.is_null()) j["config"] = config;
  return j;
}

EvalReport score_predictions(std::span<const Prediction> predictions,
                             std::span<const TrajectoryScene> scenes) {
  check_pairing(predictions, scenes, kHorizonSteps.back());
  EvalReport report;
  report.n_scenes = scenes.size();
  const double n = static_cast<double>(scenes.size());
  for (std::size_t h = 0; h < kHorizonSteps.size(); ++h) {
    const std::size_t t = kHorizonSteps[h] - 1;
    std::vector<double> se, nll;
    se.reserve(scenes.size());
    nll.reserve(scenes.size());
    for (std::size_t i = 0; i < scenes.size(); ++i) {
      const Position& y = scenes[i].future[t];
      const Position& mu = predictions[i].mean[t];
      const Position& sg = predictions[i].sigma[t];
      se.push_back((mu.x - y.x) * (mu.x - y.x) + (mu.y - y.y) * (mu.y - y.y));
      nll.push_back(axis_nll(y.x, mu.x, sg.x) + axis_nll(y.y, mu.y, sg.y));
    }
    report.rmse_m[h] = std::sqrt(sorted_sum(std::move(se)) / n);
    report.nll_nats[h] = sorted_sum(std::move(nll)) / n;
  }
  return report;
}

double mean_nll(std::span<const Prediction> predictions, std::span<const TrajectoryScene> scenes) {
  if (scenes.empty()) throw ValueError("evaluation: no scenes");
  const std::size_t steps = scenes.front().future.size();
  check_pairing(predictions, scenes, steps);
  std::vector<double> terms;
  terms.reserve(scenes.size() * steps);
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    for (std::size_t t = 0; t < steps; ++t) {
      const Position& y = scenes[i].future[t];
      terms.push_back(axis_nll(y.x, predictions[i].mean[t].x, predictions[i].sigma[t].x) +
                      axis_nll(y.y, predictions[i].mean[t].y, predictions[i].sigma[t].y));
    }
  }
  const double count = static_cast<double>(terms.size());
  return sorted_sum(std::move(terms)) / count;
}

namespace {

Prediction extrapolate(const TrajectoryScene& scene, std::size_t future_steps, bool with_velocity) {
  const auto& h = scene.ego_history();
  if (h.empty()) throw FormatError("baseline: scene with ego " + std::to_string(scene.ego_id) +
                                   " has no history");
  const auto& last = h.back();
  double vx = 0, vy = 0;
  if (with_velocity && h.size() >= 2) {
    vx = (last.x - h[h.size() - 2].x) / data::kStepSeconds;
    vy = (last.y - h[h.size() - 2].y) / data::kStepSeconds;
  }
  Prediction p;
  for (std::size_t t = 1; t <= future_steps; ++t) {
    const double dt = static_cast<double>(t) * data::kStepSeconds;
    const Position mu{last.x + dt * vx, last.y + dt * vy};
    p.mean.push_back(mu);
    p.sigma.push_back({kBaselineSigma, kBaselineSigma});
    p.lower.push_back({mu.x - model::kCiZ * kBaselineSigma, mu.y - model::kCiZ * kBaselineSigma});
    p.upper.push_back({mu.x + model::kCiZ * kBaselineSigma, mu.y + model::kCiZ * kBaselineSigma});
  }
  return p;
}

}  // namespace

Prediction cv_baseline(const TrajectoryScene& scene, std::size_t future_steps) {
  return extrapolate(scene, future_steps, true);
}

Prediction constant_position(const TrajectoryScene& scene, std::size_t future_steps) {
  return extrapolate(scene, future_steps, false);
}

std::vector<Prediction> Checkpoint::predict(std::span<const TrajectoryScene> queries,
                                            std::size_t samples, std::uint64_t seed) const {
  if (reference.empty()) throw StateError("checkpoint has no reference context");
  return model.predict(queries, reference, samples, seed);
}

std::vector<Prediction> predict_all(const Checkpoint& ckpt, std::span<const TrajectoryScene> scenes,
                                    std::size_t samples, std::uint64_t seed) {
  // Batch composition changes padding and GEMM blocking, which moves f32
  // results in the last bits. Chunking in a canonical order makes each
  // scene's prediction depend only on the set of scenes, not their order.
  std::vector<std::string> keys;
  keys.reserve(scenes.size());
  for (const auto& s : scenes) keys.push_back(data::scene_to_json(s).dump());
  std::vector<std::size_t> order(scenes.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return keys[a] < keys[b]; });

  constexpr std::size_t kChunk = 64;
  std::vector<Prediction> out(scenes.size());
  std::vector<TrajectoryScene> chunk;
  for (std::size_t i = 0; i < order.size(); i += kChunk) {
    chunk.clear();
    const std::size_t end = std::min(order.size(), i + kChunk);
    for (std::size_t j = i; j < end; ++j) chunk.push_back(scenes[order[j]]);
    auto part = ckpt.predict(chunk, samples, seed);
    for (std::size_t j = i; j < end; ++j) out[order[j]] = std::move(part[j - i]);
  }
  return out;
}

EvalReport evaluate(const Checkpoint& ckpt, std::span<const TrajectoryScene> scenes,
                    std::size_t samples, std::uint64_t seed) {
  const std::size_t tf = ckpt.model.config().future_steps;
  if (kHorizonSteps.back() > tf) {
    throw ValueError("evaluate: horizon step " + std::to_string(kHorizonSteps.back()) +
                     " is beyond the model's " + std::to_string(tf) + " future steps");
  }
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    if (!scenes[i].has_future()) {
      throw ValueError("evaluate: scene " + std::to_string(i) + " has no ground-truth future");
    }
  }
  const auto preds = predict_all(ckpt, scenes, samples, seed);
  EvalReport report = score_predictions(preds, scenes);
  report.config = ckpt.model.config().to_json();
  report.config["samples"] = samples;
  return report;
}

}  // namespace granp::train
