#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "granp/error.hpp"
#include "granp/pipeline.hpp"

namespace granp::data {

Position ego_origin(const TrajectoryScene& scene) {
  if (scene.history.empty() || scene.history.front().empty()) {
    throw FormatError("scene with ego " + std::to_string(scene.ego_id) + " has no ego history");
  }
  const auto& last = scene.history.front().back();
  return {last.x, last.y};
}

TrajectoryScene to_ego_frame(const TrajectoryScene& scene) {
  const Position o = ego_origin(scene);
  TrajectoryScene out = scene;
  for (auto& h : out.history) {
    for (auto& st : h) {
      st.x -= o.x;
      st.y -= o.y;
    }
  }
  for (auto& p : out.future) {
    p.x -= o.x;
    p.y -= o.y;
  }
  return out;
}

// ---------------------------------------------------------------------------

NormalizationStats::NormalizationStats(std::array<double, 4> mean, std::array<double, 4> stddev)
    : mean_(mean), std_(stddev), fitted_(true) {
  for (std::size_t f = 0; f < 4; ++f) {
    if (!std::isfinite(mean_[f]) || !std::isfinite(std_[f]) || std_[f] <= 0.0) {
      throw ValueError("normalization: feature " + std::to_string(f) +
                       " needs a finite mean and a positive std");
    }
  }
}

NormalizationStats NormalizationStats::fit(std::span<const TrajectoryScene> scenes) {
  if (scenes.size() < 2) {
    throw ValueError("normalization: fitting needs at least 2 scenes, got " +
                     std::to_string(scenes.size()));
  }
  std::array<double, 4> sum{}, mean{}, var{};
  std::array<double, 4> lo, hi;
  lo.fill(std::numeric_limits<double>::infinity());
  hi.fill(-std::numeric_limits<double>::infinity());
  std::size_t count = 0;
  auto values = [](const VehicleState& s) { return std::array<double, 4>{s.x, s.y, s.s, s.a}; };
  for (const auto& sc : scenes) {
    for (const auto& h : sc.history) {
      for (const auto& st : h) {
        const auto v = values(st);
        for (std::size_t f = 0; f < 4; ++f) {
          sum[f] += v[f];
          lo[f] = std::min(lo[f], v[f]);
          hi[f] = std::max(hi[f], v[f]);
        }
        ++count;
      }
    }
  }
  if (count == 0) throw ValueError("normalization: scenes contain no history states");
  for (std::size_t f = 0; f < 4; ++f) {
    // a constant feature keeps its exact value so it maps to exactly zero
    mean[f] = lo[f] == hi[f] ? lo[f] : sum[f] / static_cast<double>(count);
  }
  for (const auto& sc : scenes) {
    for (const auto& h : sc.history) {
      for (const auto& st : h) {
        const auto v = values(st);
        for (std::size_t f = 0; f < 4; ++f) var[f] += (v[f] - mean[f]) * (v[f] - mean[f]);
      }
    }
  }
  std::array<double, 4> sd{};
  for (std::size_t f = 0; f < 4; ++f) {
    sd[f] = std::sqrt(var[f] / static_cast<double>(count));
    if (!(sd[f] >= 1e-8)) sd[f] = 1.0;
  }
  return NormalizationStats(mean, sd);
}

void NormalizationStats::require_fitted() const {
  if (!fitted_) throw StateError("normalization statistics used before fit");
}

VehicleState NormalizationStats::apply(const VehicleState& s) const {
  require_fitted();
  return {(s.x - mean_[0]) / std_[0], (s.y - mean_[1]) / std_[1], (s.s - mean_[2]) / std_[2],
          (s.a - mean_[3]) / std_[3]};
}

VehicleState NormalizationStats::invert(const VehicleState& s) const {
  require_fitted();
  return {s.x * std_[0] + mean_[0], s.y * std_[1] + mean_[1], s.s * std_[2] + mean_[2],
          s.a * std_[3] + mean_[3]};
}

Position NormalizationStats::apply(const Position& p) const {
  require_fitted();
  return {(p.x - mean_[0]) / std_[0], (p.y - mean_[1]) / std_[1]};
}

Position NormalizationStats::invert(const Position& p) const {
  require_fitted();
  return {p.x * std_[0] + mean_[0], p.y * std_[1] + mean_[1]};
}

TrajectoryScene NormalizationStats::apply(const TrajectoryScene& scene) const {
  require_fitted();
  TrajectoryScene out = scene;
  for (auto& h : out.history)
    for (auto& st : h) st = apply(st);
  for (auto& p : out.future) p = apply(p);
  return out;
}

TrajectoryScene NormalizationStats::invert(const TrajectoryScene& scene) const {
  require_fitted();
  TrajectoryScene out = scene;
  for (auto& h : out.history)
    for (auto& st : h) st = invert(st);
  for (auto& p : out.future) p = invert(p);
  return out;
}

nlohmann::json NormalizationStats::to_json() const {
  require_fitted();
  return {{"features", {"x", "y", "s", "a"}}, {"mean", mean_}, {"std", std_}};
}

NormalizationStats NormalizationStats::from_json(const nlohmann::json& j) {
  try {
    return NormalizationStats(j.at("mean").get<std::array<double, 4>>(),
                              j.at("std").get<std::array<double, 4>>());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("normalization statistics: ") + e.what());
  }
}

std::vector<TrajectoryScene> normalize(std::span<const TrajectoryScene> scenes,
                                       const NormalizationStats& stats) {
  std::vector<TrajectoryScene> out;
  out.reserve(scenes.size());
  for (const auto& s : scenes) out.push_back(stats.apply(s));
  return out;
}

std::vector<TrajectoryScene> denormalize(std::span<const TrajectoryScene> scenes,
                                         const NormalizationStats& stats) {
  std::vector<TrajectoryScene> out;
  out.reserve(scenes.size());
  for (const auto& s : scenes) out.push_back(stats.invert(s));
  return out;
}

// ---------------------------------------------------------------------------

EpisodeBatch make_episode(std::span<const TrajectoryScene> scenes, std::uint64_t seed,
                          std::optional<std::size_t> context_size) {
  const std::size_t n = scenes.size();
  if (n < 3) throw ValueError("episode: batch needs at least 3 scenes, got " + std::to_string(n));
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t m;
  if (context_size) {
    m = *context_size;
    if (m < 3 || m > n) {
      throw ValueError("episode: context size " + std::to_string(m) + " outside [3, " +
                       std::to_string(n) + "]");
    }
  } else {
    m = std::uniform_int_distribution<std::size_t>(3, n)(rng);
  }
  EpisodeBatch batch;
  batch.targets.reserve(n);
  for (std::size_t i : order) batch.targets.push_back(scenes[i]);
  batch.context.resize(m);
  std::iota(batch.context.begin(), batch.context.end(), std::size_t{0});
  return batch;
}

}  // namespace granp::data
