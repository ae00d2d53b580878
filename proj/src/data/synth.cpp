#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <random>

#include "granp/error.hpp"
#include "granp/pipeline.hpp"

namespace granp::data {

namespace {

constexpr int kLanes = 3;
constexpr double kJitterStd = 0.05;
constexpr double kMinGapM = 8.0;  // between neighbors sharing a lane at the anchor step

using Trajectory = std::function<Position(double)>;

// Samples a continuous trajectory on the 25 Hz grid and keeps every 5th frame.
// Velocity and acceleration come from central differences at 25 Hz.
std::vector<VehicleState> sample(const Trajectory& p, std::size_t steps) {
  const double dt = 1.0 / kSynthSourceHz;
  const int per_sample = kSynthSourceHz / static_cast<int>(kSampleRateHz);
  std::vector<VehicleState> out;
  out.reserve(steps);
  for (std::size_t k = 0; k < steps; ++k) {
    const double t = static_cast<double>(static_cast<int>(k) * per_sample) * dt;
    const Position prev = p(t - dt), cur = p(t), next = p(t + dt);
    const double vx = (next.x - prev.x) / (2 * dt);
    const double vy = (next.y - prev.y) / (2 * dt);
    const double ax = (next.x - 2 * cur.x + prev.x) / (dt * dt);
    const double ay = (next.y - 2 * cur.y + prev.y) / (dt * dt);
    out.push_back({cur.x, cur.y, speed_of(vx, vy), projected_acceleration(vx, vy, ax, ay)});
  }
  return out;
}

double lane_center(int lane) { return lane * kLaneWidthM; }

}  // namespace

double lane_change_profile(double u) {
  u = std::clamp(u, 0.0, 1.0);
  return 3 * u * u - 2 * u * u * u;
}

std::vector<TrajectoryScene> synth_scenes(std::size_t count, std::uint64_t seed,
                                          double lane_keep_fraction) {
  if (count == 0) throw ValueError("synth: scene count must be at least 1");
  if (!(lane_keep_fraction >= 0.0 && lane_keep_fraction <= 1.0)) {
    throw ValueError("synth: lane-keep fraction must lie in [0, 1]");
  }
  std::mt19937_64 rng(seed);
  auto uniform = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };

  const std::size_t total = kHistorySteps + kFutureSteps;
  const double anchor_t = static_cast<double>(kHistorySteps - 1) * kStepSeconds;
  const graph::OccupancyGrid grid;

  std::vector<TrajectoryScene> scenes;
  scenes.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const int lane = pick(0, kLanes - 1);
    const double v = uniform(25.0, 35.0);
    const double y0 = uniform(0.0, 400.0);
    const double x0 = lane_center(lane);
    const bool keep = uniform(0.0, 1.0) < lane_keep_fraction;

    Trajectory ego;
    if (keep) {
      // slow sinusoid: zero mean, std A/sqrt(2) over whole periods
      const double amp = kJitterStd * std::numbers::sqrt2;
      const double freq = uniform(0.1, 0.25);
      const double phase = uniform(0.0, 2 * std::numbers::pi);
      ego = [=](double t) {
        return Position{x0 + amp * std::sin(2 * std::numbers::pi * freq * t + phase), y0 + v * t};
      };
    } else {
      int dir = lane == 0 ? 1 : lane == kLanes - 1 ? -1 : (pick(0, 1) == 0 ? -1 : 1);
      const double shift = dir * kLaneWidthM;
      const double start = uniform(1.0, 3.0);
      const double duration = uniform(3.0, 5.0);
      ego = [=](double t) {
        return Position{x0 + shift * lane_change_profile((t - start) / duration), y0 + v * t};
      };
    }

    TrajectoryScene scene;
    scene.ego_id = static_cast<int>(100 * i + 1);
    scene.vehicle_ids.push_back(scene.ego_id);
    auto ego_states = sample(ego, total);
    scene.history.emplace_back(ego_states.begin(), ego_states.begin() + kHistorySteps);
    for (std::size_t k = kHistorySteps; k < total; ++k) {
      scene.future.push_back({ego_states[k].x, ego_states[k].y});
    }
    const Position ego_anchor{scene.history[0].back().x, scene.history[0].back().y};

    std::vector<int> adjacent;
    for (int l = lane - 1; l <= lane + 1; l += 2) {
      if (l >= 0 && l < kLanes) adjacent.push_back(l);
    }
    const int neighbors = pick(2, 6);
    std::vector<std::pair<int, double>> placed;  // lane, offset at the anchor step
    for (int j = 0; j < neighbors; ++j) {
      const int nl = adjacent[static_cast<std::size_t>(pick(0, static_cast<int>(adjacent.size()) - 1))];
      double offset = uniform(-28.0, 28.0);
      for (int tries = 0; tries < 20; ++tries) {
        const bool clash = std::any_of(placed.begin(), placed.end(), [&](const auto& q) {
          return q.first == nl && std::abs(q.second - offset) < kMinGapM;
        });
        if (!clash) break;
        offset = uniform(-28.0, 28.0);
      }
      placed.emplace_back(nl, offset);
      const double nv = uniform(25.0, 35.0);
      const double nx = lane_center(nl);
      const double ny = y0 + v * anchor_t + offset;
      Trajectory other = [=](double t) { return Position{nx, ny + nv * (t - anchor_t)}; };
      auto states = sample(other, kHistorySteps);
      if (!grid.contains(ego_anchor, {states.back().x, states.back().y})) continue;
      scene.vehicle_ids.push_back(scene.ego_id + 1 + j);
      scene.history.push_back(std::move(states));
    }
    scenes.push_back(std::move(scene));
  }
  return scenes;
}

}  // namespace granp::data
