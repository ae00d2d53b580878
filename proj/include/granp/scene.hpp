#pragma once

#include <cstddef>
#include <vector>

namespace granp::data {

// 3 s of history and 5 s of future at 5 Hz.
inline constexpr std::size_t kHistorySteps = 15;
inline constexpr std::size_t kFutureSteps = 25;
inline constexpr double kSampleRateHz = 5.0;
inline constexpr double kStepSeconds = 1.0 / kSampleRateHz;

// Coordinates follow the model's convention: x is lateral, y longitudinal,
// both in meters. s is speed (m/s, never negative), a the acceleration
// projected on the heading (m/s^2, signed).
struct VehicleState {
  double x = 0, y = 0, s = 0, a = 0;
  bool operator==(const VehicleState&) const = default;
};

struct Position {
  double x = 0, y = 0;
  bool operator==(const Position&) const = default;
};

// One prediction instance: histories of the ego and its grid neighbors, and
// the ego's future. Index 0 of `vehicle_ids`/`history` is always the ego.
struct TrajectoryScene {
  int ego_id = 0;
  std::vector<int> vehicle_ids;
  std::vector<std::vector<VehicleState>> history;
  std::vector<Position> future;  // empty when the future is unknown

  std::size_t vehicle_count() const { return vehicle_ids.size(); }
  const std::vector<VehicleState>& ego_history() const { return history.front(); }
  bool has_future() const { return !future.empty(); }
  bool operator==(const TrajectoryScene&) const = default;
};

// Throws FormatError unless the scene has the ego first, unique ids, exactly
// `history_steps` states per vehicle, non-negative speeds, and (when
// `require_future`) exactly `future_steps` future positions.
void validate_scene(const TrajectoryScene& scene, bool require_future,
                    std::size_t history_steps = kHistorySteps,
                    std::size_t future_steps = kFutureSteps);

}  // namespace granp::data
