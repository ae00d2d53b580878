#include "granp/scene.hpp"

#include <set>
#include <string>

#include "granp/error.hpp"

namespace granp::data {

void validate_scene(const TrajectoryScene& scene, bool require_future, std::size_t history_steps,
                    std::size_t future_steps) {
  const std::string where = "scene with ego " + std::to_string(scene.ego_id);
  if (scene.vehicle_ids.empty() || scene.vehicle_ids.front() != scene.ego_id) {
    throw FormatError(where + ": ego must be the first vehicle");
  }
  if (scene.history.size() != scene.vehicle_ids.size()) {
    throw FormatError(where + ": history count does not match vehicle count");
  }
  std::set<int> ids(scene.vehicle_ids.begin(), scene.vehicle_ids.end());
  if (ids.size() != scene.vehicle_ids.size()) throw FormatError(where + ": duplicate vehicle id");
  for (std::size_t v = 0; v < scene.history.size(); ++v) {
    if (scene.history[v].size() != history_steps) {
      throw FormatError(where + ": vehicle " + std::to_string(scene.vehicle_ids[v]) + " has " +
                        std::to_string(scene.history[v].size()) + " history steps, expected " +
                        std::to_string(history_steps));
    }
    for (const auto& st : scene.history[v]) {
      if (st.s < 0.0) throw FormatError(where + ": negative speed");
    }
  }
  if (require_future && scene.future.size() != future_steps) {
    throw FormatError(where + ": has " + std::to_string(scene.future.size()) +
                      " future steps, expected " + std::to_string(future_steps));
  }
  if (!require_future && !scene.future.empty() && scene.future.size() != future_steps) {
    throw FormatError(where + ": partial future of " + std::to_string(scene.future.size()) + " steps");
  }
}

}  // namespace granp::data
