#include "granp/scene_graph.hpp"

#include <cmath>
#include <set>
#include <string>

#include "granp/error.hpp"

namespace granp::graph {

double OccupancyGrid::delta() const {
  return std::hypot(length_m / 2.0, width_m / 2.0);
}

bool OccupancyGrid::contains(const data::Position& ego, const data::Position& other) const {
  return std::abs(other.y - ego.y) <= length_m / 2.0 && std::abs(other.x - ego.x) <= width_m / 2.0;
}

void OccupancyGrid::validate() const {
  if (!(length_m > 0.0) || !(width_m > 0.0)) {
    throw ValueError("occupancy grid extents must be positive");
  }
}

std::vector<int> select_grid_nodes(const data::TrajectoryScene& scene, std::size_t reference_time,
                                   const OccupancyGrid& grid) {
  grid.validate();
  if (scene.history.empty() || reference_time >= scene.ego_history().size()) {
    throw ValueError("select_grid_nodes: reference time " + std::to_string(reference_time) +
                     " outside the history window");
  }
  const auto& ego = scene.ego_history()[reference_time];
  std::vector<int> nodes{scene.ego_id};
  for (std::size_t v = 1; v < scene.vehicle_count(); ++v) {
    const auto& st = scene.history[v].at(reference_time);
    if (grid.contains({ego.x, ego.y}, {st.x, st.y})) nodes.push_back(scene.vehicle_ids[v]);
  }
  return nodes;
}

AdjacencyMatrix build_adjacency(std::span<const int> node_ids,
                                std::span<const data::Position> positions,
                                const OccupancyGrid& grid) {
  grid.validate();
  if (node_ids.size() != positions.size()) {
    throw ShapeError("build_adjacency: " + std::to_string(node_ids.size()) + " nodes but " +
                     std::to_string(positions.size()) + " positions");
  }
  std::set<int> seen;
  for (int id : node_ids) {
    if (!seen.insert(id).second) {
      throw ValueError("build_adjacency: duplicate node id " + std::to_string(id));
    }
  }
  AdjacencyMatrix adj;
  adj.n = node_ids.size();
  adj.node_ids.assign(node_ids.begin(), node_ids.end());
  adj.delta = grid.delta();
  adj.weights.assign(adj.n * adj.n, 0.0);
  const double d2 = adj.delta * adj.delta;
  for (std::size_t i = 0; i < adj.n; ++i) {
    adj.weights[i * adj.n + i] = 1.0;
    for (std::size_t j = i + 1; j < adj.n; ++j) {
      const double dx = positions[i].x - positions[j].x;
      const double dy = positions[i].y - positions[j].y;
      const double w = std::exp(-(dx * dx + dy * dy) / d2);
      adj.weights[i * adj.n + j] = w;
      adj.weights[j * adj.n + i] = w;
    }
  }
  return adj;
}

}  // namespace granp::graph
