#pragma once

#include <span>
#include <vector>

#include "granp/scene.hpp"

namespace granp::graph {

inline constexpr double kFeetToMeters = 0.3048;

// Ego-centered rectangle; length runs along the road, width across it.
struct OccupancyGrid {
  double length_m = 200.0 * kFeetToMeters;
  double width_m = 35.0 * kFeetToMeters;

  // RBF bandwidth: distance from the grid center to a corner.
  double delta() const;
  bool contains(const data::Position& ego, const data::Position& other) const;
  void validate() const;
};

// Symmetric interaction weights between vehicles. Row/column i belongs to
// node_ids[i].
struct AdjacencyMatrix {
  std::size_t n = 0;
  std::vector<double> weights;  // row-major n x n
  std::vector<int> node_ids;
  double delta = 0;

  double operator()(std::size_t i, std::size_t j) const { return weights[i * n + j]; }
};

// Ego plus every vehicle inside the grid at `reference_time` (a history
// index). Scene order is preserved, so the ego stays first.
std::vector<int> select_grid_nodes(const data::TrajectoryScene& scene, std::size_t reference_time,
                                   const OccupancyGrid& grid = {});

// A_ij = exp(-dist_ij^2 / delta^2) for every pair of (already grid-gated)
// nodes. Throws ValueError on duplicate ids.
AdjacencyMatrix build_adjacency(std::span<const int> node_ids,
                                std::span<const data::Position> positions,
                                const OccupancyGrid& grid = {});

}  // namespace granp::graph
