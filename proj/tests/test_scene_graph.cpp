#include <cmath>
#include <random>

#include "doctest.h"
#include "granp/error.hpp"
#include "granp/scene_graph.hpp"

using namespace granp;
using namespace granp::graph;
using granp::data::Position;
using granp::data::TrajectoryScene;
using granp::data::VehicleState;

namespace {

TrajectoryScene scene_with_offsets(const std::vector<Position>& neighbor_offsets) {
  TrajectoryScene s;
  s.ego_id = 1;
  s.vehicle_ids = {1};
  s.history = {std::vector<VehicleState>(15, VehicleState{3.5, 100.0, 30.0, 0.0})};
  int id = 2;
  for (const auto& off : neighbor_offsets) {
    s.vehicle_ids.push_back(id++);
    s.history.push_back(std::vector<VehicleState>(15, VehicleState{3.5 + off.x, 100.0 + off.y, 28.0, 0.0}));
  }
  return s;
}

}  // namespace

TEST_CASE("grid defaults convert 200 ft x 35 ft to meters") {
  OccupancyGrid grid;
  CHECK(grid.length_m == doctest::Approx(60.96).epsilon(1e-12));
  CHECK(grid.width_m == doctest::Approx(10.668).epsilon(1e-12));
  CHECK(std::abs(grid.delta() - 30.943) < 1e-3);
  CHECK(grid.delta() == doctest::Approx(std::sqrt(30.48 * 30.48 + 5.334 * 5.334)).epsilon(1e-12));
}

TEST_CASE("grid gating keeps the ego and in-grid neighbors") {
  auto s = scene_with_offsets({{0.0, 0.0}, {0.0, 40.0}, {3.5, -30.0}, {6.0, 5.0}, {-3.5, 30.48}});
  auto nodes = select_grid_nodes(s, 14);
  CHECK(nodes == std::vector<int>{1, 2, 4, 6});
}

TEST_CASE("ego-only scene yields the ego alone") {
  auto s = scene_with_offsets({});
  CHECK(select_grid_nodes(s, 14) == std::vector<int>{1});
  CHECK_THROWS_AS(select_grid_nodes(s, 15), ValueError);
}

TEST_CASE("RBF adjacency values") {
  OccupancyGrid grid;
  const double d = grid.delta();
  std::vector<int> ids{1, 2, 3};
  std::vector<Position> pos{{0, 0}, {0, d}, {0, 0}};
  auto adj = build_adjacency(ids, pos, grid);
  CHECK(adj(0, 0) == 1.0);
  CHECK(adj(0, 2) == 1.0);
  CHECK(std::abs(adj(0, 1) - std::exp(-1.0)) < 1e-12);
  CHECK(adj(0, 1) == doctest::Approx(0.367879).epsilon(1e-6));
  CHECK(adj.delta == d);
}

TEST_CASE("adjacency is symmetric, unit-diagonal, bounded and monotone") {
  std::mt19937_64 rng(42);
  std::uniform_real_distribution<double> lat(-5.0, 5.0), lon(-30.0, 30.0);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<int> ids;
    std::vector<Position> pos;
    for (int i = 0; i < 7; ++i) {
      ids.push_back(i * 3);
      pos.push_back({lat(rng), lon(rng)});
    }
    auto adj = build_adjacency(ids, pos);
    for (std::size_t i = 0; i < adj.n; ++i) {
      CHECK(adj(i, i) == 1.0);
      for (std::size_t j = 0; j < adj.n; ++j) {
        CHECK(adj(i, j) == adj(j, i));
        CHECK(adj(i, j) >= 0.0);
        CHECK(adj(i, j) <= 1.0);
      }
    }
    // larger distance from node 0 => strictly smaller weight
    for (std::size_t j = 1; j < adj.n; ++j) {
      for (std::size_t k = 1; k < adj.n; ++k) {
        const double dj = std::hypot(pos[j].x - pos[0].x, pos[j].y - pos[0].y);
        const double dk = std::hypot(pos[k].x - pos[0].x, pos[k].y - pos[0].y);
        if (dj < dk) CHECK(adj(0, j) > adj(0, k));
      }
    }
  }
}

TEST_CASE("adjacency rejects duplicate ids and size mismatches") {
  std::vector<int> dup{1, 1};
  std::vector<Position> pos{{0, 0}, {1, 1}};
  CHECK_THROWS_AS(build_adjacency(dup, pos), ValueError);
  std::vector<int> ids{1, 2, 3};
  CHECK_THROWS_AS(build_adjacency(ids, pos), ShapeError);
  CHECK_THROWS_AS(build_adjacency(std::vector<int>{1}, std::vector<Position>{{0, 0}}, OccupancyGrid{0.0, 1.0}),
                  ValueError);
}
