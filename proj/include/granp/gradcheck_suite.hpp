#pragma once

// The 64-bit finite-difference suite behind `granp gradcheck`: every
// primitive, every layer, the pair encoder, and the full training objective
// on a two-scene batch.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace granp::suite {

inline constexpr double kGradTolerance = 1e-4;
inline constexpr double kGradStep = 1e-5;

struct SuiteRow {
  std::string group;  // "primitive", "layer" or "model"
  std::string name;
  std::size_t entries = 0;
  double max_rel_error = 0;
  double max_abs_error = 0;
  double floor_ratio = 0;  // see GradCheckReport::max_floor_ratio
  std::size_t over_tolerance = 0;
  double seconds = 0;

  bool passed() const { return max_rel_error < kGradTolerance; }
};

// Runs under 64-bit precision regardless of the global setting. `on_row` is
// called as each row finishes.
std::vector<SuiteRow> run_gradcheck_suite(std::uint64_t seed = 0,
                                          const std::function<void(const SuiteRow&)>& on_row = {});

std::string format_row(const SuiteRow& row);
std::string format_header();

}  // namespace granp::suite
