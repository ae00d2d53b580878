#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "granp/tensor.hpp"

namespace granp::testing {

inline std::vector<double> uniform_values(std::size_t n, std::mt19937_64& rng, double lo = -1.0,
                                          double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

inline ad::Tensor random_tensor(ad::Shape shape, std::mt19937_64& rng, double lo = -1.0,
                                double hi = 1.0) {
  const auto n = ad::shape_numel(shape);
  return ad::Tensor::from_values(std::move(shape), uniform_values(n, rng, lo, hi));
}

inline double worst(const std::map<std::string, double>& report) {
  double w = 0.0;
  for (const auto& [name, err] : report) w = std::max(w, err);
  return w;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double w = 0.0;
  for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) w = std::max(w, std::abs(a[i] - b[i]));
  return a.size() == b.size() ? w : INFINITY;
}

}  // namespace granp::testing
