#pragma once

#include <functional>
#include <map>
#include <string>

#include "granp/tensor.hpp"

namespace granp::ad {

// Compares reverse-mode gradients of a scalar function against central finite
// differences (f(p+h) - f(p-h)) / 2h for every entry of every parameter.
// Returns, per parameter, max |g_ad - g_fd| / max(|g_fd|, 1e-8).
//
// `f` must rebuild its computation on each call; it runs once on a tape and
// then twice per parameter entry with recording disabled. Intended for the
// 64-bit precision mode. Throws NumericError on a non-finite function value.
std::map<std::string, double> grad_check(const std::function<Tensor()>& f, ParameterSet& params,
                                         double perturbation = 1e-5);

// Rounding in f itself limits how well a difference quotient can resolve
// small gradients: each evaluation carries an error of a few ulps of |f|, so
// g_fd is only good to about kRoundoffUlps * eps * |f| / h. The detailed
// report measures every entry against both the relative metric and that
// floor.
inline constexpr double kRoundoffUlps = 10.0;

struct GradCheckStats {
  std::size_t entries = 0;
  double max_rel_error = 0;   // same metric as grad_check
  double max_abs_error = 0;   // max |g_ad - g_fd|
  double max_abs_grad = 0;    // max |g_fd|
  // max of |g_ad - g_fd| / (tolerance * max(|g_fd|, 1e-8) + roundoff floor);
  // <= 1 means the entry agrees up to the tolerance plus the rounding floor
  double max_floor_ratio = 0;
  std::size_t over_tolerance = 0;  // entries with relative error >= tolerance
};

struct GradCheckReport {
  double value = 0;          // f at the base point
  double perturbation = 0;
  double roundoff_floor = 0; // kRoundoffUlps * eps * |f| / h
  std::map<std::string, GradCheckStats> parameters;

  double max_rel_error() const;
  double max_floor_ratio() const;
};

GradCheckReport grad_check_report(const std::function<Tensor()>& f, ParameterSet& params,
                                  double perturbation = 1e-5, double tolerance = 1e-4);

}  // namespace granp::ad
