#include "granp/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace granp::ad {

namespace {

double checked_value(const Tensor& t, const char* where) {
  const double v = t.item();
  if (!std::isfinite(v)) {
    throw NumericError(std::string("grad_check: non-finite function value at ") + where);
  }
  return v;
}

}  // namespace

double GradCheckReport::max_rel_error() const {
  double w = 0;
  for (const auto& [name, s] : parameters) w = std::max(w, s.max_rel_error);
  return w;
}

double GradCheckReport::max_floor_ratio() const {
  double w = 0;
  for (const auto& [name, s] : parameters) w = std::max(w, s.max_floor_ratio);
  return w;
}

GradCheckReport grad_check_report(const std::function<Tensor()>& f, ParameterSet& params,
                                  double perturbation, double tolerance) {
  if (!(perturbation > 0.0)) throw ValueError("grad_check: perturbation must be positive");

  Tape tape;
  Tensor root;
  {
    Tape::Scope scope(&tape);
    root = f();
  }
  GradCheckReport report;
  report.value = checked_value(root, "the base point");
  report.perturbation = perturbation;
  const double eps = precision() == Precision::f64 ? std::numeric_limits<double>::epsilon()
                                                   : std::numeric_limits<float>::epsilon();
  report.roundoff_floor = kRoundoffUlps * eps * std::abs(report.value) / perturbation;
  GradientMap analytic = backward(tape, root, params);
  tape.clear();

  Tape::Scope no_record(nullptr);
  for (auto& p : params.items()) {
    const std::vector<double> g_ad = analytic.at(p.name).to_vector();
    GradCheckStats st;
    st.entries = p.value.numel();
    for (std::size_t i = 0; i < p.value.numel(); ++i) {
      const double original = p.value.at(i);
      p.value.set(i, original + perturbation);
      const double up = checked_value(f(), p.name.c_str());
      p.value.set(i, original - perturbation);
      const double down = checked_value(f(), p.name.c_str());
      p.value.set(i, original);
      const double g_fd = (up - down) / (2.0 * perturbation);
      const double diff = std::abs(g_ad[i] - g_fd);
      const double scale = std::max(std::abs(g_fd), 1e-8);
      const double rel = diff / scale;
      st.max_rel_error = std::max(st.max_rel_error, rel);
      st.max_abs_error = std::max(st.max_abs_error, diff);
      st.max_abs_grad = std::max(st.max_abs_grad, std::abs(g_fd));
      st.max_floor_ratio =
          std::max(st.max_floor_ratio, diff / (tolerance * scale + report.roundoff_floor));
      if (rel >= tolerance) ++st.over_tolerance;
    }
    report.parameters[p.name] = st;
  }
  return report;
}

std::map<std::string, double> grad_check(const std::function<Tensor()>& f, ParameterSet& params,
                                         double perturbation) {
  std::map<std::string, double> out;
  for (const auto& [name, s] : grad_check_report(f, params, perturbation).parameters) {
    out[name] = s.max_rel_error;
  }
  return out;
}

}  // namespace granp::ad
