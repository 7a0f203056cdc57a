#pragma once

// Reverse-mode vs central-difference gradient verification (f64 only).

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "stkd/numerics/autodiff.hpp"

namespace stkd::num {

struct GradCheckReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
  double rel_tol = 0.0;
  bool passed = true;
};

/// Elementwise error measure: |a - n| / max(|a|, |n|, floor). The floor keeps
/// near-zero gradients from turning rounding noise into huge ratios.
inline constexpr double kGradCheckFloor = 1e-3;

inline double gradcheck_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), kGradCheckFloor});
}

struct NamedVar {
  std::string name;
  Var<double> var;
};

/// Checks d f / d p for every element of every listed variable. `f` rebuilds
/// the graph from the current parameter values and returns a scalar. Any
/// non-finite intermediate raises NumericalError naming the op.
/// `max_per_param` > 0 checks an evenly strided subset of each array.
inline GradCheckReport finite_diff_check(const std::function<Var<double>()>& f, std::span<NamedVar> params,
                                         double rel_tol, std::size_t max_per_param = 0) {
  FiniteCheckGuard checks(true);
  GradCheckReport rep;
  rep.rel_tol = rel_tol;

  for (auto& p : params) p.var.zero_grad();
  {
    auto loss = f();
    if (loss.value().size() != 1) throw std::invalid_argument("finite_diff_check: f must return a scalar");
    backward(loss);
  }
  std::vector<Tensor<double>> analytic;
  for (auto& p : params) analytic.push_back(p.var.has_grad() ? p.var.grad() : Tensor<double>(p.var.shape()));

  NoGradGuard no_grad;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& values = params[k].var.mutable_value();
    const std::size_t n = values.size();
    const std::size_t stride = (max_per_param == 0 || n <= max_per_param) ? 1 : (n + max_per_param - 1) / max_per_param;
    for (std::size_t i = 0; i < n; i += stride) {
      const double x = values[i];
      const double h = 1e-5 * (std::abs(x) + 1.0);
      values[i] = x + h;
      const double up = f().item();
      values[i] = x - h;
      const double down = f().item();
      values[i] = x;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[k][i];
      const double err = gradcheck_error(a, numeric);
      rep.checked += 1;
      rep.max_abs_error = std::max(rep.max_abs_error, std::abs(a - numeric));
      if (err > rep.max_rel_error) {
        rep.max_rel_error = err;
        rep.worst_param = params[k].name;
        rep.worst_index = i;
        rep.worst_analytic = a;
        rep.worst_numeric = numeric;
      }
    }
  }
  rep.passed = rep.max_rel_error <= rel_tol;
  for (auto& p : params) p.var.zero_grad();
  return rep;
}

/// Single-point form: f maps the point to a scalar.
inline GradCheckReport finite_diff_check(const std::function<Var<double>(const Var<double>&)>& f,
                                         Var<double>& point, double rel_tol) {
  if (!point.requires_grad()) point = Var<double>::parameter(point.value());
  std::vector<NamedVar> params{{"point", point}};
  return finite_diff_check([&] { return f(point); }, params, rel_tol);
}

}  // namespace stkd::num
