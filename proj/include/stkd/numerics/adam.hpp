#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "stkd/numerics/params.hpp"

namespace stkd::num {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double epsilon = 1e-8;
};

template <class T>
struct AdamState {
  AdamConfig config;
  std::vector<Tensor<T>> first_moment;
  std::vector<Tensor<T>> second_moment;
  std::uint64_t step_count = 0;

  /// Zero moments shaped like `params`.
  static AdamState init(std::span<const Var<T>> params, AdamConfig config = {}) {
    AdamState s;
    s.config = config;
    for (auto& p : params) {
      s.first_moment.emplace_back(p.shape());
      s.second_moment.emplace_back(p.shape());
    }
    return s;
  }
};

/// One bias-corrected Adam update in place. `active`, when non-empty, marks
/// which parameters participate; inactive ones and their moments are left
/// untouched. The step counter advances once per call.
template <class T>
void adam_step(std::span<Var<T>> params, std::span<const Tensor<T>> grads, AdamState<T>& state,
               std::span<const std::uint8_t> active = {}) {
  if (params.size() != grads.size() || params.size() != state.first_moment.size() ||
      params.size() != state.second_moment.size())
    throw std::invalid_argument("adam_step: parameter/gradient/state count mismatch");
  if (!active.empty() && active.size() != params.size())
    throw std::invalid_argument("adam_step: active mask size mismatch");
  for (std::size_t i = 0; i < params.size(); ++i)
    if (params[i].shape() != grads[i].shape() || params[i].shape() != state.first_moment[i].shape())
      throw std::invalid_argument("adam_step: shape mismatch at parameter " + std::to_string(i) + ": " +
                                  shape_str(params[i].shape()) + " vs " + shape_str(grads[i].shape()));

  const auto& c = state.config;
  state.step_count += 1;
  const double t = static_cast<double>(state.step_count);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!active.empty() && !active[i]) continue;
    auto& w = params[i].mutable_value();
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    const auto& g = grads[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = static_cast<double>(g[j]);
      const double mj = c.beta1 * static_cast<double>(m[j]) + (1.0 - c.beta1) * gj;
      const double vj = c.beta2 * static_cast<double>(v[j]) + (1.0 - c.beta2) * gj * gj;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      const double update = c.lr * (mj / bc1) / (std::sqrt(vj / bc2) + c.epsilon);
      w[j] = static_cast<T>(static_cast<double>(w[j]) - update);
    }
  }
}

/// Adam bound to a ParamSet: honours frozen parameters and zero rows, then
/// clears gradients.
template <class T>
class Adam {
 public:
  Adam(ParamSet<T>& params, AdamConfig config) : params_(&params) {
    std::vector<Var<T>> vars;
    for (auto& p : params.items()) vars.push_back(p.var);
    state_ = AdamState<T>::init(vars, config);
  }

  void step() {
    auto& items = params_->items();
    std::vector<Var<T>> vars;
    std::vector<Tensor<T>> grads;
    std::vector<std::uint8_t> active;
    vars.reserve(items.size());
    grads.reserve(items.size());
    for (auto& p : items) {
      vars.push_back(p.var);
      Tensor<T> g = p.var.has_grad() ? p.var.grad() : Tensor<T>(p.var.shape());
      for (auto r : p.zero_rows)
        for (auto& x : g.row_span(r)) x = T(0);
      grads.push_back(std::move(g));
      active.push_back(p.frozen ? 0 : 1);
    }
    adam_step<T>(vars, grads, state_, active);
    params_->zero_grad();
  }

  const AdamState<T>& state() const { return state_; }

 private:
  ParamSet<T>* params_;
  AdamState<T> state_;
};

}  // namespace stkd::num
