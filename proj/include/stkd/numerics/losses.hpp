#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>

#include "stkd/numerics/ops.hpp"

namespace stkd::num {

/// How far a probability vector may drift from unit mass before the losses
/// reject it. Single precision accumulates visibly more rounding.
template <class T>
constexpr double prob_tolerance() {
  return std::is_same_v<T, float> ? 1e-3 : 1e-6;
}

namespace detail {

template <class T>
void require_distribution(std::span<const T> p, const char* op) {
  double s = 0.0;
  for (auto v : p) {
    if (v < T(0)) throw std::invalid_argument(std::string(op) + ": negative probability");
    s += static_cast<double>(v);
  }
  if (std::abs(s - 1.0) > prob_tolerance<T>())
    throw std::invalid_argument(std::string(op) + ": probabilities sum to " + std::to_string(s));
}

}  // namespace detail

/// softmax(v / temperature) for a single row, with an optional mask.
template <class T>
Var<T> softmax(const Var<T>& v, T temperature = T(1), std::span<const std::uint8_t> mask = {}) {
  if (v.value().empty()) throw std::invalid_argument("softmax: empty vector");
  if (!(temperature > T(0))) throw std::invalid_argument("softmax: temperature must be positive");
  return softmax_rows(v, temperature, mask);
}

/// -log(pred[target] + 1e-12) for a single probability row.
template <class T>
Var<T> cross_entropy(const Var<T>& pred, std::size_t target) {
  if (target >= pred.value().size())
    throw std::out_of_range("cross_entropy: target " + std::to_string(target) + " outside " +
                            std::to_string(pred.value().size()) + " classes");
  detail::require_distribution<T>(pred.value().values(), "cross_entropy");
  auto p = pick(pred, 0, target);
  return neg(log(add_scalar(p, T(kClamp)), T(0)));
}

/// KL(p || q) = sum p_i ln(p_i / q_i), with 0 ln 0 = 0 and q clamped at 1e-12.
/// p is a constant (the teacher side); the gradient flows into q only.
template <class T>
Var<T> kl_divergence(const Tensor<T>& p, const Var<T>& q) {
  if (p.size() != q.value().size())
    throw std::invalid_argument("kl_divergence: length mismatch " + std::to_string(p.size()) + " vs " +
                                std::to_string(q.value().size()));
  detail::require_distribution<T>(p.values(), "kl_divergence");
  detail::require_distribution<T>(q.value().values(), "kl_divergence");
  const T clamp = T(kClamp);
  T s = T(0);
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= T(0)) continue;
    const T qi = q.value()[i] > clamp ? q.value()[i] : clamp;
    s += p[i] * (std::log(p[i]) - std::log(qi));
  }
  return make_result<T>("kl_divergence", Tensor<T>::scalar(s), {q}, [p, clamp](Node<T>& self) {
    auto& Q = detail::parent(self, 0);
    auto& g = Q.ensure_grad();
    const T d = self.grad[0];
    for (std::size_t i = 0; i < p.size(); ++i)
      if (p[i] > T(0) && Q.value[i] > clamp) g[i] -= d * p[i] / Q.value[i];
  });
}

}  // namespace stkd::num
