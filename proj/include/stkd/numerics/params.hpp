#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "stkd/numerics/autodiff.hpp"
#include "stkd/random.hpp"

namespace stkd::num {

/// A named learnable array. `frozen` parameters never move; `zero_rows`
/// lists rows (e.g. PAD embeddings) whose gradient is discarded before every
/// update so they stay at their initial value.
template <class T>
struct Parameter {
  std::string name;
  Var<T> var;
  bool frozen = false;
  std::vector<std::uint32_t> zero_rows;
};

/// Ordered registry of a model's parameters. Order is registration order and
/// is what the optimizer, checkpoints, and gradient checks iterate.
template <class T>
class ParamSet {
 public:
  Var<T> add(std::string name, Tensor<T> init, std::vector<std::uint32_t> zero_rows = {}) {
    for (auto& p : items_)
      if (p.name == name) throw std::invalid_argument("duplicate parameter '" + name + "'");
    auto v = Var<T>::parameter(std::move(init));
    for (auto r : zero_rows)
      for (auto& x : v.mutable_value().row_span(r)) x = T(0);
    items_.push_back({std::move(name), v, false, std::move(zero_rows)});
    return v;
  }

  Parameter<T>& at(const std::string& name) {
    for (auto& p : items_)
      if (p.name == name) return p;
    throw std::out_of_range("no parameter named '" + name + "'");
  }
  const Parameter<T>& at(const std::string& name) const { return const_cast<ParamSet*>(this)->at(name); }
  bool contains(const std::string& name) const {
    for (auto& p : items_)
      if (p.name == name) return true;
    return false;
  }

  std::vector<Parameter<T>>& items() { return items_; }
  const std::vector<Parameter<T>>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (auto& p : items_) n += p.var.value().size();
    return n;
  }

  void zero_grad() {
    for (auto& p : items_) p.var.zero_grad();
  }

  /// Zeroes the value of a parameter and freezes it.
  void zero_and_freeze(const std::string& name) {
    auto& p = at(name);
    p.var.mutable_value().fill(T(0));
    p.frozen = true;
  }

  /// Deep copy of all values (for best-epoch snapshots).
  std::vector<Tensor<T>> snapshot() const {
    std::vector<Tensor<T>> out;
    out.reserve(items_.size());
    for (auto& p : items_) out.push_back(p.var.value());
    return out;
  }

  void restore(const std::vector<Tensor<T>>& values) {
    if (values.size() != items_.size()) throw std::invalid_argument("restore: parameter count mismatch");
    for (std::size_t i = 0; i < items_.size(); ++i) {
      if (values[i].shape() != items_[i].var.shape())
        throw std::invalid_argument("restore: shape mismatch for '" + items_[i].name + "'");
      items_[i].var.mutable_value() = values[i];
    }
  }

 private:
  std::vector<Parameter<T>> items_;
};

template <class T>
Tensor<T> truncated_normal_tensor(Shape shape, double std, Rng& rng) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<T>(truncated_normal(rng, std));
  return t;
}

/// Glorot-uniform for a fan_in x fan_out matrix.
template <class T>
Tensor<T> xavier_tensor(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  Tensor<T> t = Tensor<T>::matrix(fan_in, fan_out);
  const double limit = std::sqrt(6.0 / double(fan_in + fan_out));
  for (auto& v : t.values()) v = static_cast<T>((2.0 * uniform01(rng) - 1.0) * limit);
  return t;
}

}  // namespace stkd::num
