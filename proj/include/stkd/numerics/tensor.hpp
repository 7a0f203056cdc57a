#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace stkd::num {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

/// Dense row-major array. Rank-1 tensors behave as a single row for the
/// matrix helpers; a rank-0 tensor holds one scalar.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0)) : shape_(std::move(shape)) {
    validate_shape();
    data_.assign(shape_size(shape_), fill);
  }

  Tensor(Shape shape, std::vector<T> values) : shape_(std::move(shape)), data_(std::move(values)) {
    validate_shape();
    if (shape_size(shape_) != data_.size())
      throw std::invalid_argument("tensor " + shape_str(shape_) + " given " + std::to_string(data_.size()) +
                                  " values");
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, T fill = T(0)) { return Tensor({rows, cols}, fill); }
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<T> values) {
    return Tensor({rows, cols}, std::move(values));
  }
  static Tensor row(std::vector<T> values) {
    const auto n = values.size();
    return Tensor({1, n}, std::move(values));
  }
  static Tensor scalar(T v) { return Tensor({1, 1}, std::vector<T>{v}); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  std::size_t rank() const noexcept { return shape_.size(); }

  std::size_t rows() const noexcept {
    if (shape_.size() < 2) return 1;
    return shape_size(Shape(shape_.begin(), shape_.end() - 1));
  }
  std::size_t cols() const noexcept { return shape_.empty() ? 1 : shape_.back(); }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }
  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  std::span<T> row_span(std::size_t r) { return {data_.data() + r * cols(), cols()}; }
  std::span<const T> row_span(std::size_t r) const { return {data_.data() + r * cols(), cols()}; }
  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }

  T item() const {
    if (data_.size() != 1) throw std::invalid_argument("item() on tensor " + shape_str(shape_));
    return data_[0];
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  template <class U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  friend bool operator==(const Tensor& a, const Tensor& b) { return a.shape_ == b.shape_ && a.data_ == b.data_; }

 private:
  void validate_shape() const {
    for (auto e : shape_)
      if (e == 0) throw std::invalid_argument("tensor extents must be positive, got " + shape_str(shape_));
  }

  Shape shape_;
  std::vector<T> data_;
};

}  // namespace stkd::num
