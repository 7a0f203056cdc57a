#pragma once

// Differentiable primitives. All matrix ops treat their inputs as
// rows x cols (rank-1 tensors are single rows). Reductions run sequentially in
// ascending index order so results are bit-reproducible.

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "stkd/numerics/autodiff.hpp"
#include "stkd/random.hpp"

namespace stkd::num {

inline constexpr double kClamp = 1e-12;

namespace detail {

inline void require(bool ok, const char* op, const std::string& what) {
  if (!ok) throw std::invalid_argument(std::string(op) + ": " + what);
}

template <class T>
inline void require_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), op,
          "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

template <class T>
inline Node<T>& parent(Node<T>& n, std::size_t i) {
  return *n.parents[i];
}

// C[m x n] += A[m x k] * B[k x n]
template <class T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    T* ci = c + i * n;
    const T* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = ai[p];
      if (av == T(0)) continue;
      const T* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// C[m x n] += A[m x k] * B[n x k]^T
template <class T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  if (m >= 4) {
    // Transposing B once lets the inner loop run over contiguous columns.
    std::vector<T> bt(k * n);
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
    gemm_nn(a, bt.data(), c, m, k, n);
    return;
  }
  for (std::size_t i = 0; i < m; ++i) {
    const T* ai = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const T* bj = b + j * k;
      T s = T(0);
      for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
      c[i * n + j] += s;
    }
  }
}

// C[m x n] += A[k x m]^T * B[k x n]
template <class T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t p = 0; p < k; ++p) {
    const T* ap = a + p * m;
    const T* bp = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const T av = ap[i];
      if (av == T(0)) continue;
      T* ci = c + i * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

template <class T>
Tensor<T> like(const Tensor<T>& t) {
  return Tensor<T>(t.shape());
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  const auto m = a.rows(), k = a.cols(), n = b.cols();
  detail::require(b.rows() == k, "matmul", "inner extents " + shape_str(a.shape()) + " * " + shape_str(b.shape()));
  Tensor<T> out = Tensor<T>::matrix(m, n);
  detail::gemm_nn(a.value().data(), b.value().data(), out.data(), m, k, n);
  return make_result<T>("matmul", std::move(out), {a, b}, [m, k, n](Node<T>& self) {
    auto& A = detail::parent(self, 0);
    auto& B = detail::parent(self, 1);
    if (A.requires_grad) detail::gemm_nt(self.grad.data(), B.value.data(), A.ensure_grad().data(), m, n, k);
    if (B.requires_grad) detail::gemm_tn(A.value.data(), self.grad.data(), B.ensure_grad().data(), k, m, n);
  });
}

/// a * b^T with a: m x k, b: n x k.
template <class T>
Var<T> matmul_nt(const Var<T>& a, const Var<T>& b) {
  const auto m = a.rows(), k = a.cols(), n = b.rows();
  detail::require(b.cols() == k, "matmul_nt",
                  "inner extents " + shape_str(a.shape()) + " * " + shape_str(b.shape()) + "^T");
  Tensor<T> out = Tensor<T>::matrix(m, n);
  detail::gemm_nt(a.value().data(), b.value().data(), out.data(), m, k, n);
  return make_result<T>("matmul_nt", std::move(out), {a, b}, [m, k, n](Node<T>& self) {
    auto& A = detail::parent(self, 0);
    auto& B = detail::parent(self, 1);
    if (A.requires_grad) detail::gemm_nn(self.grad.data(), B.value.data(), A.ensure_grad().data(), m, n, k);
    if (B.requires_grad) detail::gemm_tn(self.grad.data(), A.value.data(), B.ensure_grad().data(), n, m, k);
  });
}

template <class T>
Var<T> transpose(const Var<T>& a) {
  const auto m = a.rows(), n = a.cols();
  Tensor<T> out = Tensor<T>::matrix(n, m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out(j, i) = a.value()(i, j);
  return make_result<T>("transpose", std::move(out), {a}, [m, n](Node<T>& self) {
    auto& A = detail::parent(self, 0);
    auto& g = A.ensure_grad();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[j * m + i];
  });
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  detail::require_same_shape(a, b, "add");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return make_result<T>("add", std::move(out), {a, b}, [](Node<T>& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      auto& P = detail::parent(self, p);
      if (!P.requires_grad) continue;
      auto& g = P.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  detail::require_same_shape(a, b, "sub");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return make_result<T>("sub", std::move(out), {a, b}, [](Node<T>& self) {
    auto& A = detail::parent(self, 0);
    auto& B = detail::parent(self, 1);
    if (A.requires_grad) {
      auto& g = A.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (B.requires_grad) {
      auto& g = B.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

/// Elementwise (Hadamard) product.
template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  detail::require_same_shape(a, b, "mul");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return make_result<T>("mul", std::move(out), {a, b}, [](Node<T>& self) {
    auto& A = detail::parent(self, 0);
    auto& B = detail::parent(self, 1);
    if (A.requires_grad) {
      auto& g = A.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * B.value[i];
    }
    if (B.requires_grad) {
      auto& g = B.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * A.value[i];
    }
  });
}

/// a (m x n) + row (1 x n) broadcast over rows.
template <class T>
Var<T> add_row(const Var<T>& a, const Var<T>& row) {
  const auto m = a.rows(), n = a.cols();
  detail::require(row.value().size() == n, "add_row", "bias " + shape_str(row.shape()) + " vs " + shape_str(a.shape()));
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += row.value()[j];
  return make_result<T>("add_row", std::move(out), {a, row}, [m, n](Node<T>& self) {
    auto& A = detail::parent(self, 0);
    auto& R = detail::parent(self, 1);
    if (A.requires_grad) {
      auto& g = A.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (R.requires_grad) {
      auto& g = R.ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[i * n + j];
    }
  });
}

/// a (m x n) scaled per row by col (m x 1).
template <class T>
Var<T> mul_col(const Var<T>& a, const Var<T>& col) {
  const auto m = a.rows(), n = a.cols();
  detail::require(col.value().size() == m, "mul_col",
                  "column " + shape_str(col.shape()) + " vs " + shape_str(a.shape()));
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] *= col.value()[i];
  return make_result<T>("mul_col", std::move(out), {a, col}, [m, n](Node<T>& self) {
    auto& A = detail::parent(self, 0);
    auto& C = detail::parent(self, 1);
    if (A.requires_grad) {
      auto& g = A.ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[i * n + j] * C.value[i];
    }
    if (C.requires_grad) {
      auto& g = C.ensure_grad();
      for (std::size_t i = 0; i < m; ++i) {
        T s = T(0);
        for (std::size_t j = 0; j < n; ++j) s += self.grad[i * n + j] * A.value[i * n + j];
        g[i] += s;
      }
    }
  });
}

template <class T>
Var<T> scale(const Var<T>& a, T s) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v *= s;
  return make_result<T>("scale", std::move(out), {a}, [s](Node<T>& self) {
    auto& g = detail::parent(self, 0).ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * s;
  });
}

template <class T>
Var<T> add_scalar(const Var<T>& a, T c) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v += c;
  return make_result<T>("add_scalar", std::move(out), {a}, [](Node<T>& self) {
    auto& g = detail::parent(self, 0).ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

template <class T>
Var<T> neg(const Var<T>& a) {
  return scale(a, T(-1));
}

// ---------------------------------------------------------------------------
// Pointwise nonlinearities

template <class T>
Var<T> sigmoid(const Var<T>& a) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v = v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
  return make_result<T>("sigmoid", std::move(out), {a}, [](Node<T>& self) {
    auto& g = detail::parent(self, 0).ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T y = self.value[i];
      g[i] += self.grad[i] * y * (T(1) - y);
    }
  });
}

template <class T>
Var<T> tanh(const Var<T>& a) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v = std::tanh(v);
  return make_result<T>("tanh", std::move(out), {a}, [](Node<T>& self) {
    auto& g = detail::parent(self, 0).ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T y = self.value[i];
      g[i] += self.grad[i] * (T(1) - y * y);
    }
  });
}

template <class T>
Var<T> relu(const Var<T>& a) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v = v > T(0) ? v : T(0);
  return make_result<T>("relu", std::move(out), {a}, [](Node<T>& self) {
    auto& P = detail::parent(self, 0);
    auto& g = P.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (P.value[i] > T(0)) g[i] += self.grad[i];
  });
}

/// Natural log of max(a, clamp).
template <class T>
Var<T> log(const Var<T>& a, T clamp = T(kClamp)) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v = std::log(v > clamp ? v : clamp);
  return make_result<T>("log", std::move(out), {a}, [clamp](Node<T>& self) {
    auto& P = detail::parent(self, 0);
    auto& g = P.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (P.value[i] > clamp) g[i] += self.grad[i] / P.value[i];
  });
}

template <class T>
Var<T> exp(const Var<T>& a) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v = std::exp(v);
  return make_result<T>("exp", std::move(out), {a}, [](Node<T>& self) {
    auto& g = detail::parent(self, 0).ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * self.value[i];
  });
}

// ---------------------------------------------------------------------------
// Softmax

/// Row-wise softmax of a / temperature. Entries whose mask byte is 0 get
/// probability exactly 0; an empty mask means every entry is allowed.
template <class T>
Var<T> softmax_rows(const Var<T>& a, T temperature = T(1), std::span<const std::uint8_t> mask = {}) {
  detail::require(temperature > T(0), "softmax", "temperature must be positive");
  const auto m = a.rows(), n = a.cols();
  detail::require(mask.empty() || mask.size() == m * n, "softmax", "mask size mismatch");
  Tensor<T> out = detail::like(a.value());
  for (std::size_t i = 0; i < m; ++i) {
    const T* x = a.value().data() + i * n;
    T* y = out.data() + i * n;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < n; ++j)
      if (mask.empty() || mask[i * n + j]) mx = std::max(mx, x[j]);
    if (mx == -std::numeric_limits<T>::infinity())
      throw std::invalid_argument("softmax: row " + std::to_string(i) + " has no unmasked entries");
    T z = T(0);
    for (std::size_t j = 0; j < n; ++j) {
      if (mask.empty() || mask[i * n + j]) {
        y[j] = std::exp((x[j] - mx) / temperature);
        z += y[j];
      }
    }
    for (std::size_t j = 0; j < n; ++j) y[j] /= z;
  }
  return make_result<T>("softmax", std::move(out), {a}, [m, n, temperature](Node<T>& self) {
    auto& g = detail::parent(self, 0).ensure_grad();
    for (std::size_t i = 0; i < m; ++i) {
      const T* y = self.value.data() + i * n;
      const T* dy = self.grad.data() + i * n;
      T dot = T(0);
      for (std::size_t j = 0; j < n; ++j) dot += dy[j] * y[j];
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += y[j] * (dy[j] - dot) / temperature;
    }
  });
}

// ---------------------------------------------------------------------------
// Indexing and reshaping

/// Embedding lookup: rows `index` of `table`. The gradient is scattered back
/// in ascending position order, so repeated indices accumulate deterministically.
template <class T>
Var<T> gather_rows(const Var<T>& table, std::vector<std::uint32_t> index) {
  const auto n = table.cols(), rows = table.rows();
  detail::require(!index.empty(), "gather_rows", "empty index list");
  Tensor<T> out = Tensor<T>::matrix(index.size(), n);
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= rows)
      throw std::out_of_range("gather_rows: index " + std::to_string(index[i]) + " >= " + std::to_string(rows));
    const T* src = table.value().data() + std::size_t(index[i]) * n;
    std::copy(src, src + n, out.data() + i * n);
  }
  return make_result<T>("gather_rows", std::move(out), {table}, [index = std::move(index), n](Node<T>& self) {
    auto& g = detail::parent(self, 0).ensure_grad();
    for (std::size_t i = 0; i < index.size(); ++i) {
      T* dst = g.data() + std::size_t(index[i]) * n;
      const T* src = self.grad.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) dst[j] += src[j];
    }
  });
}

/// Inverse of gather for distinct targets: row i of src lands at row index[i]
/// of an out_rows x cols zero matrix.
template <class T>
Var<T> scatter_rows(const Var<T>& src, std::vector<std::uint32_t> index, std::size_t out_rows) {
  const auto n = src.cols();
  detail::require(index.size() == src.rows(), "scatter_rows", "index count must equal source rows");
  Tensor<T> out = Tensor<T>::matrix(out_rows, n);
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= out_rows) throw std::out_of_range("scatter_rows: target row out of range");
    std::copy(src.value().data() + i * n, src.value().data() + (i + 1) * n, out.data() + std::size_t(index[i]) * n);
  }
  return make_result<T>("scatter_rows", std::move(out), {src}, [index = std::move(index), n](Node<T>& self) {
    auto& g = detail::parent(self, 0).ensure_grad();
    for (std::size_t i = 0; i < index.size(); ++i)
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[std::size_t(index[i]) * n + j];
  });
}

template <class T>
Var<T> slice_rows(const Var<T>& a, std::size_t begin, std::size_t end) {
  const auto n = a.cols();
  detail::require(begin < end && end <= a.rows(), "slice_rows", "bad row range");
  Tensor<T> out = Tensor<T>::matrix(end - begin, n);
  std::copy(a.value().data() + begin * n, a.value().data() + end * n, out.data());
  return make_result<T>("slice_rows", std::move(out), {a}, [begin, n](Node<T>& self) {
    auto& g = detail::parent(self, 0).ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[begin * n + i] += self.grad[i];
  });
}

template <class T>
Var<T> slice_cols(const Var<T>& a, std::size_t begin, std::size_t end) {
  const auto m = a.rows(), n = a.cols(), w = end - begin;
  detail::require(begin < end && end <= n, "slice_cols", "bad column range");
  Tensor<T> out = Tensor<T>::matrix(m, w);
  for (std::size_t i = 0; i < m; ++i)
    std::copy(a.value().data() + i * n + begin, a.value().data() + i * n + end, out.data() + i * w);
  return make_result<T>("slice_cols", std::move(out), {a}, [m, n, w, begin](Node<T>& self) {
    auto& g = detail::parent(self, 0).ensure_grad();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j) g[i * n + begin + j] += self.grad[i * w + j];
  });
}

template <class T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  detail::require(!parts.empty(), "concat_cols", "no inputs");
  const auto m = parts[0].rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (auto& p : parts) {
    detail::require(p.rows() == m, "concat_cols", "row count mismatch");
    widths.push_back(p.cols());
    total += p.cols();
  }
  Tensor<T> out = Tensor<T>::matrix(m, total);
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    for (std::size_t i = 0; i < m; ++i)
      std::copy(parts[k].value().data() + i * widths[k], parts[k].value().data() + (i + 1) * widths[k],
                out.data() + i * total + off);
    off += widths[k];
  }
  return make_result<T>("concat_cols", std::move(out), parts, [m, total, widths](Node<T>& self) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      auto& P = detail::parent(self, k);
      if (P.requires_grad) {
        auto& g = P.ensure_grad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < widths[k]; ++j) g[i * widths[k] + j] += self.grad[i * total + off + j];
      }
      off += widths[k];
    }
  });
}

/// Mean of row segments: output row s averages rows [offsets[s], offsets[s+1]).
/// Empty segments produce a zero row.
template <class T>
Var<T> segment_mean(const Var<T>& a, std::vector<std::uint32_t> offsets) {
  const auto n = a.cols();
  detail::require(offsets.size() >= 2 && offsets.back() <= a.rows(), "segment_mean", "bad offsets");
  const auto segments = offsets.size() - 1;
  Tensor<T> out = Tensor<T>::matrix(segments, n);
  for (std::size_t s = 0; s < segments; ++s) {
    const auto lo = offsets[s], hi = offsets[s + 1];
    if (hi <= lo) continue;
    const T inv = T(1) / T(hi - lo);
    for (auto r = lo; r < hi; ++r)
      for (std::size_t j = 0; j < n; ++j) out[s * n + j] += a.value()[std::size_t(r) * n + j];
    for (std::size_t j = 0; j < n; ++j) out[s * n + j] *= inv;
  }
  return make_result<T>("segment_mean", std::move(out), {a}, [offsets = std::move(offsets), n](Node<T>& self) {
    auto& g = detail::parent(self, 0).ensure_grad();
    for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
      const auto lo = offsets[s], hi = offsets[s + 1];
      if (hi <= lo) continue;
      const T inv = T(1) / T(hi - lo);
      for (auto r = lo; r < hi; ++r)
        for (std::size_t j = 0; j < n; ++j) g[std::size_t(r) * n + j] += self.grad[s * n + j] * inv;
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions

template <class T>
Var<T> sum(const Var<T>& a) {
  T s = T(0);
  for (auto v : a.value().values()) s += v;
  return make_result<T>("sum", Tensor<T>::scalar(s), {a}, [](Node<T>& self) {
    auto& g = detail::parent(self, 0).ensure_grad();
    const T d = self.grad[0];
    for (auto& v : g.values()) v += d;
  });
}

template <class T>
Var<T> mean(const Var<T>& a) {
  return scale(sum(a), T(1) / T(a.value().size()));
}

/// Single element a[r, c] as a 1x1 tensor.
template <class T>
Var<T> pick(const Var<T>& a, std::size_t r, std::size_t c) {
  if (r >= a.rows() || c >= a.cols())
    throw std::out_of_range("pick: (" + std::to_string(r) + "," + std::to_string(c) + ") outside " +
                            shape_str(a.shape()));
  const auto idx = r * a.cols() + c;
  return make_result<T>("pick", Tensor<T>::scalar(a.value()[idx]), {a}, [idx](Node<T>& self) {
    detail::parent(self, 0).ensure_grad()[idx] += self.grad[0];
  });
}

// ---------------------------------------------------------------------------
// Normalization and regularization

/// Row-wise layer normalization with learned gain and bias (both 1 x cols).
template <class T>
Var<T> layer_norm(const Var<T>& a, const Var<T>& gain, const Var<T>& bias, T eps = T(1e-5)) {
  const auto m = a.rows(), n = a.cols();
  detail::require(gain.value().size() == n && bias.value().size() == n, "layer_norm", "gain/bias width mismatch");
  Tensor<T> out = detail::like(a.value());
  std::vector<T> xhat(m * n), inv_std(m);
  for (std::size_t i = 0; i < m; ++i) {
    const T* x = a.value().data() + i * n;
    T mu = T(0);
    for (std::size_t j = 0; j < n; ++j) mu += x[j];
    mu /= T(n);
    T var = T(0);
    for (std::size_t j = 0; j < n; ++j) var += (x[j] - mu) * (x[j] - mu);
    var /= T(n);
    inv_std[i] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[i * n + j] = (x[j] - mu) * inv_std[i];
      out[i * n + j] = xhat[i * n + j] * gain.value()[j] + bias.value()[j];
    }
  }
  return make_result<T>(
      "layer_norm", std::move(out), {a, gain, bias},
      [m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& self) {
        auto& A = detail::parent(self, 0);
        auto& G = detail::parent(self, 1);
        auto& B = detail::parent(self, 2);
        if (G.requires_grad) {
          auto& g = G.ensure_grad();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[i * n + j] * xhat[i * n + j];
        }
        if (B.requires_grad) {
          auto& g = B.ensure_grad();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[i * n + j];
        }
        if (A.requires_grad) {
          auto& g = A.ensure_grad();
          std::vector<T> dxhat(n);
          for (std::size_t i = 0; i < m; ++i) {
            T mean_d = T(0), mean_dx = T(0);
            for (std::size_t j = 0; j < n; ++j) {
              dxhat[j] = self.grad[i * n + j] * G.value[j];
              mean_d += dxhat[j];
              mean_dx += dxhat[j] * xhat[i * n + j];
            }
            mean_d /= T(n);
            mean_dx /= T(n);
            for (std::size_t j = 0; j < n; ++j)
              g[i * n + j] += inv_std[i] * (dxhat[j] - mean_d - xhat[i * n + j] * mean_dx);
          }
        }
      });
}

/// Inverted dropout. rate == 0 returns the input unchanged.
template <class T>
Var<T> dropout(const Var<T>& a, double rate, Rng& rng) {
  if (rate <= 0.0) return a;
  detail::require(rate < 1.0, "dropout", "rate must be below 1");
  Tensor<T> mask = detail::like(a.value());
  const T keep = T(1) / T(1.0 - rate);
  for (auto& v : mask.values()) v = bernoulli(rng, rate) ? T(0) : keep;
  return mul(a, Var<T>::constant(std::move(mask)));
}

}  // namespace stkd::num
