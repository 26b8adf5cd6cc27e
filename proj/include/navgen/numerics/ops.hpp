#pragma once

// Differentiable tensor ops.
//
// Broadcasting for the elementwise binary ops (add, sub, mul) follows exactly
// three rules, checked in order:
//   1. identical shapes;
//   2. the right operand has one element (scalar broadcast);
//   3. the right operand is a row vector, [N] or [1, N], and the left operand
//      is [M, N] (broadcast across rows).
// Anything else is a ShapeError naming both shapes and the op.

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "navgen/numerics/tensor.hpp"

namespace navgen {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

namespace detail {

template <typename T>
ConstMatMap<T> cmat(const Node<T>& n, int r, int c) {
  return ConstMatMap<T>(n.value.data(), r, c);
}

inline void require_rank2(const char* op, const Shape& s) {
  if (s.size() != 2) throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_str(s));
}

enum class Broadcast { same, scalar, row };

template <typename T>
Broadcast broadcast_kind(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() == b.shape()) return Broadcast::same;
  if (b.size() == 1) return Broadcast::scalar;
  const bool b_row = (b.rank() == 1) || (b.rank() == 2 && b.rows() == 1);
  if (b_row && b.cols() == a.cols()) return Broadcast::row;
  throw_shape(op, a.shape(), b.shape());
}

// Sums a gradient laid out like `a` back onto the broadcast operand `b`.
template <typename T>
void reduce_broadcast(Broadcast kind, std::span<const T> g, int cols, T* gb, T sign) {
  switch (kind) {
    case Broadcast::same:
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += sign * g[i];
      break;
    case Broadcast::scalar: {
      T s(0);
      for (T v : g) s += v;
      gb[0] += sign * s;
      break;
    }
    case Broadcast::row:
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % cols] += sign * g[i];
      break;
  }
}

template <typename T>
T broadcast_at(Broadcast kind, std::span<const T> b, std::size_t i, int cols) {
  switch (kind) {
    case Broadcast::same: return b[i];
    case Broadcast::scalar: return b[0];
    case Broadcast::row: return b[i % cols];
  }
  return T(0);
}

}  // namespace detail

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_rank2("matmul", a.shape());
  detail::require_rank2("matmul", b.shape());
  if (a.cols() != b.rows()) throw_shape("matmul", a.shape(), b.shape());
  const int m = a.rows(), k = a.cols(), n = b.cols();
  Buffer<T> out(static_cast<std::size_t>(m) * n);
  MatMap<T>(out.data(), m, n).noalias() = detail::cmat(*a.node(), m, k) * detail::cmat(*b.node(), k, n);
  return make_result<T>({m, n}, std::move(out), {a, b}, [m, k, n](Node<T>& self) {
    ConstMatMap<T> g(self.grad.data(), m, n);
    auto& A = *self.inputs[0];
    auto& B = *self.inputs[1];
    if (T* ga = A.grad_buffer()) MatMap<T>(ga, m, k).noalias() += g * detail::cmat(B, k, n).transpose();
    if (T* gb = B.grad_buffer()) MatMap<T>(gb, k, n).noalias() += detail::cmat(A, m, k).transpose() * g;
  }, "matmul");
}

/// x [M, K] times w [K, N] plus optional bias [N].
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias = {}) {
  detail::require_rank2("linear", x.shape());
  detail::require_rank2("linear", w.shape());
  if (x.cols() != w.rows()) throw_shape("linear", x.shape(), w.shape());
  const int m = x.rows(), k = x.cols(), n = w.cols();
  const bool has_bias = bias.defined();
  if (has_bias && bias.size() != static_cast<std::size_t>(n)) throw_shape("linear", w.shape(), bias.shape());
  Buffer<T> out(static_cast<std::size_t>(m) * n);
  MatMap<T> y(out.data(), m, n);
  y.noalias() = detail::cmat(*x.node(), m, k) * detail::cmat(*w.node(), k, n);
  if (has_bias) {
    Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> bv(bias.data().data(), n);
    y.rowwise() += bv;
  }
  std::vector<Tensor<T>> ins{x, w};
  if (has_bias) ins.push_back(bias);
  return make_result<T>({m, n}, std::move(out), std::move(ins), [m, k, n, has_bias](Node<T>& self) {
    ConstMatMap<T> g(self.grad.data(), m, n);
    auto& X = *self.inputs[0];
    auto& W = *self.inputs[1];
    if (T* gx = X.grad_buffer()) MatMap<T>(gx, m, k).noalias() += g * detail::cmat(W, k, n).transpose();
    if (T* gw = W.grad_buffer()) MatMap<T>(gw, k, n).noalias() += detail::cmat(X, m, k).transpose() * g;
    if (has_bias) {
      if (T* gb = self.inputs[2]->grad_buffer()) {
        Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(gb, n) += g.colwise().sum();
      }
    }
  }, "linear");
}

namespace detail {

template <typename T, typename F, typename GA, typename GB>
Tensor<T> binary(const char* op, const Tensor<T>& a, const Tensor<T>& b, F f, GA da, GB db) {
  const auto kind = broadcast_kind(op, a, b);
  const int cols = a.cols();
  auto av = a.data();
  auto bv = b.data();
  Buffer<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[i], broadcast_at(kind, bv, i, cols));
  return make_result<T>(a.shape(), std::move(out), {a, b}, [kind, cols, da, db](Node<T>& self) {
    auto& A = *self.inputs[0];
    auto& B = *self.inputs[1];
    std::span<const T> g = self.grad;
    std::span<const T> bv = B.value;
    if (T* ga = A.grad_buffer()) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * da(A.value[i], broadcast_at(kind, bv, i, cols));
    }
    if (T* gb = B.grad_buffer()) {
      Buffer<T> tmp(g.size());
      for (std::size_t i = 0; i < g.size(); ++i) tmp[i] = g[i] * db(A.value[i], broadcast_at(kind, bv, i, cols));
      reduce_broadcast<T>(kind, tmp, cols, gb, T(1));
    }
  }, op);
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary<T>("add", a, b, [](T x, T y) { return x + y; }, [](T, T) { return T(1); },
                           [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary<T>("sub", a, b, [](T x, T y) { return x - y; }, [](T, T) { return T(1); },
                           [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary<T>("mul", a, b, [](T x, T y) { return x * y; }, [](T, T y) { return y; },
                           [](T x, T) { return x; });
}

template <typename T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <typename T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <typename T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }

namespace detail {

template <typename T, typename F, typename D>
Tensor<T> unary(const char* op, const Tensor<T>& a, F f, D d) {
  auto av = a.data();
  Buffer<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[i]);
  return make_result<T>(a.shape(), std::move(out), {a}, [d](Node<T>& self) {
    auto& A = *self.inputs[0];
    if (T* ga = A.grad_buffer()) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i] * d(A.value[i], self.value[i]);
    }
  }, op);
}

}  // namespace detail

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  return detail::unary<T>("scale", a, [s](T x) { return x * s; }, [s](T, T) { return s; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
  return detail::unary<T>("add_scalar", a, [s](T x) { return x + s; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> abs(const Tensor<T>& a) {
  return detail::unary<T>("abs", a, [](T x) { return std::abs(x); },
                          [](T x, T) { return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0)); });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return detail::unary<T>("sigmoid", a, [](T x) { return T(1) / (T(1) + std::exp(-x)); },
                          [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> silu(const Tensor<T>& a) {
  return detail::unary<T>("silu", a, [](T x) { return x / (T(1) + std::exp(-x)); },
                          [](T x, T) {
                            const T s = T(1) / (T(1) + std::exp(-x));
                            return s * (T(1) + x * (T(1) - s));
                          });
}

/// tanh-approximated GELU.
template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
  constexpr T c = T(0.7978845608028654);  // sqrt(2/pi)
  constexpr T k = T(0.044715);
  return detail::unary<T>(
      "gelu", a,
      [](T x) { return T(0.5) * x * (T(1) + std::tanh(c * (x + k * x * x * x))); },
      [](T x, T) {
        const T u = c * (x + k * x * x * x);
        const T th = std::tanh(u);
        const T du = c * (T(1) + T(3) * k * x * x);
        return T(0.5) * (T(1) + th) + T(0.5) * x * (T(1) - th * th) * du;
      });
}

/// Row-wise softmax over the last dimension.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& a) {
  const int r = a.rows(), c = a.cols();
  auto av = a.data();
  Buffer<T> out(av.size());
  for (int i = 0; i < r; ++i) {
    const T* x = av.data() + static_cast<std::size_t>(i) * c;
    T* y = out.data() + static_cast<std::size_t>(i) * c;
    T mx = x[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, x[j]);
    T s(0);
    for (int j = 0; j < c; ++j) s += (y[j] = std::exp(x[j] - mx));
    for (int j = 0; j < c; ++j) y[j] /= s;
  }
  return make_result<T>(a.shape(), std::move(out), {a}, [r, c](Node<T>& self) {
    T* ga = self.inputs[0]->grad_buffer();
    if (!ga) return;
    for (int i = 0; i < r; ++i) {
      const T* y = self.value.data() + static_cast<std::size_t>(i) * c;
      const T* g = self.grad.data() + static_cast<std::size_t>(i) * c;
      T dot(0);
      for (int j = 0; j < c; ++j) dot += g[j] * y[j];
      for (int j = 0; j < c; ++j) ga[static_cast<std::size_t>(i) * c + j] += y[j] * (g[j] - dot);
    }
  }, "softmax");
}

inline constexpr double kLayerNormEps = 1e-5;

/// Row-wise layer normalization with optional affine gain [N] and bias [N].
/// A zero-variance row normalizes to zero, so the output is the bias.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain = {}, const Tensor<T>& bias = {},
                     double eps = kLayerNormEps) {
  const int r = x.rows(), c = x.cols();
  const bool has_gain = gain.defined(), has_bias = bias.defined();
  if (has_gain && gain.size() != static_cast<std::size_t>(c)) throw_shape("layer_norm", x.shape(), gain.shape());
  if (has_bias && bias.size() != static_cast<std::size_t>(c)) throw_shape("layer_norm", x.shape(), bias.shape());
  auto xv = x.data();
  Buffer<T> out(xv.size());
  Buffer<T> xhat(xv.size());
  Buffer<T> rstd(r);
  for (int i = 0; i < r; ++i) {
    const T* row = xv.data() + static_cast<std::size_t>(i) * c;
    T mean(0);
    for (int j = 0; j < c; ++j) mean += row[j];
    mean /= T(c);
    T var(0);
    for (int j = 0; j < c; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= T(c);
    rstd[i] = T(1) / std::sqrt(var + T(eps));
    for (int j = 0; j < c; ++j) {
      const std::size_t idx = static_cast<std::size_t>(i) * c + j;
      xhat[idx] = (row[j] - mean) * rstd[i];
      out[idx] = xhat[idx] * (has_gain ? gain[j] : T(1)) + (has_bias ? bias[j] : T(0));
    }
  }
  std::vector<Tensor<T>> ins{x};
  if (has_gain) ins.push_back(gain);
  if (has_bias) ins.push_back(bias);
  return make_result<T>(x.shape(), std::move(out), std::move(ins),
                        [r, c, has_gain, has_bias, xhat = std::move(xhat), rstd = std::move(rstd)](Node<T>& self) {
    std::size_t slot = 1;
    Node<T>* G = has_gain ? self.inputs[slot++].get() : nullptr;
    Node<T>* B = has_bias ? self.inputs[slot++].get() : nullptr;
    const T* g = self.grad.data();
    if (G) {
      if (T* gg = G->grad_buffer()) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) gg[i % c] += g[i] * xhat[i];
      }
    }
    if (B) {
      if (T* gb = B->grad_buffer()) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) gb[i % c] += g[i];
      }
    }
    T* gx = self.inputs[0]->grad_buffer();
    if (!gx) return;
    Buffer<T> dxhat(c);
    for (int i = 0; i < r; ++i) {
      const std::size_t base = static_cast<std::size_t>(i) * c;
      T s1(0), s2(0);
      for (int j = 0; j < c; ++j) {
        dxhat[j] = g[base + j] * (G ? G->value[j] : T(1));
        s1 += dxhat[j];
        s2 += dxhat[j] * xhat[base + j];
      }
      for (int j = 0; j < c; ++j) {
        gx[base + j] += rstd[i] * (dxhat[j] - s1 / T(c) - xhat[base + j] * s2 / T(c));
      }
    }
  }, "layer_norm");
}

/// Row-wise L2 normalization: x / sqrt(|x|^2 + eps).
template <typename T>
Tensor<T> normalize_rows(const Tensor<T>& x, double eps = 1e-12) {
  const int r = x.rows(), c = x.cols();
  auto xv = x.data();
  Buffer<T> out(xv.size()), inv(r);
  for (int i = 0; i < r; ++i) {
    T s(0);
    for (int j = 0; j < c; ++j) s += xv[i * c + j] * xv[i * c + j];
    inv[i] = T(1) / std::sqrt(s + T(eps));
    for (int j = 0; j < c; ++j) out[i * c + j] = xv[i * c + j] * inv[i];
  }
  return make_result<T>(x.shape(), std::move(out), {x}, [r, c, inv = std::move(inv)](Node<T>& self) {
    T* gx = self.inputs[0]->grad_buffer();
    if (!gx) return;
    for (int i = 0; i < r; ++i) {
      T dot(0);
      for (int j = 0; j < c; ++j) dot += self.grad[i * c + j] * self.value[i * c + j];
      for (int j = 0; j < c; ++j) gx[i * c + j] += inv[i] * (self.grad[i * c + j] - self.value[i * c + j] * dot);
    }
  }, "normalize_rows");
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& a) {
  T s(0);
  for (T v : a.data()) s += v;
  return make_result<T>({1}, {s}, {a}, [](Node<T>& self) {
    if (T* ga = self.inputs[0]->grad_buffer()) {
      for (std::size_t i = 0; i < self.inputs[0]->value.size(); ++i) ga[i] += self.grad[0];
    }
  }, "sum");
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& a) {
  return scale(sum_all(a), T(1) / T(a.size()));
}

/// Mean squared error over all elements.
template <typename T>
Tensor<T> mse(const Tensor<T>& pred, const Tensor<T>& target) {
  if (pred.shape() != target.shape()) throw_shape("mse", pred.shape(), target.shape());
  auto p = pred.data();
  auto t = target.data();
  T s(0);
  for (std::size_t i = 0; i < p.size(); ++i) s += (p[i] - t[i]) * (p[i] - t[i]);
  const T n = T(p.size());
  return make_result<T>({1}, {s / n}, {pred, target}, [n](Node<T>& self) {
    auto& P = *self.inputs[0];
    auto& Q = *self.inputs[1];
    const T g = self.grad[0] * T(2) / n;
    T* gp = P.grad_buffer();
    T* gq = Q.grad_buffer();
    for (std::size_t i = 0; i < P.value.size(); ++i) {
      const T d = g * (P.value[i] - Q.value[i]);
      if (gp) gp[i] += d;
      if (gq) gq[i] -= d;
    }
  }, "mse");
}

/// Mean binary cross-entropy with logits against fixed targets in [0, 1].
template <typename T>
Tensor<T> bce_with_logits(const Tensor<T>& logits, std::vector<T> targets) {
  if (targets.size() != logits.size()) {
    throw_shape("bce_with_logits", logits.shape(), Shape{static_cast<int>(targets.size())});
  }
  auto x = logits.data();
  T s(0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    s += std::max(x[i], T(0)) - x[i] * targets[i] + std::log1p(std::exp(-std::abs(x[i])));
  }
  const T n = T(x.size());
  return make_result<T>({1}, {s / n}, {logits}, [n, targets = std::move(targets)](Node<T>& self) {
    auto& X = *self.inputs[0];
    T* gx = X.grad_buffer();
    if (!gx) return;
    for (std::size_t i = 0; i < X.value.size(); ++i) {
      const T sig = T(1) / (T(1) + std::exp(-X.value[i]));
      gx[i] += self.grad[0] * (sig - targets[i]) / n;
    }
  }, "bce_with_logits");
}

template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const int c = parts[0].cols();
  int r = 0;
  for (const auto& p : parts) {
    if (p.cols() != c) throw_shape("concat_rows", parts[0].shape(), p.shape());
    r += p.rows();
  }
  Buffer<T> out;
  out.reserve(static_cast<std::size_t>(r) * c);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  return make_result<T>({r, c}, std::move(out), parts, [](Node<T>& self) {
    std::size_t off = 0;
    for (auto& in : self.inputs) {
      const std::size_t n = in->value.size();
      if (T* g = in->grad_buffer()) {
        for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[off + i];
      }
      off += n;
    }
  }, "concat_rows");
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const int r = parts[0].rows();
  std::vector<int> widths;
  int c = 0;
  for (const auto& p : parts) {
    if (p.rows() != r) throw_shape("concat_cols", parts[0].shape(), p.shape());
    widths.push_back(p.cols());
    c += p.cols();
  }
  Buffer<T> out(static_cast<std::size_t>(r) * c);
  int col0 = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    auto v = parts[k].data();
    for (int i = 0; i < r; ++i) {
      std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(i) * widths[k], widths[k],
                  out.begin() + static_cast<std::ptrdiff_t>(i) * c + col0);
    }
    col0 += widths[k];
  }
  return make_result<T>({r, c}, std::move(out), parts, [r, c, widths](Node<T>& self) {
    int col0 = 0;
    for (std::size_t k = 0; k < self.inputs.size(); ++k) {
      if (T* g = self.inputs[k]->grad_buffer()) {
        for (int i = 0; i < r; ++i) {
          for (int j = 0; j < widths[k]; ++j) g[i * widths[k] + j] += self.grad[i * c + col0 + j];
        }
      }
      col0 += widths[k];
    }
  }, "concat_cols");
}

/// Rows [begin, end) of a matrix.
template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, int begin, int end) {
  const int c = x.cols();
  if (begin < 0 || end > x.rows() || begin > end) {
    throw ShapeError("slice_rows: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") out of bounds for " + shape_str(x.shape()));
  }
  auto v = x.data();
  Buffer<T> out(v.begin() + static_cast<std::ptrdiff_t>(begin) * c, v.begin() + static_cast<std::ptrdiff_t>(end) * c);
  return make_result<T>({end - begin, c}, std::move(out), {x}, [begin, c](Node<T>& self) {
    if (T* g = self.inputs[0]->grad_buffer()) {
      const std::size_t off = static_cast<std::size_t>(begin) * c;
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[off + i] += self.grad[i];
    }
  }, "slice_rows");
}

/// Columns [begin, end) of a matrix.
template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, int begin, int end) {
  const int r = x.rows(), c = x.cols();
  if (begin < 0 || end > c || begin > end) {
    throw ShapeError("slice_cols: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") out of bounds for " + shape_str(x.shape()));
  }
  const int w = end - begin;
  auto v = x.data();
  Buffer<T> out(static_cast<std::size_t>(r) * w);
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < w; ++j) out[i * w + j] = v[i * c + begin + j];
  }
  return make_result<T>({r, w}, std::move(out), {x}, [r, c, w, begin](Node<T>& self) {
    if (T* g = self.inputs[0]->grad_buffer()) {
      for (int i = 0; i < r; ++i) {
        for (int j = 0; j < w; ++j) g[i * c + begin + j] += self.grad[i * w + j];
      }
    }
  }, "slice_cols");
}

/// Embedding lookup: rows of `table` selected by `ids`.
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& table, std::vector<int> ids) {
  const int c = table.cols();
  auto v = table.data();
  Buffer<T> out(ids.size() * static_cast<std::size_t>(c));
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= table.rows()) {
      throw ShapeError("gather_rows: id " + std::to_string(ids[i]) + " out of range for " + shape_str(table.shape()));
    }
    std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(ids[i]) * c, c, out.begin() + static_cast<std::ptrdiff_t>(i) * c);
  }
  const int n = static_cast<int>(ids.size());
  return make_result<T>({n, c}, std::move(out), {table}, [c, ids = std::move(ids)](Node<T>& self) {
    if (T* g = self.inputs[0]->grad_buffer()) {
      for (std::size_t i = 0; i < ids.size(); ++i) {
        for (int j = 0; j < c; ++j) g[static_cast<std::size_t>(ids[i]) * c + j] += self.grad[i * c + j];
      }
    }
  }, "gather_rows");
}

/// Repeats row i of x `counts[i]` times, preserving order.
template <typename T>
Tensor<T> repeat_rows(const Tensor<T>& x, std::vector<int> counts) {
  if (static_cast<int>(counts.size()) != x.rows()) {
    throw_shape("repeat_rows", x.shape(), Shape{static_cast<int>(counts.size())});
  }
  const int c = x.cols();
  int total = 0;
  for (int k : counts) total += k;
  auto v = x.data();
  Buffer<T> out;
  out.reserve(static_cast<std::size_t>(total) * c);
  for (std::size_t i = 0; i < counts.size(); ++i) {
    for (int k = 0; k < counts[i]; ++k) {
      out.insert(out.end(), v.begin() + static_cast<std::ptrdiff_t>(i) * c, v.begin() + static_cast<std::ptrdiff_t>(i + 1) * c);
    }
  }
  return make_result<T>({total, c}, std::move(out), {x}, [c, counts = std::move(counts)](Node<T>& self) {
    T* g = self.inputs[0]->grad_buffer();
    if (!g) return;
    std::size_t row = 0;
    for (std::size_t i = 0; i < counts.size(); ++i) {
      for (int k = 0; k < counts[i]; ++k, ++row) {
        for (int j = 0; j < c; ++j) g[i * c + j] += self.grad[row * c + j];
      }
    }
  }, "repeat_rows");
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel(shape) != x.size()) throw_shape("reshape", x.shape(), shape);
  return make_result<T>(std::move(shape), Buffer<T>(x.data().begin(), x.data().end()), {x}, [](Node<T>& self) {
    if (T* g = self.inputs[0]->grad_buffer()) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
  }, "reshape");
}

/// Sinusoidal embedding of a scalar t: [sin(s t w_0..w_{h-1}), cos(s t w_0..w_{h-1})]
/// with w_i = 10000^(-i/h), h = dim/2 and s = 1000 so t in [0, 1] spans the
/// usual diffusion step range.
template <typename T>
Tensor<T> timestep_embed(double t, int dim) {
  if (dim <= 0 || dim % 2 != 0) throw ShapeError("timestep_embed: dim must be positive and even, got " + std::to_string(dim));
  const int half = dim / 2;
  Buffer<T> out(dim);
  for (int i = 0; i < half; ++i) {
    const double w = std::exp(-std::log(10000.0) * static_cast<double>(i) / half);
    const double a = 1000.0 * t * w;
    out[i] = static_cast<T>(std::sin(a));
    out[half + i] = static_cast<T>(std::cos(a));
  }
  return Tensor<T>::from({1, dim}, std::move(out));
}

template <typename T>
bool all_finite(const Tensor<T>& x) {
  for (T v : x.data()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace navgen
