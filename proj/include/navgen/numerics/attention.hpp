#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "navgen/numerics/ops.hpp"

namespace navgen {

/// Key-validity mask for attention: one byte per key row, nonzero = attend.
/// An empty mask means every key is valid.
using KeyMask = std::vector<unsigned char>;

/// Scaled dot-product attention over `heads` disjoint column groups.
///
/// q is [Lq, D], k and v are [Lk, D]. Each head h uses columns
/// [h*D/heads, (h+1)*D/heads). Masked keys receive zero weight; at least one
/// key must remain valid.
template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, int heads,
                    const KeyMask& key_mask = {}) {
  detail::require_rank2("attention", q.shape());
  detail::require_rank2("attention", k.shape());
  detail::require_rank2("attention", v.shape());
  if (k.shape() != v.shape()) throw_shape("attention", k.shape(), v.shape());
  if (q.cols() != k.cols()) throw_shape("attention", q.shape(), k.shape());
  const int d = q.cols();
  if (heads <= 0 || d % heads != 0) {
    throw ShapeError("attention: model dimension " + std::to_string(d) + " not divisible by " +
                     std::to_string(heads) + " heads");
  }
  const int lq = q.rows(), lk = k.rows(), dh = d / heads;
  if (!key_mask.empty() && static_cast<int>(key_mask.size()) != lk) {
    throw_shape("attention", k.shape(), Shape{static_cast<int>(key_mask.size())});
  }
  bool any_valid = key_mask.empty();
  for (unsigned char m : key_mask) any_valid = any_valid || m;
  if (!any_valid) throw ShapeError("attention: every key is masked");

  using Stride = Eigen::OuterStride<>;
  using CView = Eigen::Map<const RowMat<T>, 0, Stride>;
  using View = Eigen::Map<RowMat<T>, 0, Stride>;
  const T inv_sqrt = T(1) / std::sqrt(T(dh));

  // probs holds softmax weights for every head: [heads][lq][lk].
  Buffer<T> probs(static_cast<std::size_t>(heads) * lq * lk);
  Buffer<T> out(static_cast<std::size_t>(lq) * d);
  for (int h = 0; h < heads; ++h) {
    CView Q(q.data().data() + h * dh, lq, dh, Stride(d));
    CView K(k.data().data() + h * dh, lk, dh, Stride(d));
    CView V(v.data().data() + h * dh, lk, dh, Stride(d));
    MatMap<T> P(probs.data() + static_cast<std::size_t>(h) * lq * lk, lq, lk);
    P.noalias() = (Q * K.transpose()) * inv_sqrt;
    for (int i = 0; i < lq; ++i) {
      T mx = -std::numeric_limits<T>::infinity();
      for (int j = 0; j < lk; ++j) {
        if (!key_mask.empty() && !key_mask[j]) continue;
        mx = std::max(mx, P(i, j));
      }
      T s(0);
      for (int j = 0; j < lk; ++j) {
        const bool valid = key_mask.empty() || key_mask[j];
        P(i, j) = valid ? std::exp(P(i, j) - mx) : T(0);
        s += P(i, j);
      }
      for (int j = 0; j < lk; ++j) P(i, j) /= s;
    }
    View O(out.data() + h * dh, lq, dh, Stride(d));
    O.noalias() = P * V;
  }

  return make_result<T>({lq, d}, std::move(out), {q, k, v},
                        [lq, lk, d, dh, heads, inv_sqrt, probs = std::move(probs)](Node<T>& self) {
    auto& Qn = *self.inputs[0];
    auto& Kn = *self.inputs[1];
    auto& Vn = *self.inputs[2];
    T* gq = Qn.grad_buffer();
    T* gk = Kn.grad_buffer();
    T* gv = Vn.grad_buffer();
    RowMat<T> dP(lq, lk);
    for (int h = 0; h < heads; ++h) {
      CView Q(Qn.value.data() + h * dh, lq, dh, Stride(d));
      CView K(Kn.value.data() + h * dh, lk, dh, Stride(d));
      CView V(Vn.value.data() + h * dh, lk, dh, Stride(d));
      CView dO(self.grad.data() + h * dh, lq, dh, Stride(d));
      ConstMatMap<T> P(probs.data() + static_cast<std::size_t>(h) * lq * lk, lq, lk);
      if (gv) View(gv + h * dh, lk, dh, Stride(d)).noalias() += P.transpose() * dO;
      if (!gq && !gk) continue;
      dP.noalias() = dO * V.transpose();
      for (int i = 0; i < lq; ++i) {
        T dot(0);
        for (int j = 0; j < lk; ++j) dot += dP(i, j) * P(i, j);
        for (int j = 0; j < lk; ++j) dP(i, j) = P(i, j) * (dP(i, j) - dot) * inv_sqrt;
      }
      if (gq) View(gq + h * dh, lq, dh, Stride(d)).noalias() += dP * K;
      if (gk) View(gk + h * dh, lk, dh, Stride(d)).noalias() += dP.transpose() * Q;
    }
  }, "attention");
}

/// Position-dependent transform applied to projected queries or keys before
/// attention (rotary embeddings implement this).
template <typename T>
class PositionTransform {
 public:
  virtual ~PositionTransform() = default;
  virtual Tensor<T> apply(const Tensor<T>& x, int heads) const = 0;
};

}  // namespace navgen
