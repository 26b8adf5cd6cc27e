#pragma once

// Query-based deterministic action head and its composite loss.

#include <string>
#include <vector>

#include "navgen/geometry.hpp"
#include "navgen/model_config.hpp"
#include "navgen/planner.hpp"

namespace navgen::policy {

inline constexpr int kActionWidth = 5;  // X, Y, cos, sin, arrive logit

/// [N, 5] tensor of encoded ground-truth steps.
template <typename T>
Tensor<T> encode_actions(const std::vector<geometry::ActionStep>& steps) {
  Buffer<T> v;
  v.reserve(steps.size() * kActionWidth);
  for (const auto& s : steps) {
    const auto e = geometry::encode_action(s);
    for (double x : {e.x, e.y, e.cos_theta, e.sin_theta, e.arrive}) v.push_back(static_cast<T>(x));
  }
  return Tensor<T>::from({static_cast<int>(steps.size()), kActionWidth}, std::move(v));
}

/// Row r of an [N, 5] tensor as an ActionEncoding.
template <typename T>
geometry::ActionEncoding action_row(const Tensor<T>& a, int r) {
  return {static_cast<double>(a.at(r, 0)), static_cast<double>(a.at(r, 1)), static_cast<double>(a.at(r, 2)),
          static_cast<double>(a.at(r, 3)), static_cast<double>(a.at(r, 4))};
}

template <typename T>
class ActionFormer {
 public:
  ActionFormer() = default;
  ActionFormer(ParamStore<T>& store, const ModelConfig& cfg, const std::string& name = "former") : cfg_(cfg) {
    queries_ = store.create(name + ".queries", {cfg.horizon, cfg.dim}, Init::normal, 0.1);
    for (int b = 0; b < cfg.former_blocks; ++b) {
      blocks_.emplace_back(store, name + ".block" + std::to_string(b), cfg.dim, cfg.former_heads, cfg.former_mlp);
    }
    final_ln_ = LayerNorm<T>(store, name + ".final_ln", cfg.dim);
    head_ = Mlp<T>(store, name + ".head", cfg.dim, cfg.former_mlp, kActionWidth);
  }

  /// Refined query rows after the encoder stack, [N, D].
  Tensor<T> refine(const ContextEmbedding<T>& ctx) const {
    if (ctx.dim() != cfg_.dim) throw_shape("action_former_forward", ctx.tokens.shape(), Shape{-1, cfg_.dim});
    const int n = cfg_.horizon;
    KeyMask mask(static_cast<std::size_t>(n), 1);
    mask.insert(mask.end(), ctx.mask.begin(), ctx.mask.end());
    Tensor<T> x = concat_rows<T>({queries_, ctx.tokens});
    for (const auto& b : blocks_) x = b(x, mask);
    return final_ln_(slice_rows(x, 0, n));
  }

  /// Row-wise head: row i of the output depends on refined query i only.
  Tensor<T> head(const Tensor<T>& refined) const { return head_(refined); }

  Tensor<T> forward(const ContextEmbedding<T>& ctx) const { return head(refine(ctx)); }

  const ModelConfig& config() const { return cfg_; }

 private:
  ModelConfig cfg_;
  Tensor<T> queries_;
  std::vector<EncoderBlock<T>> blocks_;
  LayerNorm<T> final_ln_;
  Mlp<T> head_;
};

struct FormerLossWeights {
  double pos = 1.0, angle = 1.0, arrive = 1.0;
};

template <typename T>
struct FormerLoss {
  Tensor<T> pos, angle, arrive, total;
};

/// L_pos = mean_i (|dX| + |dY|), L_angle = 1 - mean_i (cos cos* + sin sin*),
/// L_arrive = mean BCE-with-logits, total = weighted sum. With `normalize`
/// the predicted (cos, sin) pairs are scaled to unit length first.
template <typename T>
FormerLoss<T> former_loss(const Tensor<T>& pred, const std::vector<geometry::ActionStep>& gt, bool normalize = false,
                          FormerLossWeights w = {}) {
  if (pred.rank() != 2 || pred.cols() != kActionWidth || pred.rows() != static_cast<int>(gt.size())) {
    throw_shape("former_loss", pred.shape(), Shape{static_cast<int>(gt.size()), kActionWidth});
  }
  if (gt.empty()) throw ShapeError("former_loss: empty sequence");
  const Tensor<T> target = encode_actions<T>(gt);
  const T inv_n = T(1) / static_cast<T>(gt.size());
  FormerLoss<T> l;
  l.pos = scale(sum_all(abs(sub(slice_cols(pred, 0, 2), slice_cols(target, 0, 2)))), inv_n);
  Tensor<T> dir = slice_cols(pred, 2, 4);
  if (normalize) dir = normalize_rows(dir);
  l.angle = add_scalar(scale(sum_all(mul(dir, slice_cols(target, 2, 4))), -inv_n), T(1));
  std::vector<T> alpha;
  for (const auto& s : gt) alpha.push_back(static_cast<T>(s.arrive));
  l.arrive = bce_with_logits(slice_cols(pred, 4, 5), std::move(alpha));
  l.total = add(add(scale(l.pos, static_cast<T>(w.pos)), scale(l.angle, static_cast<T>(w.angle))),
                scale(l.arrive, static_cast<T>(w.arrive)));
  return l;
}

}  // namespace navgen::policy
