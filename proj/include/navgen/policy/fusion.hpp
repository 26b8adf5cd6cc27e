#pragma once

// Bidirectional cross-attention bridge between the action stream of the
// diffusion policy and the hidden tokens of the video generator.

#include <string>
#include <utility>
#include <vector>

#include "navgen/model_config.hpp"
#include "navgen/numerics/layers.hpp"

namespace navgen::policy {

/// One tap: action-to-video and video-to-action attention through a shared
/// width, with zero-initialized output projections.
template <typename T>
struct FusionTap {
  int policy_block = 0;  // index into the policy block stack
  int video_block = 0;   // index into the generator block stack
  int heads = 1;
  LayerNorm<T> ln_a, ln_v;
  Linear<T> a_q, v_k, v_v, a_out;  // action queries over video keys/values
  Linear<T> v_q, a_k, a_v, v_out;  // video queries over action keys/values

  FusionTap() = default;
  FusionTap(ParamStore<T>& store, const std::string& name, int action_dim, int video_dim, int width, int heads_)
      : heads(heads_),
        ln_a(store, name + ".ln_a", action_dim),
        ln_v(store, name + ".ln_v", video_dim),
        a_q(store, name + ".a2v.q", action_dim, width),
        v_k(store, name + ".a2v.k", video_dim, width),
        v_v(store, name + ".a2v.v", video_dim, width),
        a_out(store, name + ".a2v.out", width, action_dim, true, Init::zeros),
        v_q(store, name + ".v2a.q", video_dim, width),
        a_k(store, name + ".v2a.k", action_dim, width),
        a_v(store, name + ".v2a.v", action_dim, width),
        v_out(store, name + ".v2a.out", width, video_dim, true, Init::zeros) {}
};

/// Residual dual cross-attention. Both directions read the inputs as given,
/// so neither update sees the other.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> mmfca(const Tensor<T>& action, const Tensor<T>& video, const FusionTap<T>& tap) {
  if (!all_finite(action) || !all_finite(video)) throw NumericError("mmfca: non-finite input");
  const Tensor<T> a = tap.ln_a(action);
  const Tensor<T> v = tap.ln_v(video);
  Tensor<T> to_action = tap.a_out(attention(tap.a_q(a), tap.v_k(v), tap.v_v(v), tap.heads));
  Tensor<T> to_video = tap.v_out(attention(tap.v_q(v), tap.a_k(a), tap.a_v(a), tap.heads));
  return {add(action, to_action), add(video, to_video)};
}

/// Policy cross-attention blocks sit at odd indices 1, 3, 5, ...
inline std::vector<int> policy_cross_indices(int policy_blocks) {
  std::vector<int> idx;
  for (int b = 1; b < policy_blocks; b += 2) idx.push_back(b);
  return idx;
}

/// Pairs the last `taps` policy cross blocks with the last `taps` generator
/// blocks, both in increasing order.
inline std::vector<std::pair<int, int>> tap_pairs(const ModelConfig& cfg) {
  const auto cross = policy_cross_indices(cfg.policy_blocks);
  const int n = cfg.tap_count();
  std::vector<std::pair<int, int>> pairs;
  for (int j = 0; j < n; ++j) {
    pairs.emplace_back(cross[cross.size() - static_cast<std::size_t>(n - j)], cfg.video_blocks - n + j);
  }
  return pairs;
}

template <typename T>
class FusionBank {
 public:
  FusionBank() = default;
  FusionBank(ParamStore<T>& store, const ModelConfig& cfg, const std::string& name = "fusion") {
    int j = 0;
    for (auto [p, v] : tap_pairs(cfg)) {
      taps_.emplace_back(store, name + ".tap" + std::to_string(j++), cfg.dim, cfg.video_dim, cfg.fusion_dim,
                         cfg.fusion_heads);
      taps_.back().policy_block = p;
      taps_.back().video_block = v;
    }
  }

  const std::vector<FusionTap<T>>& taps() const { return taps_; }
  bool empty() const { return taps_.empty(); }

  /// Tap attached after policy block `b`, or nullptr.
  const FusionTap<T>* at_policy_block(int b) const {
    for (const auto& t : taps_) {
      if (t.policy_block == b) return &t;
    }
    return nullptr;
  }

 private:
  std::vector<FusionTap<T>> taps_;
};

}  // namespace navgen::policy
