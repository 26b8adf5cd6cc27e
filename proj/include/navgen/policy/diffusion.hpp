#pragma once

// Flow-matching action head: alternating self- and cross-attention blocks
// over the N action rows, timestep-modulated, with optional fusion taps into
// a running video generator pass.

#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "navgen/flow_matching.hpp"
#include "navgen/policy/former.hpp"
#include "navgen/policy/fusion.hpp"
#include "navgen/worldgen/generator.hpp"

namespace navgen::policy {

template <typename T>
struct PolicyBlock {
  bool cross = false;
  LayerNorm<T> ln1, ln2;
  MultiHeadAttention<T> attn;
  Mlp<T> mlp;
  Linear<T> mod;  // shift1, scale1, gate1, shift2, scale2, gate2

  PolicyBlock() = default;
  PolicyBlock(ParamStore<T>& store, const std::string& name, const ModelConfig& cfg, bool cross_)
      : cross(cross_),
        ln1(store, name + ".ln1", cfg.dim),
        ln2(store, name + ".ln2", cfg.dim),
        attn(store, name + (cross_ ? ".cross_attn" : ".self_attn"), cfg.dim, cfg.dim, cfg.policy_heads),
        mlp(store, name + ".mlp", cfg.dim, cfg.policy_mlp),
        mod(store, name + ".mod", cfg.dim, 6 * cfg.dim, true, Init::fan_in, 0.1) {}
};

template <typename T>
struct PolicyState {
  Tensor<T> x;       // [N, D]
  Tensor<T> signal;  // [1, D]
  std::shared_ptr<std::vector<typename MultiHeadAttention<T>::KvCache>> context_kv;  // one per block, cross only
  KeyMask context_mask;
  int next_block = 0;
};

/// Generator pass the policy may fuse with. The policy advances `state`
/// block by block up to each tap; the caller finishes it afterwards.
template <typename T>
struct VideoStream {
  const worldgen::VideoDiT<T>* dit = nullptr;
  worldgen::DitState<T>* state = nullptr;
};

template <typename T>
class DiffusionPolicy {
 public:
  using KvCaches = std::vector<typename MultiHeadAttention<T>::KvCache>;

  DiffusionPolicy() = default;
  DiffusionPolicy(ParamStore<T>& store, const ModelConfig& cfg, const std::string& name = "policy") : cfg_(cfg) {
    in_proj_ = Linear<T>(store, name + ".in_proj", kActionWidth, cfg.dim);
    pos_ = store.create(name + ".pos", {cfg.horizon, cfg.dim}, Init::normal, 0.1);
    time_mlp_ = Mlp<T>(store, name + ".time_mlp", cfg.time_embed_dim, cfg.dim, cfg.dim);
    for (int b = 0; b < cfg.policy_blocks; ++b) {
      blocks_.emplace_back(store, name + ".block" + std::to_string(b), cfg, b % 2 == 1);
    }
    final_ln_ = LayerNorm<T>(store, name + ".final_ln", cfg.dim);
    final_mod_ = Linear<T>(store, name + ".final_mod", cfg.dim, 2 * cfg.dim, true, Init::fan_in, 0.1);
    out_proj_ = Linear<T>(store, name + ".out_proj", cfg.dim, kActionWidth, true, Init::fan_in, 0.1);
  }

  int blocks() const { return static_cast<int>(blocks_.size()); }
  const ModelConfig& config() const { return cfg_; }

  std::shared_ptr<KvCaches> context_cache(const ContextEmbedding<T>& ctx) const {
    auto kv = std::make_shared<KvCaches>(blocks_.size());
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
      if (blocks_[b].cross) (*kv)[b] = blocks_[b].attn.project_kv(ctx.tokens);
    }
    return kv;
  }

  PolicyState<T> begin(const Tensor<T>& a_t, double t, const ContextEmbedding<T>& ctx,
                       std::shared_ptr<KvCaches> kv = nullptr) const {
    if (a_t.rank() != 2 || a_t.rows() != cfg_.horizon || a_t.cols() != kActionWidth) {
      throw_shape("diffusion_policy_forward", a_t.shape(), Shape{cfg_.horizon, kActionWidth});
    }
    if (ctx.dim() != cfg_.dim) throw_shape("diffusion_policy_forward", ctx.tokens.shape(), Shape{-1, cfg_.dim});
    PolicyState<T> s;
    s.x = add(in_proj_(a_t), pos_);
    s.signal = silu(time_mlp_(timestep_embed<T>(t, cfg_.time_embed_dim)));
    s.context_kv = kv ? std::move(kv) : context_cache(ctx);
    s.context_mask = ctx.mask;
    return s;
  }

  void run_block(PolicyState<T>& s) const {
    const auto& b = blocks_.at(static_cast<std::size_t>(s.next_block));
    const int d = cfg_.dim;
    const Tensor<T> mod = b.mod(s.signal);
    auto part = [&](int i) { return slice_cols(mod, i * d, (i + 1) * d); };
    Tensor<T> h = add(mul(b.ln1(s.x), add_scalar(part(1), T(1))), part(0));
    const Tensor<T> a = b.cross ? b.attn.attend(h, (*s.context_kv)[static_cast<std::size_t>(s.next_block)], s.context_mask)
                                : b.attn(h, h);
    s.x = add(s.x, mul(a, part(2)));
    h = add(mul(b.ln2(s.x), add_scalar(part(4), T(1))), part(3));
    s.x = add(s.x, mul(b.mlp(h), part(5)));
    ++s.next_block;
  }

  Tensor<T> finish(const PolicyState<T>& s) const {
    const int d = cfg_.dim;
    const Tensor<T> mod = final_mod_(s.signal);
    const Tensor<T> h = add(mul(final_ln_(s.x), add_scalar(slice_cols(mod, d, 2 * d), T(1))), slice_cols(mod, 0, d));
    return out_proj_(h);
  }

  /// Velocity over the action rows. With gamma set, every tap of `bank`
  /// exchanges information with `video`, which is advanced in lockstep.
  /// With gamma unset, `bank` and `video` are ignored entirely.
  Tensor<T> forward(const Tensor<T>& a_t, double t, const ContextEmbedding<T>& ctx, const FusionBank<T>* bank = nullptr,
                    bool gamma = false, VideoStream<T> video = {}, std::shared_ptr<KvCaches> kv = nullptr) const {
    if (gamma && bank && !bank->empty() && (!video.dit || !video.state)) {
      throw std::invalid_argument("diffusion_policy_forward: fusion enabled but no generator hidden states supplied");
    }
    PolicyState<T> s = begin(a_t, t, ctx, std::move(kv));
    while (s.next_block < blocks()) {
      const int b = s.next_block;
      run_block(s);
      const FusionTap<T>* tap = gamma && bank ? bank->at_policy_block(b) : nullptr;
      if (!tap) continue;
      if (video.state->next_block > tap->video_block + 1) {
        throw std::logic_error("diffusion_policy_forward: generator already past tapped block");
      }
      while (video.state->next_block <= tap->video_block) video.dit->run_block(*video.state);
      auto [pa, pv] = mmfca(s.x, video.state->x, *tap);
      s.x = pa;
      video.state->x = pv;
    }
    return finish(s);
  }

 private:
  ModelConfig cfg_;
  Linear<T> in_proj_;
  Tensor<T> pos_;
  Mlp<T> time_mlp_;
  std::vector<PolicyBlock<T>> blocks_;
  LayerNorm<T> final_ln_;
  Linear<T> final_mod_, out_proj_;
};

template <typename T>
struct PolicyTerms {
  Tensor<T> loss;
  Tensor<T> velocity;
  Tensor<T> target;  // eps - A
  Tensor<T> a_t;
};

/// Noisy action input at time t. Draws eps from rng.
template <typename T>
Tensor<T> make_action_input(const Tensor<T>& actions, double t, Rng& rng, Tensor<T>* target = nullptr) {
  const Tensor<T> eps = gaussian_like<T>(actions.shape(), rng);
  if (target) *target = flow_target(actions, eps);
  return flow_interpolate(actions, eps, t);
}

/// Policy-only flow-matching loss (fusion off).
template <typename T>
PolicyTerms<T> diffusion_policy_loss(const DiffusionPolicy<T>& policy, const Tensor<T>& actions,
                                     const ContextEmbedding<T>& ctx, double t, Rng& rng) {
  PolicyTerms<T> r;
  r.a_t = make_action_input(actions, t, rng, &r.target);
  r.velocity = policy.forward(r.a_t, t, ctx);
  r.loss = mse(r.velocity, r.target);
  return r;
}

/// Euler integration of the action flow with fusion off.
template <typename T>
Tensor<T> sample_actions(const DiffusionPolicy<T>& policy, const ContextEmbedding<T>& ctx, int steps,
                         std::uint64_t seed) {
  NoGradGuard guard;
  Rng rng(seed);
  Tensor<T> a = gaussian_like<T>({policy.config().horizon, kActionWidth}, rng);
  const auto kv = policy.context_cache(ctx);
  const auto grid = euler_grid(steps);
  for (int s = 0; s < steps; ++s) {
    a = euler_step(a, policy.forward(a, grid[static_cast<std::size_t>(s)], ctx, nullptr, false, {}, kv), 1.0 / steps,
                   s, "sample_actions");
  }
  return a;
}

}  // namespace navgen::policy
