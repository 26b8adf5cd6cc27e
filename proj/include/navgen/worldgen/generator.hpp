#pragma once

#include <algorithm>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "navgen/model_config.hpp"
#include "navgen/numerics/layers.hpp"
#include "navgen/planner.hpp"
#include "navgen/worldgen/rope.hpp"

namespace navgen::worldgen {

/// Learned linear patch projection between frames and h x w x c latents.
template <typename T>
struct FrameCodec {
  ModelConfig cfg;
  Linear<T> enc, dec;

  FrameCodec() = default;
  FrameCodec(ParamStore<T>& store, const ModelConfig& c, const std::string& name = "codec")
      : cfg(c),
        enc(store, name + ".enc", c.patch_features(), c.latent_channels),
        dec(store, name + ".dec", c.latent_channels, c.patch_features()) {}

  /// [tokens, P*P*3] patches -> [tokens, c] latent.
  Tensor<T> encode_patches(const Tensor<T>& patches) const {
    if (patches.cols() != cfg.patch_features()) throw_shape("encode_frame", patches.shape(), Shape{-1, cfg.patch_features()});
    return enc(patches);
  }
  Tensor<T> encode(std::span<const float> frame) const {
    return encode_patches(patchify<T>(frame, cfg.view_resolution, cfg.patch));
  }
  /// [tokens, c] latent -> [tokens, P*P*3] patches.
  Tensor<T> decode(const Tensor<T>& latent) const {
    if (latent.cols() != cfg.latent_channels) throw_shape("decode_frame", latent.shape(), Shape{-1, cfg.latent_channels});
    return dec(latent);
  }
  /// One frame's latent back to pixels, clamped to [0, 1].
  std::vector<float> decode_frame(const Tensor<T>& latent) const {
    if (latent.rows() != cfg.tokens_per_frame()) {
      throw_shape("decode_frame", latent.shape(), Shape{cfg.tokens_per_frame(), cfg.latent_channels});
    }
    auto px = unpatchify(decode(latent), cfg.view_resolution, cfg.patch);
    for (auto& v : px) v = std::clamp(v, 0.0f, 1.0f);
    return px;
  }
  Tensor<T> recon_loss(const Tensor<T>& patches) const { return mse(decode(encode_patches(patches)), patches); }
};

/// Per-sample generator input. Conditioning slots come first (in `roles`
/// order), future slots last.
template <typename T>
struct VideoInput {
  Tensor<T> cond;    // [n_cond_slots * tokens_per_frame, c], already carrying observation noise
  Tensor<T> future;  // [n_future_slots * tokens_per_frame, c], the noisy state z_t
  std::vector<SlotRole> roles;
  double t_future = 1.0;
  double t_cond = 0.0;
};

/// Standard slot roles: k history, current front, right, left, then N futures.
inline std::vector<SlotRole> default_roles(int history, int futures) {
  std::vector<SlotRole> r(static_cast<std::size_t>(history), SlotRole::history);
  r.push_back(SlotRole::current_front);
  r.push_back(SlotRole::current_right);
  r.push_back(SlotRole::current_left);
  r.insert(r.end(), static_cast<std::size_t>(futures), SlotRole::future);
  return r;
}

template <typename T>
struct DitBlock {
  LayerNorm<T> ln1, ln_cross, ln2;
  MultiHeadAttention<T> self_attn, cross_attn;
  Mlp<T> mlp;
  Linear<T> mod;  // timestep signal -> shift1, scale1, gate1, shift2, scale2, gate2

  DitBlock() = default;
  DitBlock(ParamStore<T>& store, const std::string& name, const ModelConfig& cfg)
      : ln1(store, name + ".ln1", cfg.video_dim),
        ln_cross(store, name + ".ln_cross", cfg.video_dim),
        ln2(store, name + ".ln2", cfg.video_dim),
        self_attn(store, name + ".self_attn", cfg.video_dim, cfg.video_dim, cfg.video_heads),
        cross_attn(store, name + ".cross_attn", cfg.video_dim, cfg.dim, cfg.video_heads),
        mlp(store, name + ".mlp", cfg.video_dim, cfg.video_mlp),
        mod(store, name + ".mod", cfg.video_dim, 6 * cfg.video_dim, true, Init::fan_in, 0.1) {}
};

/// Intermediate state of a generator pass, advanced one block at a time so
/// the fusion bridge can read and write the hidden tokens between blocks.
template <typename T>
struct DitState {
  Tensor<T> x;       // [L, video_dim] hidden tokens
  Tensor<T> signal;  // [2, video_dim] silu(time embedding): row 0 conditioning, row 1 future
  std::vector<int> counts;  // tokens per signal row
  std::shared_ptr<Rope3D<T>> rope;
  std::shared_ptr<std::vector<typename MultiHeadAttention<T>::KvCache>> context_kv;
  KeyMask context_mask;
  int future_tokens = 0;
  int next_block = 0;
};

template <typename T>
class VideoDiT {
 public:
  using KvCaches = std::vector<typename MultiHeadAttention<T>::KvCache>;

  VideoDiT() = default;
  VideoDiT(ParamStore<T>& store, const ModelConfig& cfg, const std::string& name = "generator") : cfg_(cfg) {
    in_proj_ = Linear<T>(store, name + ".in_proj", cfg.latent_channels, cfg.video_dim);
    time_mlp_ = Mlp<T>(store, name + ".time_mlp", cfg.time_embed_dim, cfg.video_dim, cfg.video_dim);
    for (int b = 0; b < cfg.video_blocks; ++b) blocks_.emplace_back(store, name + ".block" + std::to_string(b), cfg);
    final_ln_ = LayerNorm<T>(store, name + ".final_ln", cfg.video_dim);
    final_mod_ = Linear<T>(store, name + ".final_mod", cfg.video_dim, 2 * cfg.video_dim, true, Init::fan_in, 0.1);
    out_proj_ = Linear<T>(store, name + ".out_proj", cfg.video_dim, cfg.latent_channels, true, Init::fan_in, 0.1);
    axes_ = default_rope_axes(cfg.video_dim / cfg.video_heads);
  }

  int blocks() const { return static_cast<int>(blocks_.size()); }
  const ModelConfig& config() const { return cfg_; }

  /// Cross-attention keys/values of C for every block; reusable across
  /// sampler steps with the same context.
  std::shared_ptr<KvCaches> context_cache(const ContextEmbedding<T>& ctx) const {
    auto kv = std::make_shared<KvCaches>();
    for (const auto& b : blocks_) kv->push_back(b.cross_attn.project_kv(ctx.tokens));
    return kv;
  }

  DitState<T> begin(const VideoInput<T>& in, const ContextEmbedding<T>& ctx,
                    std::shared_ptr<KvCaches> kv = nullptr) const {
    const int tpf = cfg_.tokens_per_frame();
    int n_future = 0;
    for (SlotRole r : in.roles) n_future += r == SlotRole::future;
    const int n_cond = static_cast<int>(in.roles.size()) - n_future;
    if (in.cond.rows() != n_cond * tpf) throw_shape("dit_forward", in.cond.shape(), Shape{n_cond * tpf, cfg_.latent_channels});
    if (in.future.rows() != n_future * tpf) {
      throw_shape("dit_forward", in.future.shape(), Shape{n_future * tpf, cfg_.latent_channels});
    }
    if (n_future == 0) throw ShapeError("dit_forward: no future slots");
    for (std::size_t i = 0; i < in.roles.size(); ++i) {
      if ((in.roles[i] == SlotRole::future) != (static_cast<int>(i) >= n_cond)) {
        throw ShapeError("dit_forward: future slots must come after every conditioning slot");
      }
    }
    DitState<T> s;
    s.x = in_proj_(concat_rows<T>({in.cond, in.future}));
    const Tensor<T> temb = concat_rows<T>(
        {timestep_embed<T>(in.t_cond, cfg_.time_embed_dim), timestep_embed<T>(in.t_future, cfg_.time_embed_dim)});
    s.signal = silu(time_mlp_(temb));
    s.counts = {n_cond * tpf, n_future * tpf};
    s.rope = std::make_shared<Rope3D<T>>(assign_rope_coords(in.roles, cfg_.latent_side(), cfg_.latent_side()), axes_,
                                         cfg_.rope_base);
    s.context_kv = kv ? std::move(kv) : context_cache(ctx);
    s.context_mask = ctx.mask;
    s.future_tokens = n_future * tpf;
    return s;
  }

  void run_block(DitState<T>& s) const {
    const auto& b = blocks_.at(static_cast<std::size_t>(s.next_block));
    const int d = cfg_.video_dim;
    const Tensor<T> mod = b.mod(s.signal);
    auto part = [&](int i) { return repeat_rows(slice_cols(mod, i * d, (i + 1) * d), s.counts); };
    Tensor<T> h = add(mul(b.ln1(s.x), add_scalar(part(1), T(1))), part(0));
    s.x = add(s.x, mul(part(2), b.self_attn(h, h, {}, s.rope.get(), s.rope.get())));
    s.x = add(s.x, b.cross_attn.attend(b.ln_cross(s.x), (*s.context_kv)[static_cast<std::size_t>(s.next_block)],
                                       s.context_mask));
    h = add(mul(b.ln2(s.x), add_scalar(part(4), T(1))), part(3));
    s.x = add(s.x, mul(part(5), b.mlp(h)));
    ++s.next_block;
  }

  /// Velocity for the future tokens, [future_tokens, c].
  Tensor<T> finish(const DitState<T>& s) const {
    const int d = cfg_.video_dim;
    const Tensor<T> mod = final_mod_(s.signal);
    auto part = [&](int i) { return repeat_rows(slice_cols(mod, i * d, (i + 1) * d), s.counts); };
    const Tensor<T> h = add(mul(final_ln_(s.x), add_scalar(part(1), T(1))), part(0));
    const int l = s.x.rows();
    return out_proj_(slice_rows(h, l - s.future_tokens, l));
  }

  Tensor<T> forward(const VideoInput<T>& in, const ContextEmbedding<T>& ctx, std::vector<Tensor<T>>* hidden = nullptr,
                    std::shared_ptr<KvCaches> kv = nullptr) const {
    DitState<T> s = begin(in, ctx, std::move(kv));
    while (s.next_block < blocks()) {
      run_block(s);
      if (hidden) hidden->push_back(s.x);
    }
    return finish(s);
  }

 private:
  ModelConfig cfg_;
  Linear<T> in_proj_;
  Mlp<T> time_mlp_;
  std::vector<DitBlock<T>> blocks_;
  LayerNorm<T> final_ln_;
  Linear<T> final_mod_, out_proj_;
  RopeAxes axes_;
};

}  // namespace navgen::worldgen
