#pragma once

// Flow-matching objective and Euler sampler for the video generator.

#include <cstdint>
#include <vector>

#include "navgen/flow_matching.hpp"
#include "navgen/worldgen/generator.hpp"

namespace navgen::worldgen {

/// Clean latents of one training sample. Produced by the codec under
/// NoGradGuard, so the flow objective never trains the codec.
template <typename T>
struct LatentGrid {
  Tensor<T> cond;    // [n_cond * tokens_per_frame, c]
  Tensor<T> future;  // [n_future * tokens_per_frame, c]
  std::vector<SlotRole> roles;
};

/// Encodes conditioning and future frames, each given as [tokens, P*P*3]
/// patches, into a detached latent grid.
template <typename T>
LatentGrid<T> encode_grid(const FrameCodec<T>& codec, const std::vector<Tensor<T>>& cond_patches,
                          const std::vector<Tensor<T>>& future_patches, std::vector<SlotRole> roles) {
  if (future_patches.empty()) throw ShapeError("vg_loss: at least one future frame is required");
  NoGradGuard guard;
  LatentGrid<T> g;
  g.cond = codec.encode_patches(concat_rows(cond_patches)).detach();
  g.future = codec.encode_patches(concat_rows(future_patches)).detach();
  g.roles = std::move(roles);
  return g;
}

/// Adds observation noise of level sigma to the conditioning latents.
template <typename T>
Tensor<T> noisy_conditioning(const Tensor<T>& cond, double sigma, Rng& rng) {
  if (sigma <= 0.0) return cond;
  auto c = cond.data();
  Buffer<T> out(c.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = c[i] + static_cast<T>(sigma * rng.normal());
  return Tensor<T>::from(cond.shape(), std::move(out));
}

template <typename T>
struct VgTerms {
  Tensor<T> loss;
  Tensor<T> velocity;  // model output
  Tensor<T> target;    // eps - z_future
  VideoInput<T> input;
};

/// Builds the noisy generator input for time t: future slots at z_t,
/// conditioning slots noised at sigma_obs. Draw order: eps, then
/// observation noise.
template <typename T>
VideoInput<T> make_video_input(const LatentGrid<T>& grid, double t, double sigma_obs, double t_cond, Rng& rng,
                               Tensor<T>* target = nullptr) {
  const Tensor<T> eps = gaussian_like<T>(grid.future.shape(), rng);
  VideoInput<T> in;
  in.future = flow_interpolate(grid.future, eps, t);
  in.cond = noisy_conditioning(grid.cond, sigma_obs, rng);
  in.roles = grid.roles;
  in.t_future = t;
  in.t_cond = t_cond;
  if (target) *target = flow_target(grid.future, eps);
  return in;
}

/// Flow-matching loss restricted to the future tokens. t is supplied by the
/// caller so joint training can share it with the policy objective.
template <typename T>
VgTerms<T> vg_loss(const VideoDiT<T>& dit, const LatentGrid<T>& grid, const ContextEmbedding<T>& ctx, double t,
                   Rng& rng) {
  if (grid.future.rows() == 0) throw ShapeError("vg_loss: at least one future frame is required");
  const auto& cfg = dit.config();
  VgTerms<T> r;
  r.input = make_video_input(grid, t, cfg.sigma_obs, cfg.t_cond, rng, &r.target);
  r.velocity = dit.forward(r.input, ctx);
  r.loss = mse(r.velocity, r.target);
  return r;
}

template <typename T>
struct FutureSample {
  Tensor<T> latent;                       // [N * tokens_per_frame, c]
  std::vector<std::vector<float>> frames;  // N decoded V x V x 3 frames
};

/// Integrates the learned velocity from eps at t = 1 to t = 0 with uniform
/// Euler steps and decodes the future frames. `cond` holds clean
/// conditioning latents; observation noise is drawn from the same seed.
template <typename T>
FutureSample<T> sample_future(const VideoDiT<T>& dit, const FrameCodec<T>& codec, const Tensor<T>& cond,
                              const std::vector<SlotRole>& roles, const ContextEmbedding<T>& ctx, int steps,
                              std::uint64_t seed) {
  NoGradGuard guard;
  const auto& cfg = dit.config();
  int n_future = 0;
  for (SlotRole r : roles) n_future += r == SlotRole::future;
  if (n_future == 0) throw ShapeError("sample_future: no future slots");
  const int tpf = cfg.tokens_per_frame();
  Rng rng(seed);
  Tensor<T> z = gaussian_like<T>({n_future * tpf, cfg.latent_channels}, rng);
  VideoInput<T> in;
  in.cond = noisy_conditioning(cond, cfg.sigma_obs, rng);
  in.roles = roles;
  in.t_cond = cfg.t_cond;
  const auto kv = dit.context_cache(ctx);
  const auto grid = euler_grid(steps);
  for (int s = 0; s < steps; ++s) {
    in.future = z;
    in.t_future = grid[static_cast<std::size_t>(s)];
    z = euler_step(z, dit.forward(in, ctx, nullptr, kv), 1.0 / steps, s, "sample_future");
  }
  FutureSample<T> out;
  out.latent = z;
  for (int m = 0; m < n_future; ++m) out.frames.push_back(codec.decode_frame(slice_rows(z, m * tpf, (m + 1) * tpf)));
  return out;
}

}  // namespace navgen::worldgen
