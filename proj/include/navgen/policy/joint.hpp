#pragma once

// Generator and diffusion policy run side by side: one forward pass with the
// fusion bridge, the joint training terms, and the synchronized sampler in
// which both flows share the same time grid.

#include <cstdint>
#include <memory>

#include "navgen/policy/diffusion.hpp"
#include "navgen/worldgen/flow.hpp"

namespace navgen::policy {

template <typename T>
struct JointVelocity {
  Tensor<T> action;  // [N, 5]
  Tensor<T> video;   // [future tokens, c]
};

template <typename T>
JointVelocity<T> joint_forward(const DiffusionPolicy<T>& policy, const worldgen::VideoDiT<T>& dit,
                               const FusionBank<T>* bank, bool gamma, const Tensor<T>& a_t, double t_action,
                               const worldgen::VideoInput<T>& video_in, const ContextEmbedding<T>& ctx,
                               std::shared_ptr<typename DiffusionPolicy<T>::KvCaches> policy_kv = nullptr,
                               std::shared_ptr<typename worldgen::VideoDiT<T>::KvCaches> video_kv = nullptr) {
  worldgen::DitState<T> vs = dit.begin(video_in, ctx, std::move(video_kv));
  JointVelocity<T> out;
  out.action = policy.forward(a_t, t_action, ctx, bank, gamma, {&dit, &vs}, std::move(policy_kv));
  while (vs.next_block < dit.blocks()) dit.run_block(vs);
  out.video = dit.finish(vs);
  return out;
}

template <typename T>
struct JointTerms {
  Tensor<T> vg;      // generator flow loss
  Tensor<T> ph;      // policy flow loss
  Tensor<T> total;   // vg + lambda * ph
};

/// Both flow losses at a shared time t. Draw order: action eps, video eps,
/// observation noise.
template <typename T>
JointTerms<T> joint_loss(const DiffusionPolicy<T>& policy, const worldgen::VideoDiT<T>& dit, const FusionBank<T>* bank,
                         bool gamma, const Tensor<T>& actions, const worldgen::LatentGrid<T>& grid,
                         const ContextEmbedding<T>& ctx, double t, double lambda, Rng& rng) {
  Tensor<T> a_target, v_target;
  const Tensor<T> a_t = make_action_input(actions, t, rng, &a_target);
  const auto& cfg = dit.config();
  const auto video_in = worldgen::make_video_input(grid, t, cfg.sigma_obs, cfg.t_cond, rng, &v_target);
  const auto v = joint_forward(policy, dit, bank, gamma, a_t, t, video_in, ctx);
  JointTerms<T> r;
  r.vg = mse(v.video, v_target);
  r.ph = mse(v.action, a_target);
  r.total = add(r.vg, scale(r.ph, static_cast<T>(lambda)));
  return r;
}

template <typename T>
struct JointSample {
  Tensor<T> actions;                    // [N, 5]
  worldgen::FutureSample<T> future;     // predicted latents and frames
};

/// Synchronized Euler rollout of both flows from t = 1 to 0 on the same grid.
/// The action noise is drawn first from `seed`, so with the same seed the
/// initial action state equals that of sample_actions.
template <typename T>
JointSample<T> joint_sample(const DiffusionPolicy<T>& policy, const worldgen::VideoDiT<T>& dit,
                            const worldgen::FrameCodec<T>& codec, const FusionBank<T>* bank, bool gamma,
                            const Tensor<T>& cond, const std::vector<worldgen::SlotRole>& roles,
                            const ContextEmbedding<T>& ctx, int steps, std::uint64_t seed) {
  NoGradGuard guard;
  const auto& cfg = dit.config();
  int n_future = 0;
  for (auto r : roles) n_future += r == worldgen::SlotRole::future;
  const int tpf = cfg.tokens_per_frame();
  Rng rng(seed);
  Tensor<T> a = gaussian_like<T>({policy.config().horizon, kActionWidth}, rng);
  Tensor<T> z = gaussian_like<T>({n_future * tpf, cfg.latent_channels}, rng);
  worldgen::VideoInput<T> in;
  in.cond = worldgen::noisy_conditioning(cond, cfg.sigma_obs, rng);
  in.roles = roles;
  in.t_cond = cfg.t_cond;
  const auto pkv = policy.context_cache(ctx);
  const auto vkv = dit.context_cache(ctx);
  const auto grid = euler_grid(steps);
  for (int s = 0; s < steps; ++s) {
    const double t = grid[static_cast<std::size_t>(s)];
    in.future = z;
    in.t_future = t;
    const auto v = joint_forward(policy, dit, bank, gamma, a, t, in, ctx, pkv, vkv);
    a = euler_step(a, v.action, 1.0 / steps, s, "sample_actions");
    z = euler_step(z, v.video, 1.0 / steps, s, "sample_future");
  }
  JointSample<T> out;
  out.actions = a;
  out.future.latent = z;
  for (int m = 0; m < n_future; ++m) {
    out.future.frames.push_back(codec.decode_frame(slice_rows(z, m * tpf, (m + 1) * tpf)));
  }
  return out;
}

}  // namespace navgen::policy
