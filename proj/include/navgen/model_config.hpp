#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "navgen/numerics/tensor.hpp"

namespace navgen {

/// Architecture hyper-parameters shared by every model component.
struct ModelConfig {
  // observations
  int view_resolution = 32;
  int patch = 8;
  int history = 4;
  int horizon = 5;
  int max_instruction = 12;
  int vocab_size = 40;
  // planner
  int dim = 128;
  int planner_blocks = 4;
  int planner_heads = 4;
  int planner_mlp = 256;
  // frame codec and video generator
  int latent_channels = 16;
  int video_dim = 64;
  int video_blocks = 6;
  int video_heads = 4;
  int video_mlp = 128;
  int time_embed_dim = 64;
  double sigma_obs = 0.05;
  double t_cond = 0.0;
  int video_sample_steps = 8;
  double rope_base = 100.0;
  // action former
  int former_blocks = 4;
  int former_heads = 4;
  int former_mlp = 256;
  bool normalize_angle = false;
  // diffusion policy
  int policy_blocks = 8;
  int policy_heads = 4;
  int policy_mlp = 256;
  int action_sample_steps = 8;
  // fusion bridge
  int fusion_dim = 64;
  int fusion_heads = 4;
  int fusion_taps = -1;  // -1: min(policy cross blocks, video blocks)

  std::uint64_t seed = 0;

  int latent_side() const { return view_resolution / patch; }
  int tokens_per_frame() const { return latent_side() * latent_side(); }
  int patch_features() const { return patch * patch * 3; }
  int frame_slots() const { return history + 3; }  // history + current left/front/right
  int context_length() const { return max_instruction + frame_slots() * tokens_per_frame(); }
  int policy_cross_blocks() const { return policy_blocks / 2; }
  int tap_count() const {
    const int natural = std::min(policy_cross_blocks(), video_blocks);
    return fusion_taps < 0 ? natural : std::min(fusion_taps, natural);
  }

  void validate() const {
    auto require = [](bool ok, const std::string& what) {
      if (!ok) throw ShapeError("model config: " + what);
    };
    require(view_resolution > 0 && patch > 0 && view_resolution % patch == 0, "view_resolution must be a multiple of patch");
    require(history >= 0 && horizon > 0, "history >= 0 and horizon > 0");
    require(max_instruction >= 2, "max_instruction must hold bos and eos");
    require(dim % planner_heads == 0 && dim % former_heads == 0 && dim % policy_heads == 0, "dim divisible by heads");
    require(video_dim % video_heads == 0, "video_dim divisible by video_heads");
    require(fusion_dim % fusion_heads == 0, "fusion_dim divisible by fusion_heads");
    require(time_embed_dim % 2 == 0, "time_embed_dim must be even");
    require(sigma_obs >= 0.0 && t_cond >= 0.0 && t_cond <= 1.0, "sigma_obs >= 0 and t_cond in [0, 1]");
  }
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ModelConfig, view_resolution, patch, history, horizon,
                                                max_instruction, vocab_size, dim, planner_blocks, planner_heads,
                                                planner_mlp, latent_channels, video_dim, video_blocks, video_heads,
                                                video_mlp, time_embed_dim, sigma_obs, t_cond, video_sample_steps,
                                                rope_base, former_blocks, former_heads, former_mlp, normalize_angle,
                                                policy_blocks, policy_heads, policy_mlp, action_sample_steps,
                                                fusion_dim, fusion_heads, fusion_taps, seed)

/// Splits a V x V x 3 row-major frame into non-overlapping P x P patches.
/// Result is [(V/P)^2, P*P*3]; patches run row-major over the patch grid and
/// each patch is flattened as (row, col, channel).
template <typename T>
Tensor<T> patchify(std::span<const float> frame, int v, int p) {
  if (frame.size() != static_cast<std::size_t>(v) * v * 3) {
    throw ShapeError("patchify: frame has " + std::to_string(frame.size()) + " values, expected " +
                     std::to_string(v * v * 3));
  }
  if (v % p != 0) throw ShapeError("patchify: resolution not divisible by patch size");
  const int side = v / p, feat = p * p * 3;
  Buffer<T> out(static_cast<std::size_t>(side) * side * feat);
  for (int pr = 0; pr < side; ++pr) {
    for (int pc = 0; pc < side; ++pc) {
      T* dst = out.data() + static_cast<std::size_t>(pr * side + pc) * feat;
      for (int r = 0; r < p; ++r) {
        for (int c = 0; c < p; ++c) {
          const float* src = frame.data() + (static_cast<std::size_t>(pr * p + r) * v + pc * p + c) * 3;
          for (int k = 0; k < 3; ++k) *dst++ = static_cast<T>(src[k]);
        }
      }
    }
  }
  return Tensor<T>::from({side * side, feat}, std::move(out));
}

/// Inverse of patchify.
template <typename T>
std::vector<float> unpatchify(const Tensor<T>& patches, int v, int p) {
  const int side = v / p, feat = p * p * 3;
  if (patches.rows() != side * side || patches.cols() != feat) {
    throw_shape("unpatchify", patches.shape(), Shape{side * side, feat});
  }
  std::vector<float> out(static_cast<std::size_t>(v) * v * 3);
  auto src = patches.data();
  std::size_t i = 0;
  for (int pr = 0; pr < side; ++pr) {
    for (int pc = 0; pc < side; ++pc) {
      for (int r = 0; r < p; ++r) {
        for (int c = 0; c < p; ++c) {
          float* dst = out.data() + (static_cast<std::size_t>(pr * p + r) * v + pc * p + c) * 3;
          for (int k = 0; k < 3; ++k) dst[k] = static_cast<float>(src[i++]);
        }
      }
    }
  }
  return out;
}

}  // namespace navgen
