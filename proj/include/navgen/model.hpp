#pragma once

// All model components in one parameter store, plus the per-step training
// and inference inputs cut from an episode.

#include <algorithm>
#include <array>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "navgen/numerics/checkpoint.hpp"
#include "navgen/planner.hpp"
#include "navgen/policy/joint.hpp"
#include "navgen/simworld/store.hpp"
#include "navgen/worldgen/flow.hpp"

namespace navgen {

enum class Variant { former, diffusion };

inline Variant parse_variant(const std::string& s) {
  if (s == "former") return Variant::former;
  if (s == "diffusion") return Variant::diffusion;
  throw std::invalid_argument("unknown policy variant '" + s + "' (expected former or diffusion)");
}

inline const char* variant_name(Variant v) { return v == Variant::former ? "former" : "diffusion"; }

/// Parameter-name prefixes of each component.
namespace prefix {
inline constexpr const char* planner = "planner.";
inline constexpr const char* codec = "codec.";
inline constexpr const char* generator = "generator.";
inline constexpr const char* former = "former.";
inline constexpr const char* policy = "policy.";
inline constexpr const char* fusion = "fusion.";
}  // namespace prefix

template <typename T>
struct NavModel {
  ModelConfig cfg;
  std::unique_ptr<ParamStore<T>> store;
  Planner<T> planner;
  worldgen::FrameCodec<T> codec;
  worldgen::VideoDiT<T> generator;
  policy::ActionFormer<T> former;
  policy::DiffusionPolicy<T> diffusion;
  policy::FusionBank<T> fusion;

  explicit NavModel(const ModelConfig& c) : cfg(c), store(std::make_unique<ParamStore<T>>(c.seed)) {
    cfg.validate();
    planner = Planner<T>(*store, cfg, "planner");
    codec = worldgen::FrameCodec<T>(*store, cfg, "codec");
    generator = worldgen::VideoDiT<T>(*store, cfg, "generator");
    former = policy::ActionFormer<T>(*store, cfg, "former");
    diffusion = policy::DiffusionPolicy<T>(*store, cfg, "policy");
    fusion = policy::FusionBank<T>(*store, cfg, "fusion");
  }

  void save(const std::string& path, const nlohmann::json& extra = {}, long step = 0) const {
    nlohmann::json j = extra.is_object() ? extra : nlohmann::json::object();
    j["model"] = cfg;
    save_checkpoint(path, *store, j, step);
  }

  /// Loads weights; the stored model config must match this one.
  CheckpointInfo load(const std::string& path) {
    const auto info = peek_checkpoint(path);
    if (!info.config.contains("model") || nlohmann::json(cfg) != info.config.at("model")) {
      throw CheckpointError("checkpoint " + path + " was written for a different model config");
    }
    return load_checkpoint(path, *store);
  }

  /// Model config stored in a checkpoint.
  static ModelConfig config_of(const std::string& path) {
    return peek_checkpoint(path).config.at("model").template get<ModelConfig>();
  }
};

/// Order-sensitive checksum over every parameter whose name starts with
/// `prefix` (all parameters when empty).
template <typename T>
std::uint64_t param_checksum(const ParamStore<T>& store, const std::string& prefix = "") {
  std::uint64_t h = 1469598103934665603ull;
  for (const auto& p : store.all()) {
    if (p.name.rfind(prefix, 0) != 0) continue;
    auto d = p.tensor.data();
    h = fnv1a(p.name, h);
    h = fnv1a(std::string_view(reinterpret_cast<const char*>(d.data()), d.size() * sizeof(T)), h);
  }
  return h;
}

/// Everything a model needs about decision step i of an episode.
struct StepInputs {
  std::vector<int> tokens;
  std::vector<sim::Frame> history;   // k front frames, oldest first, padded with o_0
  std::array<sim::Frame, 3> current; // left, front, right
  std::vector<sim::Frame> future;    // N front frames, clamped at the last step
  std::vector<geometry::ActionStep> actions;  // N targets in the frame of pose i

  PlannerInput planner_input() const {
    PlannerInput in;
    in.tokens = tokens;
    for (const auto& f : history) in.history.emplace_back(f.rgb);
    for (int v = 0; v < 3; ++v) in.current[static_cast<std::size_t>(v)] = current[static_cast<std::size_t>(v)].rgb;
    return in;
  }
};

/// Ground-truth N-step target for step i: poses i+1..i+N (clamped at the
/// final pose) expressed in the frame of pose i.
inline std::vector<geometry::ActionStep> action_targets(const sim::Episode& ep, int i, int horizon,
                                                        double arrive_threshold) {
  std::vector<geometry::Pose> targets;
  const int last = ep.length() - 1;
  for (int m = 1; m <= horizon; ++m) targets.push_back(ep.poses[static_cast<std::size_t>(std::min(i + m, last))]);
  return geometry::to_local_frame(ep.poses[static_cast<std::size_t>(i)], targets, ep.goal_position, arrive_threshold);
}

/// History window for step i given a lookup of past observations.
template <typename Lookup>
std::vector<sim::Frame> history_window(int i, int k, Lookup&& front_at) {
  std::vector<sim::Frame> h;
  for (int j = 0; j < k; ++j) h.push_back(front_at(std::max(0, i - k + j)));
  return h;
}

inline StepInputs step_inputs(const sim::EpisodeSource& src, std::size_t episode, int i, const ModelConfig& cfg,
                              bool with_future = true) {
  const auto& ep = src.episode(episode);
  if (i < 0 || i >= ep.length()) throw std::out_of_range("step index outside episode");
  StepInputs s;
  s.tokens = ep.tokens;
  s.history = history_window(i, cfg.history, [&](int j) { return src.observation(episode, j).front(); });
  const auto now = src.observation(episode, i);
  s.current = now.views;
  if (with_future) {
    const int last = ep.length() - 1;
    for (int m = 1; m <= cfg.horizon; ++m) s.future.push_back(src.observation(episode, std::min(i + m, last)).front());
  }
  s.actions = action_targets(ep, i, cfg.horizon, src.world_config().arrival_threshold);
  return s;
}

/// Conditioning frames in generator slot order: history, front, right, left.
template <typename T>
std::vector<Tensor<T>> conditioning_patches(const StepInputs& s, const ModelConfig& cfg) {
  std::vector<Tensor<T>> p;
  for (const auto& f : s.history) p.push_back(patchify<T>(f.rgb, cfg.view_resolution, cfg.patch));
  for (int v : {1, 2, 0}) p.push_back(patchify<T>(s.current[static_cast<std::size_t>(v)].rgb, cfg.view_resolution, cfg.patch));
  return p;
}

template <typename T>
std::vector<Tensor<T>> future_patches(const StepInputs& s, const ModelConfig& cfg) {
  std::vector<Tensor<T>> p;
  for (const auto& f : s.future) p.push_back(patchify<T>(f.rgb, cfg.view_resolution, cfg.patch));
  return p;
}

template <typename T>
worldgen::LatentGrid<T> latent_grid(const NavModel<T>& m, const StepInputs& s) {
  return worldgen::encode_grid(m.codec, conditioning_patches<T>(s, m.cfg), future_patches<T>(s, m.cfg),
                               worldgen::default_roles(m.cfg.history, m.cfg.horizon));
}

/// Clean conditioning latents only (inference, no future frames needed).
template <typename T>
Tensor<T> conditioning_latents(const NavModel<T>& m, const StepInputs& s) {
  NoGradGuard guard;
  return m.codec.encode_patches(concat_rows(conditioning_patches<T>(s, m.cfg))).detach();
}

}  // namespace navgen
