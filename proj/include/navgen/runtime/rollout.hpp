#pragma once

// Closed-loop evaluation against the simulator with sparse foresight
// scheduling: the video generator runs only on every k-th decision step.

#include <chrono>
#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "navgen/model.hpp"
#include "navgen/runtime/metrics.hpp"

namespace navgen::runtime {

class SfsSchedule {
 public:
  explicit SfsSchedule(int interval = 10, int horizon = 5) : k_(interval), n_(horizon) {
    if (interval < 1) throw std::invalid_argument("sfs schedule: interval must be >= 1");
  }
  int interval() const { return k_; }
  int horizon() const { return n_; }
  bool generator_active(int step) const { return step % k_ == 0; }
  /// Generator calls over `steps` decision steps: ceil(steps / k).
  long expected_calls(int steps) const { return (steps + k_ - 1) / k_; }

 private:
  int k_, n_;
};

enum class StopReason { arrived, step_cap, collision_cap };

inline const char* stop_reason_name(StopReason r) {
  switch (r) {
    case StopReason::arrived: return "arrived";
    case StopReason::step_cap: return "step_cap";
    case StopReason::collision_cap: return "collision_cap";
  }
  return "?";
}

struct QuantizeRule {
  double turn_threshold = 7.5 * std::numbers::pi / 180.0;
  double move_threshold = 0.125;
  double arrive_threshold = 0.5;
};

/// Maps a continuous predicted step onto one simulator action: turn when the
/// heading change exceeds the turn threshold, else forward when the
/// displacement exceeds the move threshold, else stop when arrival is
/// predicted, else forward.
inline sim::Action quantize(const geometry::ActionStep& a, double arrive_prob, const QuantizeRule& q = {}) {
  if (std::abs(a.theta) > q.turn_threshold) return a.theta > 0 ? sim::Action::turn_left : sim::Action::turn_right;
  if (std::hypot(a.x, a.y) > q.move_threshold) return sim::Action::forward;
  if (arrive_prob > q.arrive_threshold) return sim::Action::stop;
  return sim::Action::forward;
}

enum class Controller { model, random };

struct RolloutOptions {
  Variant variant = Variant::diffusion;
  SfsSchedule schedule{10, 5};
  bool generator_enabled = true;  // false: diffusion head with fusion off everywhere
  Controller controller = Controller::model;
  int step_cap = 100;
  int collision_cap = 20;
  int execute_steps = 1;  // predicted steps executed per plan before replanning
  int sample_steps = -1;  // Euler steps; -1 uses the model config
  std::uint64_t seed = 0;
  bool keep_frames = true;
  QuantizeRule quantize;
};

struct StepRecord {
  int step = 0;  // decision index
  geometry::Pose pose;  // pose at which the action was chosen
  sim::Action action = sim::Action::stop;
  double arrive_prob = 0;
  bool generator = false;
  bool collided = false;
  std::vector<geometry::ActionEncoding> plan;  // full predicted sequence (empty for the random controller)
  double seconds = 0, generator_seconds = 0, policy_seconds = 0;
};

struct PredictedFrames {
  int step = 0;  // decision index whose plan produced the frames
  std::vector<std::vector<float>> frames;
};

struct RolloutResult {
  std::uint64_t episode_seed = 0;
  std::vector<geometry::Pose> trajectory;  // start pose, then the pose after every executed action
  std::vector<StepRecord> steps;
  std::vector<PredictedFrames> predictions;
  std::vector<sim::Frame> observed_front;  // front frame at each trajectory pose
  StopReason stop = StopReason::step_cap;
  int decisions = 0;
  long generator_calls = 0;
  int collisions = 0;
  double wall_time = 0, generator_time = 0, policy_time = 0;
};

namespace detail {

inline double seconds_since(std::chrono::steady_clock::time_point t) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace detail

/// Runs one episode from its start pose until the controller stops, the
/// step cap is hit or the collision cap is hit.
template <typename T>
RolloutResult rollout(const NavModel<T>* model, const sim::WorldMap& map, const sim::Episode& ep,
                      const sim::WorldConfig& wcfg, const RolloutOptions& opt) {
  if (opt.controller == Controller::model && !model) throw std::invalid_argument("rollout: model controller needs a model");
  if (opt.execute_steps < 1) throw std::invalid_argument("rollout: execute_steps must be >= 1");
  if (model && model->cfg.view_resolution != wcfg.view_resolution) {
    throw std::invalid_argument("rollout: checkpoint resolution " + std::to_string(model->cfg.view_resolution) +
                                " does not match world resolution " + std::to_string(wcfg.view_resolution));
  }
  const auto start = std::chrono::steady_clock::now();
  RolloutResult r;
  r.episode_seed = ep.seed;
  geometry::Pose pose = ep.start();
  r.trajectory.push_back(pose);
  sim::Observation obs = sim::render(map, pose, wcfg);
  r.observed_front.push_back(obs.front());
  Rng random_rng(derive_seed(opt.seed ^ ep.seed, "random-controller"));
  const int sample_steps =
      opt.sample_steps > 0 ? opt.sample_steps : (model ? model->cfg.action_sample_steps : 1);

  auto history_at = [&](int j) { return r.observed_front[static_cast<std::size_t>(j)]; };

  bool done = false;
  int executed = 0;
  for (int d = 0; !done && executed < opt.step_cap; ++d) {
    const auto t0 = std::chrono::steady_clock::now();
    StepRecord rec;
    rec.step = d;
    rec.pose = pose;
    std::vector<geometry::ActionStep> plan;
    std::vector<double> arrive;
    if (opt.controller == Controller::random) {
      plan.push_back({});
      arrive.push_back(0.0);
      rec.action = static_cast<sim::Action>(random_rng.uniform_int(0, 3));
    } else {
      NoGradGuard guard;
      const auto& m = *model;
      StepInputs s;
      s.tokens = ep.tokens;
      s.history = history_window(static_cast<int>(r.observed_front.size()) - 1, m.cfg.history, history_at);
      s.current = obs.views;
      const auto ctx = m.planner.encode(s.planner_input());
      Tensor<T> actions;
      const bool use_generator =
          opt.variant == Variant::diffusion && opt.generator_enabled && opt.schedule.generator_active(d);
      const std::uint64_t seed = derive_seed(derive_seed(opt.seed, ep.seed), static_cast<std::uint64_t>(d));
      if (opt.variant == Variant::former) {
        actions = m.former.forward(ctx);
      } else if (use_generator) {
        const auto g0 = std::chrono::steady_clock::now();
        const auto js = policy::joint_sample(m.diffusion, m.generator, m.codec, &m.fusion, true,
                                             conditioning_latents(m, s),
                                             worldgen::default_roles(m.cfg.history, m.cfg.horizon), ctx, sample_steps,
                                             seed);
        rec.generator_seconds = detail::seconds_since(g0);
        actions = js.actions;
        rec.generator = true;
        ++r.generator_calls;
        if (opt.keep_frames) r.predictions.push_back({d, js.future.frames});
      } else {
        actions = policy::sample_actions(m.diffusion, ctx, sample_steps, seed);
      }
      for (int i = 0; i < actions.rows(); ++i) {
        const auto e = policy::action_row(actions, i);
        rec.plan.push_back(e);
        geometry::ActionEncoding safe = e;
        if (std::abs(safe.cos_theta) < 1e-9 && std::abs(safe.sin_theta) < 1e-9) safe.cos_theta = 1.0;
        plan.push_back(geometry::decode_action(safe));
        arrive.push_back(opt.variant == Variant::former ? detail::sigmoid(e.arrive) : std::clamp(e.arrive, 0.0, 1.0));
      }
      rec.arrive_prob = arrive.front();
      rec.action = quantize(plan.front(), rec.arrive_prob, opt.quantize);
    }
    rec.seconds = detail::seconds_since(t0);
    rec.policy_seconds = rec.seconds - rec.generator_seconds;
    r.generator_time += rec.generator_seconds;
    r.policy_time += rec.policy_seconds;
    ++r.decisions;

    // Execute the first action, then further plan steps re-expressed from
    // the current pose when multi-step execution is on.
    const geometry::Pose plan_pose = pose;
    for (int j = 0; j < opt.execute_steps && !done && executed < opt.step_cap; ++j) {
      sim::Action a = rec.action;
      if (j > 0) {
        if (j >= static_cast<int>(plan.size())) break;
        const auto target = geometry::apply_action(plan_pose, plan[static_cast<std::size_t>(j)]);
        const auto rel = geometry::to_local_frame(pose, {target})[0];
        a = quantize(rel, arrive[static_cast<std::size_t>(j)], opt.quantize);
      }
      StepRecord exec = rec;
      exec.pose = pose;
      exec.action = a;
      if (j > 0) {
        exec.seconds = exec.generator_seconds = exec.policy_seconds = 0;
        exec.generator = false;
      }
      if (a == sim::Action::stop) {
        r.stop = StopReason::arrived;
        done = true;
        r.steps.push_back(exec);
        break;
      }
      const auto next = sim::step(map, pose, a, wcfg);
      exec.collided = next.collided;
      r.steps.push_back(exec);
      ++executed;
      if (next.collided && ++r.collisions >= opt.collision_cap) {
        r.stop = StopReason::collision_cap;
        done = true;
      }
      pose = next.pose;
      r.trajectory.push_back(pose);
      obs = sim::render(map, pose, wcfg);
      r.observed_front.push_back(obs.front());
    }
  }
  if (!done) r.stop = StopReason::step_cap;
  r.wall_time = detail::seconds_since(start);
  return r;
}

/// Converts a rollout into the inputs of nav_metrics.
inline EpisodeOutcome outcome_of(const RolloutResult& r, const sim::Episode& ep, const sim::WorldMap& map) {
  EpisodeOutcome o;
  for (const auto& p : r.trajectory) o.trajectory.push_back(p.position);
  o.goal = ep.goal_position;
  o.shortest_length = ep.geodesic_length;
  const auto field = sim::distance_field(map, ep.goal_cell);
  o.stop_error = sim::geodesic_distance(map, field, r.trajectory.back().position);
  return o;
}

}  // namespace navgen::runtime
