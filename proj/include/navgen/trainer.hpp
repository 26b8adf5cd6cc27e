#pragma once

// Two-stage training: 1a generator (with codec reconstruction), 1b policy
// head, both with the planner frozen; 2 joint fine-tuning of everything with
// L_VG + lambda * L_PH and per-sample fusion draws for the diffusion head.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "navgen/model.hpp"
#include "navgen/numerics/optim.hpp"

namespace navgen {

enum class Stage { video, policy, joint };

inline Stage parse_stage(const std::string& s) {
  if (s == "1a") return Stage::video;
  if (s == "1b") return Stage::policy;
  if (s == "2") return Stage::joint;
  throw std::invalid_argument("unknown stage '" + s + "' (expected 1a, 1b or 2)");
}

inline const char* stage_name(Stage s) {
  switch (s) {
    case Stage::video: return "1a";
    case Stage::policy: return "1b";
    case Stage::joint: return "2";
  }
  return "?";
}

struct TrainConfig {
  std::string stage = "1a";
  std::string variant = "diffusion";
  double lambda = 1.0;
  double mmfca_probability = 0.5;
  int batch_size = 8;
  long steps = 5000;
  double lr = 3e-4;
  double lr_floor_fraction = 0.1;
  long warmup_steps = 100;
  double weight_decay = 0.01;
  double grad_clip = 1.0;
  double recon_weight = 1.0;
  std::uint64_t seed = 0;
  long checkpoint_every = 1000;
  long eval_every = 0;  // held-out loss cadence; 0 disables
  int eval_samples = 16;

  void validate() const {
    parse_stage(stage);
    parse_variant(variant);
    if (!(lambda > 0.0)) throw std::invalid_argument("train config: lambda must be positive");
    if (mmfca_probability < 0.0 || mmfca_probability > 1.0) {
      throw std::invalid_argument("train config: mmfca_probability must lie in [0, 1]");
    }
    if (batch_size <= 0 || steps < 0) throw std::invalid_argument("train config: batch_size > 0 and steps >= 0");
  }
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TrainConfig, stage, variant, lambda, mmfca_probability, batch_size,
                                                steps, lr, lr_floor_fraction, warmup_steps, weight_decay, grad_clip,
                                                recon_weight, seed, checkpoint_every, eval_every, eval_samples)

/// Seeded stream of fusion switches, one Bernoulli draw per training sample.
class GammaSchedule {
 public:
  GammaSchedule(double p, std::uint64_t seed) : p_(p), rng_(derive_seed(seed, "gamma")) {}
  bool next() { return rng_.bernoulli(p_); }

 private:
  double p_;
  Rng rng_;
};

/// Parameter prefixes trained in a stage.
inline std::vector<std::string> trainable_prefixes(Stage s, Variant v) {
  switch (s) {
    case Stage::video: return {prefix::codec, prefix::generator};
    case Stage::policy: return {v == Variant::former ? prefix::former : prefix::policy};
    case Stage::joint:
      if (v == Variant::former) return {prefix::planner, prefix::codec, prefix::generator, prefix::former};
      return {prefix::planner, prefix::codec, prefix::generator, prefix::policy, prefix::fusion};
  }
  return {};
}

template <typename T>
void apply_stage_freezing(NavModel<T>& m, Stage s, Variant v) {
  m.store->freeze_all(true);
  for (const auto& p : trainable_prefixes(s, v)) m.store->set_frozen(p, false);
}

/// Per-sample loss terms. `objective` is what gets differentiated; the
/// named parts are logged.
template <typename T>
struct SampleLoss {
  Tensor<T> objective;
  std::map<std::string, Tensor<T>> parts;
};

/// Loss of one decision step for a stage. Draw order from rng: t, then the
/// stage's flow noises.
template <typename T>
SampleLoss<T> sample_loss(const NavModel<T>& m, Stage stage, Variant variant, const StepInputs& s, bool gamma,
                          double lambda, double recon_weight, Rng& rng) {
  const double t = rng.uniform_open();
  ContextEmbedding<T> ctx;
  if (stage == Stage::joint) {
    ctx = m.planner.encode(s.planner_input());
  } else {
    NoGradGuard guard;
    ctx = m.planner.encode(s.planner_input());
    ctx.tokens = ctx.tokens.detach();
  }
  SampleLoss<T> out;
  const bool wants_video = stage != Stage::policy;
  const bool wants_policy = stage != Stage::video;
  std::optional<worldgen::LatentGrid<T>> grid;
  if (wants_video) {
    grid = latent_grid(m, s);
    const auto cond = conditioning_patches<T>(s, m.cfg);
    out.parts["recon"] = m.codec.recon_loss(concat_rows(cond));
  }
  const Tensor<T> actions = policy::encode_actions<T>(s.actions);

  if (stage == Stage::joint && variant == Variant::diffusion) {
    const auto j = policy::joint_loss(m.diffusion, m.generator, &m.fusion, gamma, actions, *grid, ctx, t, lambda, rng);
    out.parts["vg"] = j.vg;
    out.parts["ph"] = j.ph;
    out.parts["total"] = j.total;
  } else {
    if (wants_video) out.parts["vg"] = worldgen::vg_loss(m.generator, *grid, ctx, t, rng).loss;
    if (wants_policy) {
      if (variant == Variant::former) {
        const auto fl = policy::former_loss(m.former.forward(ctx), s.actions, m.cfg.normalize_angle);
        out.parts["pos"] = fl.pos;
        out.parts["angle"] = fl.angle;
        out.parts["arrive"] = fl.arrive;
        out.parts["ph"] = fl.total;
      } else {
        out.parts["ph"] = policy::diffusion_policy_loss(m.diffusion, actions, ctx, t, rng).loss;
      }
    }
    if (wants_video && wants_policy) {
      out.parts["total"] = add(out.parts["vg"], scale(out.parts["ph"], static_cast<T>(lambda)));
    } else {
      out.parts["total"] = wants_video ? out.parts["vg"] : out.parts["ph"];
    }
  }
  out.objective = out.parts["total"];
  if (wants_video) out.objective = add(out.objective, scale(out.parts["recon"], static_cast<T>(recon_weight)));
  return out;
}

/// Every (episode, step) pair of a source, for uniform sampling.
inline std::vector<std::pair<std::size_t, int>> decision_steps(const sim::EpisodeSource& src) {
  std::vector<std::pair<std::size_t, int>> all;
  for (std::size_t e = 0; e < src.size(); ++e) {
    for (int i = 0; i < src.episode(e).length(); ++i) all.emplace_back(e, i);
  }
  return all;
}

struct StepLog {
  long step = 0;
  std::map<std::string, double> losses;
  double lr = 0;
  double gamma_rate = 0;  // fraction of samples with fusion on, this step
  double gamma_rate_total = 0;
  double grad_norm = 0;
  double wall_time = 0;
};

inline nlohmann::json to_json(const StepLog& l, const std::string& stage, const std::string& variant) {
  return {{"step", l.step},           {"stage", stage},         {"variant", variant},
          {"losses", l.losses},       {"lr", l.lr},             {"gamma_rate", l.gamma_rate},
          {"gamma_rate_total", l.gamma_rate_total}, {"grad_norm", l.grad_norm}, {"wall_time", l.wall_time}};
}

struct TrainResult {
  std::vector<double> objective;  // mean objective per step
  std::vector<StepLog> log;
  std::string checkpoint;
};

/// Runs one stage. Writes `metrics.jsonl` and `model.ckpt` under out_dir
/// when it is non-empty.
template <typename T>
TrainResult train_stage(NavModel<T>& m, const TrainConfig& cfg, const sim::EpisodeSource& data,
                        const std::string& out_dir = "", std::function<void(const StepLog&)> on_step = {}) {
  cfg.validate();
  const Stage stage = parse_stage(cfg.stage);
  const Variant variant = parse_variant(cfg.variant);
  if (data.size() == 0) throw std::invalid_argument("train_stage: empty dataset");
  apply_stage_freezing(m, stage, variant);

  std::vector<Parameter<T>*> params;
  for (auto& p : m.store->all()) params.push_back(&p);
  AdamW<T> opt({cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay});
  const CosineSchedule lr{cfg.lr, cfg.lr_floor_fraction, std::max<long>(1, cfg.steps), cfg.warmup_steps};
  const auto pool = decision_steps(data);
  Rng batch_rng(derive_seed(cfg.seed, "batch"));
  GammaSchedule gammas(cfg.mmfca_probability, cfg.seed);
  const bool draws_gamma = stage == Stage::joint && variant == Variant::diffusion;

  std::ofstream metrics;
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    metrics.open(out_dir + "/metrics.jsonl", std::ios::trunc);
  }
  const nlohmann::json ckpt_meta = {{"train", cfg}, {"stage", cfg.stage}, {"variant", cfg.variant}};
  auto save = [&](long step) {
    if (out_dir.empty()) return;
    m.save(out_dir + "/model.ckpt", ckpt_meta, step);
  };

  TrainResult result;
  long gamma_on = 0, gamma_seen = 0;
  const auto start = std::chrono::steady_clock::now();
  for (long step = 0; step < cfg.steps; ++step) {
    m.store->zero_grad();
    StepLog log;
    log.step = step;
    int on = 0;
    double objective = 0;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const auto [e, i] = pool[static_cast<std::size_t>(batch_rng.uniform_int(0, static_cast<int>(pool.size()) - 1))];
      const StepInputs s = step_inputs(data, e, i, m.cfg, stage != Stage::policy);
      const bool gamma = draws_gamma && gammas.next();
      on += gamma;
      Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(step) * cfg.batch_size + b));
      auto l = sample_loss(m, stage, variant, s, gamma, cfg.lambda, cfg.recon_weight, rng);
      std::string bad;  // component terms first; "total" only if nothing else is named
      for (const auto& [name, v] : l.parts) {
        const double x = static_cast<double>(v.item());
        if (!std::isfinite(x) && name != "total") bad += (bad.empty() ? "" : "+") + name;
        log.losses[name] += x / cfg.batch_size;
      }
      if (bad.empty() && !std::isfinite(static_cast<double>(l.objective.item()))) bad = "total";
      if (!bad.empty()) {
        throw NumericError("train step " + std::to_string(step) + ": non-finite " + bad + " loss (sample " +
                           std::to_string(b) + ", episode " + std::to_string(data.episode(e).seed) + ", step " +
                           std::to_string(i) + ")");
      }
      objective += static_cast<double>(l.objective.item()) / cfg.batch_size;
      scale(l.objective, static_cast<T>(1.0 / cfg.batch_size)).backward();
    }
    log.grad_norm = clip_grad_norm(params, cfg.grad_clip);
    log.lr = lr(step);
    try {
      opt.step(params, log.lr);
    } catch (const NumericError& err) {
      throw NumericError("train step " + std::to_string(step) + ": " + err.what());
    }
    gamma_on += on;
    gamma_seen += draws_gamma ? cfg.batch_size : 0;
    log.gamma_rate = draws_gamma ? static_cast<double>(on) / cfg.batch_size : 0.0;
    log.gamma_rate_total = gamma_seen ? static_cast<double>(gamma_on) / gamma_seen : 0.0;
    log.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    log.losses["objective"] = objective;
    result.objective.push_back(objective);
    if (metrics.is_open()) metrics << to_json(log, cfg.stage, cfg.variant).dump() << "\n" << std::flush;
    if (on_step) on_step(log);
    result.log.push_back(log);
    if (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0) save(step + 1);
  }
  save(cfg.steps);
  if (!out_dir.empty()) result.checkpoint = out_dir + "/model.ckpt";
  m.store->freeze_all(false);
  return result;
}

enum class ProbeTarget { former, diffusion, video };

struct ProbeResult {
  double initial = 0;
  double final = 0;
  long steps = 0;
};

/// Memorization check on a fixed batch of at most four samples with the
/// planner frozen. Flow losses are measured on a fixed set of (t, noise)
/// draws so initial and final values are comparable. Stops early once the
/// measured loss drops to `stop_below`.
template <typename T>
ProbeResult overfit_probe(NavModel<T>& m, const std::vector<StepInputs>& batch, ProbeTarget target, long steps,
                          double lr = 1e-3, std::uint64_t seed = 0, double stop_below = -1.0,
                          long check_every = 50) {
  if (batch.empty() || batch.size() > 4) throw std::invalid_argument("overfit_probe: batch must hold 1 to 4 samples");
  m.store->freeze_all(true);
  const char* trained = target == ProbeTarget::former ? prefix::former
                        : target == ProbeTarget::diffusion ? prefix::policy
                                                           : prefix::generator;
  m.store->set_frozen(trained, false);

  std::vector<ContextEmbedding<T>> ctx;
  std::vector<Tensor<T>> actions;
  std::vector<worldgen::LatentGrid<T>> grids;
  {
    NoGradGuard guard;
    for (const auto& s : batch) {
      ctx.push_back(m.planner.encode(s.planner_input()));
      ctx.back().tokens = ctx.back().tokens.detach();
      actions.push_back(policy::encode_actions<T>(s.actions));
      if (target == ProbeTarget::video) grids.push_back(latent_grid(m, s));
    }
  }
  auto loss_of = [&](std::size_t i, double t, Rng& rng) -> Tensor<T> {
    switch (target) {
      case ProbeTarget::former: return policy::former_loss(m.former.forward(ctx[i]), batch[i].actions, m.cfg.normalize_angle).total;
      case ProbeTarget::diffusion: return policy::diffusion_policy_loss(m.diffusion, actions[i], ctx[i], t, rng).loss;
      case ProbeTarget::video: return worldgen::vg_loss(m.generator, grids[i], ctx[i], t, rng).loss;
    }
    return {};
  };
  const int eval_draws = target == ProbeTarget::former ? 1 : 16;
  auto measure = [&] {
    NoGradGuard guard;
    Rng rng(derive_seed(seed, "probe-eval"));
    double s = 0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      for (int d = 0; d < eval_draws; ++d) {
        const double t = rng.uniform_open();
        s += static_cast<double>(loss_of(i, t, rng).item());
      }
    }
    return s / static_cast<double>(batch.size() * eval_draws);
  };

  std::vector<Parameter<T>*> params;
  for (auto& p : m.store->all()) params.push_back(&p);
  AdamW<T> opt({lr, 0.9, 0.999, 1e-8, 0.0});
  const CosineSchedule sched{lr, 0.1, std::max<long>(1, steps), std::min<long>(50, steps / 10)};
  ProbeResult r;
  r.initial = measure();
  r.final = r.initial;
  Rng rng(derive_seed(seed, "probe-train"));
  for (long step = 0; step < steps; ++step) {
    m.store->zero_grad();
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const double t = rng.uniform_open();
      scale(loss_of(i, t, rng), static_cast<T>(1.0 / batch.size())).backward();
    }
    clip_grad_norm(params, 1.0);
    opt.step(params, sched(step));
    r.steps = step + 1;
    if (stop_below > 0 && (step + 1) % check_every == 0) {
      r.final = measure();
      if (r.final <= stop_below) break;
    }
  }
  r.final = measure();
  m.store->freeze_all(false);
  return r;
}

}  // namespace navgen
