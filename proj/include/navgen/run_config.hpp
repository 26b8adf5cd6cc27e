#pragma once

// One JSON file describing a whole run: model, world, base training
// settings with per-stage overrides, and closed-loop evaluation settings.
//
//   {"model": {...}, "world": {...}, "train": {...},
//    "stages": {"1a": {...}, "1b": {...}, "2": {...}}, "eval": {...}}
//
// Every section is optional; missing keys take the struct defaults.

#include <fstream>
#include <string>

#include <json.hpp>

#include "navgen/runtime/rollout.hpp"
#include "navgen/trainer.hpp"

namespace navgen {

struct EvalSettings {
  int step_cap = 100;
  int collision_cap = 20;
  int execute_steps = 1;
  int sample_steps = -1;
  std::uint64_t seed = 0;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(EvalSettings, step_cap, collision_cap, execute_steps, sample_steps, seed)

struct RunConfig {
  ModelConfig model;
  sim::WorldConfig world;
  nlohmann::json train = nlohmann::json::object();
  nlohmann::json stages = nlohmann::json::object();
  EvalSettings eval;

  /// Base training settings, then the stage's overrides, then stage and
  /// variant themselves.
  TrainConfig stage_config(const std::string& stage, const std::string& variant) const {
    nlohmann::json j = train;
    if (stages.contains(stage)) j.merge_patch(stages.at(stage));
    j["stage"] = stage;
    j["variant"] = variant;
    auto t = j.get<TrainConfig>();
    t.validate();
    return t;
  }

  runtime::RolloutOptions rollout_options(Variant v, int sfs_k) const {
    runtime::RolloutOptions o;
    o.variant = v;
    o.schedule = runtime::SfsSchedule(sfs_k, model.horizon);
    o.step_cap = eval.step_cap;
    o.collision_cap = eval.collision_cap;
    o.execute_steps = eval.execute_steps;
    o.sample_steps = eval.sample_steps;
    o.seed = eval.seed;
    return o;
  }

  /// Model and world must agree on what an observation window looks like.
  void validate() const {
    model.validate();
    auto mismatch = [](const char* what, int a, int b) {
      return std::invalid_argument(std::string("run config: model ") + what + " " + std::to_string(a) +
                                   " differs from world " + what + " " + std::to_string(b));
    };
    if (model.view_resolution != world.view_resolution) {
      throw mismatch("view_resolution", model.view_resolution, world.view_resolution);
    }
    if (model.history != world.history) throw mismatch("history", model.history, world.history);
    if (model.horizon != world.horizon) throw mismatch("horizon", model.horizon, world.horizon);
    if (model.vocab_size < sim::default_tokenizer().size()) {
      throw std::invalid_argument("run config: vocab_size " + std::to_string(model.vocab_size) +
                                  " is smaller than the instruction vocabulary (" +
                                  std::to_string(sim::default_tokenizer().size()) + ")");
    }
  }
};

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c;
  if (j.contains("model")) c.model = j.at("model").get<ModelConfig>();
  if (j.contains("world")) c.world = j.at("world").get<sim::WorldConfig>();
  if (j.contains("train")) c.train = j.at("train");
  if (j.contains("stages")) c.stages = j.at("stages");
  if (j.contains("eval")) c.eval = j.at("eval").get<EvalSettings>();
  c.validate();
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config " + path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("config " + path + ": " + e.what());
  }
  return run_config_from_json(j);
}

}  // namespace navgen
