// navgen command line: data generation, staged training, closed-loop
// evaluation, single-episode rollouts with dumps, and plotting.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "navgen/run_config.hpp"
#include "navgen/runtime/report.hpp"

namespace fs = std::filesystem;
using namespace navgen;

namespace {

using Model = NavModel<float>;

std::pair<std::uint64_t, std::uint64_t> parse_seed_range(const std::string& s) {
  const auto dots = s.find("..");
  try {
    if (dots == std::string::npos) {
      const auto v = std::stoull(s);
      return {v, v};
    }
    const auto a = std::stoull(s.substr(0, dots)), b = std::stoull(s.substr(dots + 2));
    if (b < a) throw std::invalid_argument("empty range");
    return {a, b};
  } catch (const std::exception&) {
    throw std::invalid_argument("bad seed range '" + s + "' (expected A..B with A <= B)");
  }
}

/// Accepts either a checkpoint file or a training output directory.
std::string checkpoint_path(const std::string& p) {
  return fs::is_directory(p) ? (fs::path(p) / "model.ckpt").string() : p;
}

std::unique_ptr<Model> load_model(const std::string& ckpt) {
  const auto path = checkpoint_path(ckpt);
  auto m = std::make_unique<Model>(Model::config_of(path));
  m->load(path);
  return m;
}

void write_json(const std::string& path, const nlohmann::json& j) {
  if (const auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << j.dump(2) << "\n";
}

std::string loss_summary(const StepLog& l) {
  std::ostringstream os;
  os.precision(4);
  for (const auto& [k, v] : l.losses) os << ' ' << k << '=' << v;
  return os.str();
}

// --- subcommands ---------------------------------------------------------------

struct GenArgs {
  std::string seeds, out, config;
};

int gen_data(const GenArgs& a) {
  const auto cfg = load_run_config(a.config);
  const auto [first, last] = parse_seed_range(a.seeds);
  write_episode_store(a.out, first, last, cfg.world);
  std::cout << "wrote " << (last - first + 1) << " episodes to " << a.out << "\n";
  return 0;
}

struct TrainArgs {
  std::string stage, variant, config, data, out, init;
  long steps = -1;
  int log_every = 50;
};

int train(const TrainArgs& a) {
  const auto run = load_run_config(a.config);
  auto tc = run.stage_config(a.stage, a.variant);
  if (a.steps >= 0) tc.steps = a.steps;
  Model m(run.model);
  if (!a.init.empty()) m.load(checkpoint_path(a.init));
  const sim::StoredEpisodes data(a.data);
  if (data.world_config().view_resolution != run.model.view_resolution) {
    throw std::invalid_argument("data in " + a.data + " was rendered at a different resolution than the model expects");
  }
  std::cout << "stage " << tc.stage << " (" << tc.variant << "): " << tc.steps << " steps, batch " << tc.batch_size
            << ", " << data.size() << " episodes\n";
  const auto r = train_stage(m, tc, data, a.out, [&](const StepLog& l) {
    if (a.log_every > 0 && (l.step % a.log_every == 0 || l.step + 1 == tc.steps)) {
      std::printf("step %6ld  lr %.2e  gamma %.2f  %.1fs %s\n", l.step, l.lr, l.gamma_rate_total, l.wall_time,
                  loss_summary(l).c_str());
      std::fflush(stdout);
    }
  });
  std::cout << "checkpoint: " << r.checkpoint << "\n";
  return 0;
}

struct EvalArgs {
  std::string checkpoint, data, variant = "diffusion", out, seeds, config;
  int sfs_k = 10;
  std::vector<int> speed_ks;
  bool random = false, no_generator = false;
  long episodes = -1;
};

int eval(const EvalArgs& a) {
  runtime::EvalSet set;
  if (!a.data.empty()) {
    set = runtime::make_eval_set(sim::StoredEpisodes(a.data));
  } else if (!a.seeds.empty()) {
    if (a.config.empty()) throw std::invalid_argument("eval: --seeds needs --config for the world settings");
    const auto [first, last] = parse_seed_range(a.seeds);
    set = runtime::make_eval_set(first, last, load_run_config(a.config).world);
  } else {
    throw std::invalid_argument("eval: give --data DIR or --seeds A..B");
  }
  if (a.episodes > 0 && static_cast<std::size_t>(a.episodes) < set.size()) {
    set.episodes.resize(static_cast<std::size_t>(a.episodes));
    set.maps.resize(static_cast<std::size_t>(a.episodes));
  }
  RunConfig run;
  if (!a.config.empty()) run = load_run_config(a.config);
  std::unique_ptr<Model> m;
  if (!a.random) {
    if (a.checkpoint.empty()) throw std::invalid_argument("eval: --checkpoint is required unless --random");
    m = load_model(a.checkpoint);
    run.model = m->cfg;
  }
  const Variant v = parse_variant(a.variant);
  auto report_for = [&](int k) {
    auto opt = run.rollout_options(v, k);
    opt.generator_enabled = !a.no_generator;
    opt.keep_frames = true;
    if (a.random) opt.controller = runtime::Controller::random;
    auto rep = runtime::evaluate(m.get(), set, opt);
    rep.label = a.random ? "random" : std::string(variant_name(v)) + (a.no_generator ? "-ablated" : "");
    std::printf("%-18s k=%-3d SR %.3f  OS %.3f  SPL %.3f  NE %.3f  wall/ep %.3fs  gen calls %ld (expected %ld)\n",
                rep.label.c_str(), k, rep.metrics.sr, rep.metrics.os, rep.metrics.spl, rep.metrics.ne,
                rep.mean_wall_time, rep.generator_calls, rep.expected_generator_calls);
    std::fflush(stdout);
    return rep;
  };

  nlohmann::json out;
  out["checkpoint"] = a.random ? "" : checkpoint_path(a.checkpoint);
  out["variant"] = a.random ? "random" : a.variant;
  out["episodes"] = set.size();
  if (a.speed_ks.empty()) {
    out["report"] = runtime::to_json(report_for(a.sfs_k));
  } else {
    std::vector<runtime::EvalReport> reps;
    for (int k : a.speed_ks) reps.push_back(report_for(k));
    nlohmann::json per_k = nlohmann::json::array();
    for (const auto& r : reps) per_k.push_back(runtime::to_json(r));
    out["reports"] = per_k;
    out["speed_report"] = runtime::speed_report_json(reps);
    std::cout << runtime::speed_report_table(reps);
  }
  write_json(a.out, out);
  return 0;
}

struct RolloutArgs {
  std::string checkpoint, variant = "diffusion", dump, dump_frames, config;
  std::uint64_t episode = 0;
  int sfs_k = 10;
  bool random = false, no_generator = false;
};

int rollout(const RolloutArgs& a) {
  std::unique_ptr<Model> m;
  RunConfig run;
  if (!a.config.empty()) run = load_run_config(a.config);
  if (!a.random) {
    if (a.checkpoint.empty()) throw std::invalid_argument("rollout: --checkpoint is required unless --random");
    m = load_model(a.checkpoint);
    if (a.config.empty()) {
      // Without a config, the world follows the checkpoint's observation window.
      run.world.view_resolution = m->cfg.view_resolution;
      run.world.history = m->cfg.history;
      run.world.horizon = m->cfg.horizon;
    }
    run.model = m->cfg;
  }
  auto world = run.world;
  world.render_observations = false;
  const auto map = sim::generate_world(a.episode, world);
  const auto ep = sim::generate_episode(a.episode, world, &map);
  auto opt = run.rollout_options(parse_variant(a.variant), a.sfs_k);
  opt.generator_enabled = !a.no_generator;
  if (a.random) opt.controller = runtime::Controller::random;
  const auto r = runtime::rollout(m.get(), map, ep, world, opt);
  const auto o = runtime::outcome_of(r, ep, map);
  std::cout << "episode " << a.episode << ": \"" << ep.instruction << "\"\n"
            << "stop " << runtime::stop_reason_name(r.stop) << " after " << r.decisions << " decisions, "
            << (runtime::succeeded(o, world.arrival_threshold) ? "success" : "failure") << ", stop error "
            << o.stop_error << ", generator calls " << r.generator_calls << "\n";
  if (!a.dump.empty()) {
    runtime::dump_rollout(a.dump, r, ep, world, opt);
    std::cout << "dumped trajectory and frames to " << a.dump << "\n";
  }
  if (!a.dump_frames.empty()) {
    const auto manifest = runtime::dump_frame_pairs(a.dump_frames, r, world.view_resolution);
    std::cout << "dumped " << manifest.at("pairs").size() << " predicted/observed frame pairs to " << a.dump_frames
              << "\n";
  }
  return 0;
}

struct PlotArgs {
  std::string dump, frames, out;
  int scale = 4;
};

std::vector<geometry::Vec3> read_trajectory_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read " + path);
  std::string line;
  std::getline(is, line);
  std::vector<geometry::Vec3> pts;
  while (std::getline(is, line)) {
    std::stringstream ss(line);
    std::string step, x, y;
    std::getline(ss, step, ',');
    std::getline(ss, x, ',');
    std::getline(ss, y, ',');
    pts.push_back({std::stod(x), std::stod(y), 0.0});
  }
  return pts;
}

int plot(const PlotArgs& a) {
  fs::create_directories(a.out);
  int written = 0;
  if (!a.dump.empty()) {
    std::ifstream is(a.dump + "/meta.json");
    if (!is) throw std::runtime_error("no meta.json in " + a.dump);
    nlohmann::json meta;
    is >> meta;
    auto world = meta.at("world").get<sim::WorldConfig>();
    world.render_observations = false;
    const auto seed = meta.at("episode_seed").get<std::uint64_t>();
    const auto map = sim::generate_world(seed, world);
    const auto ep = sim::generate_episode(seed, world, &map);
    const auto path = read_trajectory_csv(a.dump + "/trajectory.csv");
    runtime::write_ppm(a.out + "/trajectory.ppm",
                       runtime::trajectory_overlay(map, path, ep.goal_position, world.arrival_threshold));
    ++written;

    // Observed front frames along the path, at most 16 evenly spaced.
    sim::FrameBlobReader frames(a.dump + "/frames.bin");
    const auto n = frames.count();
    if (n > 0) {
      const std::uint64_t stride = std::max<std::uint64_t>(1, (n + 15) / 16);
      std::vector<sim::Frame> row;
      for (std::uint64_t i = 0; i < n; i += stride) row.push_back(frames.read(i));
      runtime::write_ppm(a.out + "/observed_strip.ppm", runtime::frame_strip(row, row, a.scale));
      ++written;
    }
  }
  if (!a.frames.empty()) {
    std::ifstream is(a.frames + "/manifest.json");
    if (!is) throw std::runtime_error("no manifest.json in " + a.frames);
    nlohmann::json manifest;
    is >> manifest;
    sim::FrameBlobReader blob(a.frames + "/" + manifest.at("blob").get<std::string>());
    std::map<int, std::pair<std::vector<sim::Frame>, std::vector<sim::Frame>>> by_decision;
    for (const auto& p : manifest.at("pairs")) {
      auto& [pred, obs] = by_decision[p.at("decision").get<int>()];
      pred.push_back(blob.read(p.at("predicted").get<std::uint64_t>()));
      obs.push_back(blob.read(p.at("observed").get<std::uint64_t>()));
    }
    for (const auto& [d, pair] : by_decision) {
      char name[64];
      std::snprintf(name, sizeof name, "/frames_decision_%04d.ppm", d);
      runtime::write_ppm(a.out + name, runtime::frame_strip(pair.first, pair.second, a.scale));
      ++written;
    }
  }
  if (written == 0) throw std::invalid_argument("plot: give --dump DIR and/or --frames DIR");
  std::cout << "wrote " << written << " images to " << a.out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"navgen: video-generation-assisted navigation policies on a procedural gridworld"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen-data", "Generate and render episodes into an on-disk store");
  g->add_option("--seeds", gen.seeds, "Seed range A..B (inclusive)")->required();
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_option("--config", gen.config, "Run config JSON (uses its world section)")->required()->check(CLI::ExistingFile);

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Run one training stage");
  t->add_option("--stage", tr.stage, "1a, 1b or 2")->required()->check(CLI::IsMember({"1a", "1b", "2"}));
  t->add_option("--variant", tr.variant, "former or diffusion")->required()->check(CLI::IsMember({"former", "diffusion"}));
  t->add_option("--config", tr.config, "Run config JSON")->required()->check(CLI::ExistingFile);
  t->add_option("--data", tr.data, "Episode store from gen-data")->required()->check(CLI::ExistingDirectory);
  t->add_option("--out", tr.out, "Output directory for metrics.jsonl and model.ckpt")->required();
  t->add_option("--init", tr.init, "Checkpoint (file or directory) to start from, e.g. the previous stage");
  t->add_option("--steps", tr.steps, "Override the configured step count");
  t->add_option("--log-every", tr.log_every, "Console progress cadence in steps (0 = quiet)");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Closed-loop evaluation on held-out episodes");
  e->add_option("--checkpoint", ev.checkpoint, "Checkpoint file or training output directory");
  e->add_option("--data", ev.data, "Episode store to evaluate on")->check(CLI::ExistingDirectory);
  e->add_option("--seeds", ev.seeds, "Generate the evaluation episodes from seeds A..B instead");
  e->add_option("--variant", ev.variant, "former or diffusion")->check(CLI::IsMember({"former", "diffusion"}));
  e->add_option("--sfs-k", ev.sfs_k, "Generator interval k")->check(CLI::PositiveNumber);
  e->add_option("--speed-ks", ev.speed_ks, "Run once per k and emit a speed report, e.g. --speed-ks 1 5 10");
  e->add_option("--out", ev.out, "Report JSON path")->required();
  e->add_option("--config", ev.config, "Run config JSON (eval caps and world settings)");
  e->add_option("--episodes", ev.episodes, "Evaluate only the first N episodes");
  e->add_flag("--random", ev.random, "Uniform random controller baseline");
  e->add_flag("--no-generator", ev.no_generator, "Diffusion head with the video generator ablated");

  RolloutArgs ro;
  auto* r = app.add_subcommand("rollout", "Run one episode and dump its trajectory and frames");
  r->add_option("--episode", ro.episode, "Episode seed")->required();
  r->add_option("--checkpoint", ro.checkpoint, "Checkpoint file or training output directory");
  r->add_option("--variant", ro.variant, "former or diffusion")->check(CLI::IsMember({"former", "diffusion"}));
  r->add_option("--sfs-k", ro.sfs_k, "Generator interval k")->check(CLI::PositiveNumber);
  r->add_option("--config", ro.config, "Run config JSON (world and eval settings)");
  r->add_option("--dump", ro.dump, "Write meta.json, trajectory.csv and frames.bin here");
  r->add_option("--dump-frames", ro.dump_frames, "Write predicted/observed frame pairs and manifest.json here");
  r->add_flag("--random", ro.random, "Uniform random controller");
  r->add_flag("--no-generator", ro.no_generator, "Diffusion head with the video generator ablated");

  PlotArgs pl;
  auto* p = app.add_subcommand("plot", "Render trajectory overlays and frame strips to PPM images");
  p->add_option("--dump", pl.dump, "Rollout dump directory")->check(CLI::ExistingDirectory);
  p->add_option("--frames", pl.frames, "Frame-pair directory from --dump-frames")->check(CLI::ExistingDirectory);
  p->add_option("--out", pl.out, "Image output directory")->required();
  p->add_option("--scale", pl.scale, "Pixel upscaling for frame strips")->check(CLI::PositiveNumber);

  CLI11_PARSE(app, argc, argv);
  try {
    if (*g) return gen_data(gen);
    if (*t) return train(tr);
    if (*e) return eval(ev);
    if (*r) return rollout(ro);
    if (*p) return plot(pl);
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 1;
  }
  return 0;
}
