#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <numbers>

#include "navgen/runtime/report.hpp"
#include "test_util.hpp"

using namespace navgen;
using namespace navgen::runtime;
using namespace navgen::testing;
using geometry::Vec3;

namespace {

sim::WorldConfig small_world() {
  sim::WorldConfig w;
  w.view_resolution = 8;
  w.history = 2;
  w.horizon = 2;
  w.render_observations = false;
  return w;
}

ModelConfig rollout_config() {
  ModelConfig c = micro_config();
  c.max_instruction = 16;
  c.vocab_size = sim::default_tokenizer().size();
  c.action_sample_steps = 2;
  c.seed = 5;
  return c;
}

std::unique_ptr<NavModel<double>> random_model(std::uint64_t seed) {
  auto m = std::make_unique<NavModel<double>>(rollout_config());
  Rng r(seed);
  for (auto* p : m->store->with_prefix("")) {
    for (auto& x : p->tensor.mutable_data()) x += 0.2 * r.normal();
  }
  return m;
}

EpisodeOutcome straight(double length, double overshoot_x, double detour = 0.0) {
  // Start at the origin, goal at (length, 0). An optional detour goes up and
  // back before heading to the stop point.
  EpisodeOutcome o;
  o.goal = {length, 0, 0};
  o.shortest_length = length;
  o.trajectory.push_back({0, 0, 0});
  if (detour > 0) {
    o.trajectory.push_back({0, detour, 0});
    o.trajectory.push_back({0, 0, 0});
  }
  o.trajectory.push_back({length + overshoot_x, 0, 0});
  o.stop_error = std::abs(overshoot_x);
  return o;
}

std::string temp_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("navgen_runtime_" + name);
  std::filesystem::remove_all(p);
  return p.string();
}

}  // namespace

TEST(SfsSchedule, EveryStepWhenIntervalIsOne) {
  SfsSchedule s(1);
  for (int i = 0; i < 30; ++i) EXPECT_TRUE(s.generator_active(i));
  EXPECT_EQ(s.expected_calls(17), 17);
}

TEST(SfsSchedule, IntervalTenOverTwentyFiveSteps) {
  SfsSchedule s(10);
  std::vector<int> active;
  for (int i = 0; i < 25; ++i) {
    if (s.generator_active(i)) active.push_back(i);
  }
  EXPECT_EQ(active, (std::vector<int>{0, 10, 20}));
  EXPECT_EQ(s.expected_calls(25), 3);
  EXPECT_EQ(s.expected_calls(20), 2);
  EXPECT_EQ(s.expected_calls(0), 0);
}

TEST(SfsSchedule, RejectsNonPositiveInterval) {
  EXPECT_THROW(SfsSchedule(0), std::invalid_argument);
}

TEST(Quantize, Rules) {
  const double deg = std::numbers::pi / 180.0;
  EXPECT_EQ(quantize({0.25, 0, 15 * deg, 0}, 0.0), sim::Action::turn_left);
  EXPECT_EQ(quantize({0.25, 0, -15 * deg, 0}, 0.0), sim::Action::turn_right);
  EXPECT_EQ(quantize({0.0, 0, 8 * deg, 0}, 1.0), sim::Action::turn_left);
  EXPECT_EQ(quantize({0.2, 0, 7 * deg, 0}, 1.0), sim::Action::forward);
  EXPECT_EQ(quantize({0.0, 0.13, 0, 0}, 1.0), sim::Action::forward);
  EXPECT_EQ(quantize({0.05, 0, 0, 0}, 0.9), sim::Action::stop);
  EXPECT_EQ(quantize({0.05, 0, 0, 0}, 0.5), sim::Action::forward);
}

TEST(NavMetrics, ShortestPathStopAtGoal) {
  const auto m = nav_metrics({straight(3.0, 0.0)}, 1.0);
  EXPECT_DOUBLE_EQ(m.sr, 1.0);
  EXPECT_DOUBLE_EQ(m.os, 1.0);
  EXPECT_DOUBLE_EQ(m.spl, 1.0);
  EXPECT_DOUBLE_EQ(m.ne, 0.0);
}

TEST(NavMetrics, NeverEntersRadius) {
  EpisodeOutcome o;
  o.goal = {5, 0, 0};
  o.shortest_length = 5;
  o.trajectory = {{0, 0, 0}, {1, 0, 0}};
  o.stop_error = 4.0;
  const auto m = nav_metrics({o}, 1.0);
  EXPECT_EQ(m.sr, 0.0);
  EXPECT_EQ(m.os, 0.0);
  EXPECT_EQ(m.spl, 0.0);
  EXPECT_GT(m.ne, 1.0);
}

TEST(NavMetrics, DoubledPathGivesHalfSpl) {
  // p = 1 + 1 + 2 = 4 = 2 l.
  const auto o = straight(2.0, 0.0, 1.0);
  EXPECT_DOUBLE_EQ(path_length(o.trajectory), 4.0);
  EXPECT_DOUBLE_EQ(episode_spl(o, 1.0), 0.5);
}

TEST(NavMetrics, FiveHandComputedEpisodes) {
  std::vector<EpisodeOutcome> eps;
  eps.push_back(straight(3.0, 0.0));        // success, SPL 1, NE 0
  eps.push_back(straight(2.0, 0.0, 1.0));   // success, SPL 0.5, NE 0
  eps.push_back(straight(4.0, 0.5));        // success, p = 4.5, SPL 4/4.5, NE 0.5
  eps.push_back(straight(4.0, 2.0));        // passes through the goal but stops 2 past it: OS only, NE 2
  EpisodeOutcome miss;                      // never close: NE 3
  miss.goal = {4, 0, 0};
  miss.shortest_length = 4;
  miss.trajectory = {{0, 0, 0}, {0, 1, 0}};
  miss.stop_error = 3.0;
  eps.push_back(miss);
  // The fourth trajectory jumps past the goal in one segment; add the goal
  // crossing explicitly so OS sees it.
  eps[3].trajectory.insert(eps[3].trajectory.begin() + 1, Vec3{4.0, 0, 0});

  const auto m = nav_metrics(eps, 1.0);
  EXPECT_EQ(m.episodes, 5);
  EXPECT_NEAR(m.sr, 3.0 / 5.0, 1e-12);
  EXPECT_NEAR(m.os, 4.0 / 5.0, 1e-12);
  EXPECT_NEAR(m.spl, (1.0 + 0.5 + 4.0 / 4.5) / 5.0, 1e-12);
  EXPECT_NEAR(m.ne, (0 + 0 + 0.5 + 2 + 3) / 5.0, 1e-12);
  EXPECT_LE(m.sr, m.os);
  EXPECT_LE(m.spl, m.os);
}

TEST(NavMetrics, RejectsEmptySet) {
  EXPECT_THROW(nav_metrics({}, 1.0), std::invalid_argument);
}

TEST(Psnr, Conventions) {
  std::vector<float> a(48, 0.3f), zeros(48, 0.0f), ones(48, 1.0f);
  EXPECT_EQ(psnr(a, a), kPsnrCap);
  EXPECT_NEAR(psnr(zeros, ones), 0.0, 1e-12);
  EXPECT_THROW(psnr(a, std::vector<float>(12, 0.0f)), std::invalid_argument);
}

TEST(Psnr, MatchesDirectFormula) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const auto a = random_frame(rng, 8), b = random_frame(rng, 8);
    double se = 0;
    for (std::size_t i = 0; i < a.size(); ++i) se += std::pow(double(a[i]) - double(b[i]), 2);
    EXPECT_NEAR(psnr(a, b), 10.0 * std::log10(a.size() / se), 1e-9);
  }
}

TEST(Rollout, RandomControllerRespectsCaps) {
  const auto set = make_eval_set(1, 6, small_world());
  RolloutOptions opt;
  opt.controller = Controller::random;
  opt.step_cap = 15;
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto r = rollout<double>(nullptr, set.maps[i], set.episodes[i], set.world, opt);
    EXPECT_LE(static_cast<int>(r.steps.size()), opt.step_cap);
    EXPECT_EQ(r.trajectory.size(), r.observed_front.size());
    EXPECT_EQ(r.generator_calls, 0);
    EXPECT_GE(r.wall_time, 0.0);
    if (r.stop == StopReason::arrived) EXPECT_EQ(r.steps.back().action, sim::Action::stop);
  }
}

TEST(Rollout, FormerNeverCallsGenerator) {
  auto m = random_model(1);
  const auto set = make_eval_set(10, 12, small_world());
  RolloutOptions opt;
  opt.variant = Variant::former;
  opt.schedule = SfsSchedule(1);
  opt.step_cap = 12;
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto r = rollout(m.get(), set.maps[i], set.episodes[i], set.world, opt);
    EXPECT_EQ(r.generator_calls, 0);
    EXPECT_TRUE(r.predictions.empty());
    for (const auto& s : r.steps) EXPECT_FALSE(s.generator);
  }
}

TEST(Rollout, DiffusionCallsGeneratorOnSchedule) {
  auto m = random_model(2);
  const auto set = make_eval_set(20, 20, small_world());
  RolloutOptions opt;
  opt.variant = Variant::diffusion;
  opt.schedule = SfsSchedule(10);
  opt.step_cap = 25;
  opt.collision_cap = 1000;
  opt.quantize.arrive_threshold = 2.0;  // never stop, so exactly 25 decisions
  const auto r = rollout(m.get(), set.maps[0], set.episodes[0], set.world, opt);
  ASSERT_EQ(r.decisions, 25);
  std::vector<int> active;
  for (const auto& s : r.steps) {
    if (s.generator) active.push_back(s.step);
    EXPECT_GE(s.generator_seconds, 0.0);
    EXPECT_GE(s.policy_seconds, 0.0);
  }
  EXPECT_EQ(active, (std::vector<int>{0, 10, 20}));
  EXPECT_EQ(r.generator_calls, opt.schedule.expected_calls(r.decisions));
  ASSERT_EQ(r.predictions.size(), 3u);
  EXPECT_EQ(r.predictions[1].step, 10);
  EXPECT_EQ(r.predictions[0].frames.size(), static_cast<std::size_t>(m->cfg.horizon));

  opt.generator_enabled = false;
  const auto ablated = rollout(m.get(), set.maps[0], set.episodes[0], set.world, opt);
  EXPECT_EQ(ablated.generator_calls, 0);
}

TEST(Rollout, DeterministicForFixedSeed) {
  auto m = random_model(3);
  const auto set = make_eval_set(30, 32, small_world());
  RolloutOptions opt;
  opt.schedule = SfsSchedule(3);
  opt.step_cap = 15;
  opt.seed = 77;
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto a = rollout(m.get(), set.maps[i], set.episodes[i], set.world, opt);
    const auto b = rollout(m.get(), set.maps[i], set.episodes[i], set.world, opt);
    ASSERT_EQ(a.steps.size(), b.steps.size());
    for (std::size_t s = 0; s < a.steps.size(); ++s) {
      EXPECT_EQ(a.steps[s].action, b.steps[s].action);
      EXPECT_EQ(a.steps[s].arrive_prob, b.steps[s].arrive_prob);
      ASSERT_EQ(a.steps[s].plan.size(), b.steps[s].plan.size());
      for (std::size_t k = 0; k < a.steps[s].plan.size(); ++k) EXPECT_EQ(a.steps[s].plan[k].x, b.steps[s].plan[k].x);
    }
    for (std::size_t s = 0; s < a.trajectory.size(); ++s) {
      EXPECT_EQ(a.trajectory[s].position.x, b.trajectory[s].position.x);
      EXPECT_EQ(a.trajectory[s].position.y, b.trajectory[s].position.y);
    }
    EXPECT_EQ(a.stop, b.stop);
    ASSERT_EQ(a.predictions.size(), b.predictions.size());
    for (std::size_t p = 0; p < a.predictions.size(); ++p) EXPECT_EQ(a.predictions[p].frames, b.predictions[p].frames);
  }
}

TEST(Rollout, MultiStepExecution) {
  auto m = random_model(4);
  const auto set = make_eval_set(40, 40, small_world());
  RolloutOptions opt;
  opt.variant = Variant::former;
  opt.execute_steps = 2;
  opt.step_cap = 10;
  opt.collision_cap = 1000;
  opt.quantize.arrive_threshold = 2.0;
  const auto r = rollout(m.get(), set.maps[0], set.episodes[0], set.world, opt);
  EXPECT_EQ(static_cast<int>(r.steps.size()), 10);
  EXPECT_EQ(r.decisions, 5);
}

TEST(Rollout, RejectsResolutionMismatch) {
  auto m = random_model(5);
  auto world = small_world();
  world.view_resolution = 16;
  const auto set = make_eval_set(1, 1, world);
  EXPECT_THROW(rollout(m.get(), set.maps[0], set.episodes[0], set.world, RolloutOptions{}), std::invalid_argument);
}

TEST(Outcome, ExpertTrajectorySucceeds) {
  const auto set = make_eval_set(50, 54, small_world());
  for (std::size_t i = 0; i < set.size(); ++i) {
    RolloutResult r;
    r.trajectory = set.episodes[i].poses;
    const auto o = outcome_of(r, set.episodes[i], set.maps[i]);
    EXPECT_TRUE(succeeded(o, set.world.arrival_threshold));
    EXPECT_GE(o.stop_error, 0.0);
    EXPECT_GT(episode_spl(o, set.world.arrival_threshold), 0.5);
  }
}

TEST(Evaluate, CountsAndMetricInvariants) {
  auto m = random_model(6);
  const auto set = make_eval_set(60, 63, small_world());
  RolloutOptions opt;
  opt.schedule = SfsSchedule(2);
  opt.step_cap = 8;
  const auto rep = evaluate(m.get(), set, opt, true);
  EXPECT_EQ(rep.metrics.episodes, 4);
  EXPECT_EQ(rep.generator_calls, rep.expected_generator_calls);
  EXPECT_LE(rep.metrics.sr, rep.metrics.os);
  EXPECT_LE(rep.metrics.spl, rep.metrics.os);
  EXPECT_EQ(rep.results.size(), 4u);
  const auto j = to_json(rep);
  EXPECT_EQ(j.at("sfs_k"), 2);
}

TEST(SpeedReport, SpeedupRelativeToSmallestInterval) {
  EvalReport k1, k10;
  k1.sfs_k = 1;
  k1.mean_wall_time = 8.0;
  k1.metrics.sr = 0.4;
  k10.sfs_k = 10;
  k10.mean_wall_time = 2.0;
  k10.metrics.sr = 0.38;
  const auto rows = speed_rows({k10, k1});
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].k, 1);
  EXPECT_DOUBLE_EQ(rows[1].speedup, 4.0);
  EXPECT_NE(speed_report_table({k1, k10}).find("4.00x"), std::string::npos);
  EXPECT_EQ(speed_report_json({k1, k10}).at("rows").size(), 2u);
}

TEST(Artifacts, TrajectoryCsvAndFramePairs) {
  auto m = random_model(7);
  const auto set = make_eval_set(70, 70, small_world());
  RolloutOptions opt;
  opt.schedule = SfsSchedule(3);
  opt.step_cap = 7;
  const auto r = rollout(m.get(), set.maps[0], set.episodes[0], set.world, opt);
  const auto dir = temp_dir("artifacts");
  dump_rollout(dir, r, set.episodes[0], set.world, opt);

  std::ifstream csv(dir + "/trajectory.csv");
  std::string header;
  std::getline(csv, header);
  EXPECT_EQ(header, "step,x,y,theta,action,arrive_prob");
  int rows = 0;
  for (std::string line; std::getline(csv, line);) ++rows;
  EXPECT_EQ(rows, static_cast<int>(r.steps.size()) + 1);

  sim::FrameBlobReader frames(dir + "/frames.bin");
  EXPECT_EQ(frames.count(), r.observed_front.size());
  EXPECT_EQ(frames.read(0), r.observed_front[0]);

  const auto manifest = dump_frame_pairs(dir + "/pairs", r, set.world.view_resolution);
  sim::FrameBlobReader pairs(dir + "/pairs/pairs.bin");
  EXPECT_EQ(pairs.count(), 2 * manifest.at("pairs").size());
  for (const auto& p : manifest.at("pairs")) {
    const auto pred = pairs.read(p.at("predicted").get<std::uint64_t>());
    const auto obs = pairs.read(p.at("observed").get<std::uint64_t>());
    EXPECT_NEAR(psnr(pred.rgb, obs.rgb), p.at("psnr").get<double>(), 1e-9);
  }
  std::filesystem::remove_all(dir);
}

TEST(Artifacts, PpmImages) {
  const auto set = make_eval_set(80, 80, small_world());
  std::vector<Vec3> path;
  for (const auto& p : set.episodes[0].poses) path.push_back(p.position);
  const auto img = trajectory_overlay(set.maps[0], path, set.episodes[0].goal_position, 1.0, 10);
  EXPECT_EQ(img.width, set.maps[0].width() * 10);

  sim::Frame a(8), b(8);
  const auto strip = frame_strip({a, a, a}, {b, b, b}, 2, 2);
  EXPECT_EQ(strip.width, 3 * 16 + 4 * 2);
  EXPECT_EQ(strip.height, 2 * 16 + 3 * 2);

  const auto dir = temp_dir("ppm");
  std::filesystem::create_directories(dir);
  write_ppm(dir + "/strip.ppm", strip);
  std::ifstream is(dir + "/strip.ppm", std::ios::binary);
  std::string magic;
  int w = 0, h = 0, maxv = 0;
  is >> magic >> w >> h >> maxv;
  EXPECT_EQ(magic, "P6");
  EXPECT_EQ(w, strip.width);
  EXPECT_EQ(h, strip.height);
  EXPECT_EQ(std::filesystem::file_size(dir + "/strip.ppm"),
            std::to_string(w).size() + std::to_string(h).size() + 3 + 2 + 4 + static_cast<std::size_t>(w * h * 3));
  std::filesystem::remove_all(dir);
}
