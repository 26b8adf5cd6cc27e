#include <gtest/gtest.h>

#include <numbers>

#include "navgen/policy/joint.hpp"
#include "test_util.hpp"

using namespace navgen;
using namespace navgen::policy;
using namespace navgen::testing;
using geometry::ActionStep;

namespace {

ContextEmbedding<double> random_context(Rng& rng, int len, int dim) {
  ContextEmbedding<double> c;
  c.tokens = random_tensor(rng, {len, dim});
  c.mask.assign(static_cast<std::size_t>(len), 1);
  c.mask[1] = 0;
  return c;
}

std::vector<ActionStep> random_steps(Rng& rng, int n) {
  std::vector<ActionStep> s;
  for (int i = 0; i < n; ++i) {
    s.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-3, 3), rng.bernoulli(0.5) ? 1.0 : 0.0});
  }
  return s;
}

void randomize(ParamStore<double>& store, const std::string& prefix, std::uint64_t seed, double scale = 0.3) {
  Rng r(seed);
  for (auto* p : store.with_prefix(prefix)) {
    for (auto& x : p->tensor.mutable_data()) x = scale * r.normal();
  }
}

struct MicroJoint {
  ModelConfig cfg = micro_config();
  ParamStore<double> store;
  worldgen::FrameCodec<double> codec;
  worldgen::VideoDiT<double> dit;
  DiffusionPolicy<double> policy;
  FusionBank<double> bank;
  ContextEmbedding<double> ctx;

  explicit MicroJoint(std::uint64_t seed, int video_blocks = 1, int policy_blocks = 2) : store(seed) {
    cfg.video_blocks = video_blocks;
    cfg.policy_blocks = policy_blocks;
    codec = worldgen::FrameCodec<double>(store, cfg);
    dit = worldgen::VideoDiT<double>(store, cfg);
    policy = DiffusionPolicy<double>(store, cfg);
    bank = FusionBank<double>(store, cfg);
    Rng rng(seed + 100);
    ctx = random_context(rng, 5, cfg.dim);
  }

  worldgen::LatentGrid<double> grid(Rng& rng) const {
    worldgen::LatentGrid<double> g;
    const int tpf = cfg.tokens_per_frame();
    g.roles = worldgen::default_roles(cfg.history, cfg.horizon);
    g.cond = random_tensor(rng, {(cfg.history + 3) * tpf, cfg.latent_channels}, false);
    g.future = random_tensor(rng, {cfg.horizon * tpf, cfg.latent_channels}, false);
    return g;
  }
};

}  // namespace

TEST(ActionFormer, ShapeDeterminismAndRowwiseHead) {
  ModelConfig c = micro_config();
  c.horizon = 5;
  ParamStore<double> store(1);
  ActionFormer<double> former(store, c);
  Rng rng(2);
  const auto ctx = random_context(rng, 7, c.dim);
  const auto a = former.forward(ctx);
  EXPECT_EQ(a.shape(), (Shape{5, kActionWidth}));
  EXPECT_EQ(max_abs_diff(a.data(), former.forward(ctx).data()), 0.0);

  const Td refined = former.refine(ctx);
  const Td base = former.head(refined);
  std::vector<double> bumped(refined.data().begin(), refined.data().end());
  for (int j = 0; j < c.dim; ++j) bumped[2 * c.dim + j] += 0.5;
  const Td out = former.head(Td::from(refined.shape(), bumped));
  for (int r = 0; r < 5; ++r) {
    double d = 0;
    for (int j = 0; j < kActionWidth; ++j) d = std::max(d, std::abs(out.at(r, j) - base.at(r, j)));
    if (r == 2) EXPECT_GT(d, 1e-9);
    else EXPECT_EQ(d, 0.0);
  }
}

TEST(ActionFormer, GradientCheck) {
  const ModelConfig c = micro_config();
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    ParamStore<double> store(seed);
    ActionFormer<double> former(store, c);
    Rng rng(seed + 3);
    auto ctx = random_context(rng, 6, c.dim);
    NamedTensors<double> leaves{{"ctx", ctx.tokens}};
    for (auto& p : store.all()) leaves.emplace_back(p.name, p.tensor);
    const auto res = grad_check<double>([&] { return project(former.forward(ctx), seed); }, leaves, 1e-6, 6, seed);
    EXPECT_LE(res.max_rel_error, 1e-4) << res.worst_param;
  }
}

TEST(FormerLoss, ExactMatchIsZero) {
  const std::vector<ActionStep> gt = {{0.25, 0.0, 0.3, 1.0}, {0.5, -0.1, -1.2, 0.0}, {0.1, 0.2, 2.0, 1.0}};
  std::vector<double> v;
  for (const auto& s : gt) {
    for (double x : {s.x, s.y, std::cos(s.theta), std::sin(s.theta), s.arrive > 0.5 ? 20.0 : -20.0}) v.push_back(x);
  }
  const auto l = former_loss(Td::from({3, 5}, v), gt);
  EXPECT_EQ(l.pos.item(), 0.0);
  EXPECT_NEAR(l.angle.item(), 0.0, 1e-15);
  EXPECT_LE(l.arrive.item(), 1e-8);
  EXPECT_NEAR(l.total.item(), l.pos.item() + l.angle.item() + l.arrive.item(), 1e-15);
}

TEST(FormerLoss, OpposedHeadingsAndZeroLogits) {
  const std::vector<ActionStep> gt = {{0.0, 0.0, 0.4, 1.0}, {0.0, 0.0, -2.5, 1.0}};
  std::vector<double> v;
  for (const auto& s : gt) {
    for (double x : {0.0, 0.0, -std::cos(s.theta), -std::sin(s.theta), 0.0}) v.push_back(x);
  }
  const auto l = former_loss(Td::from({2, 5}, v), gt);
  EXPECT_NEAR(l.angle.item(), 2.0, 1e-12);
  EXPECT_NEAR(l.arrive.item(), std::numbers::ln2, 1e-12);
}

TEST(FormerLoss, PositionTermIsMeanL1AndComponentsNonNegative) {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const auto gt = random_steps(rng, 4);
    const Td pred = random_tensor(rng, {4, 5}, false, 2.0);
    double pos = 0;
    for (int i = 0; i < 4; ++i) pos += std::abs(pred.at(i, 0) - gt[i].x) + std::abs(pred.at(i, 1) - gt[i].y);
    const auto l = former_loss(pred, gt);
    EXPECT_NEAR(l.pos.item(), pos / 4, 1e-12);
    EXPECT_GE(l.arrive.item(), 0.0);
    const auto n = former_loss(pred, gt, true);
    EXPECT_GE(n.angle.item(), -1e-12);
    EXPECT_LE(n.angle.item(), 2.0 + 1e-12);
  }
  EXPECT_THROW(former_loss(Td::zeros({3, 5}), random_steps(rng, 2)), ShapeError);
}

TEST(Mmfca, ZeroInitIsIdentity) {
  ParamStore<double> store(5);
  FusionTap<double> tap(store, "tap", 8, 12, 6, 2);
  Rng rng(6);
  const Td a = random_tensor(rng, {3, 8}, false);
  const Td v = random_tensor(rng, {7, 12}, false);
  auto [a2, v2] = mmfca(a, v, tap);
  EXPECT_EQ(max_abs_diff(a2.data(), a.data()), 0.0);
  EXPECT_EQ(max_abs_diff(v2.data(), v.data()), 0.0);
}

TEST(Mmfca, SingleTokenMatchesScalarOracle) {
  // With one key, softmax weight is 1, so each direction returns
  // out(value(norm(other))) added to its input.
  ParamStore<double> store(7);
  FusionTap<double> tap(store, "tap", 4, 6, 4, 1);
  randomize(store, "tap", 8);
  Rng rng(9);
  const Td a = random_tensor(rng, {1, 4}, false);
  const Td v = random_tensor(rng, {1, 6}, false);
  auto norm = [](const Td& x, const Td& g, const Td& b) {
    const int n = x.cols();
    double m = 0, s = 0;
    for (int i = 0; i < n; ++i) m += x[i];
    m /= n;
    for (int i = 0; i < n; ++i) s += (x[i] - m) * (x[i] - m);
    const double r = 1.0 / std::sqrt(s / n + kLayerNormEps);
    std::vector<double> y(n);
    for (int i = 0; i < n; ++i) y[i] = (x[i] - m) * r * g[i] + b[i];
    return y;
  };
  auto affine = [](const std::vector<double>& x, const Linear<double>& l) {
    const int out = l.weight.cols();
    std::vector<double> y(out);
    for (int j = 0; j < out; ++j) {
      double s = l.bias[j];
      for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * l.weight.at(static_cast<int>(i), j);
      y[j] = s;
    }
    return y;
  };
  const auto na = norm(a, tap.ln_a.gain, tap.ln_a.bias);
  const auto nv = norm(v, tap.ln_v.gain, tap.ln_v.bias);
  const auto da = affine(affine(nv, tap.v_v), tap.a_out);
  const auto dv = affine(affine(na, tap.a_v), tap.v_out);
  auto [a2, v2] = mmfca(a, v, tap);
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(a2[i], a[i] + da[i], 1e-12);
  for (int i = 0; i < 6; ++i) EXPECT_NEAR(v2[i], v[i] + dv[i], 1e-12);
}

TEST(Mmfca, SwappingVideoTokensOnlyPermutes) {
  ParamStore<double> store(10);
  FusionTap<double> tap(store, "tap", 8, 8, 4, 2);
  randomize(store, "tap", 11);
  Rng rng(12);
  const Td a = random_tensor(rng, {3, 8}, false);
  const Td v = random_tensor(rng, {2, 8}, false);
  const Td swapped = concat_rows<double>({slice_rows(v, 1, 2), slice_rows(v, 0, 1)});
  auto [a1, v1] = mmfca(a, v, tap);
  auto [a2, v2] = mmfca(a, swapped, tap);
  EXPECT_LT(max_abs_diff(a1.data(), a2.data()), 1e-12);
  for (int j = 0; j < 8; ++j) {
    EXPECT_NEAR(v1.at(0, j), v2.at(1, j), 1e-12);
    EXPECT_NEAR(v1.at(1, j), v2.at(0, j), 1e-12);
  }
}

TEST(Mmfca, GradientCheck) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    ParamStore<double> store(seed);
    FusionTap<double> tap(store, "tap", 8, 6, 4, 2);
    randomize(store, "tap", seed + 20);
    Rng rng(seed);
    Td a = random_tensor(rng, {3, 8});
    Td v = random_tensor(rng, {5, 6});
    NamedTensors<double> leaves{{"a", a}, {"v", v}};
    for (auto& p : store.all()) leaves.emplace_back(p.name, p.tensor);
    const auto res = grad_check<double>([&] {
      auto [x, y] = mmfca(a, v, tap);
      return add(project(x, seed), project(y, seed + 1));
    }, leaves, 1e-6, 6, seed);
    EXPECT_LE(res.max_rel_error, 1e-4) << res.worst_param;
  }
}

TEST(TapPairs, AlignedFromTheEnd) {
  const ModelConfig c;  // 8 policy blocks, 6 generator blocks
  const auto p = tap_pairs(c);
  const std::vector<std::pair<int, int>> want = {{1, 2}, {3, 3}, {5, 4}, {7, 5}};
  EXPECT_EQ(p, want);
  ModelConfig few = c;
  few.fusion_taps = 2;
  const std::vector<std::pair<int, int>> want2 = {{5, 4}, {7, 5}};
  EXPECT_EQ(tap_pairs(few), want2);
  few.video_blocks = 1;
  EXPECT_EQ(tap_pairs(few), (std::vector<std::pair<int, int>>{{7, 0}}));
}

TEST(DiffusionPolicy, ShapeAndGammaZeroIgnoresVideo) {
  MicroJoint m(1);
  randomize(m.store, "fusion.", 3);
  Rng rng(2);
  const Td a_t = random_tensor(rng, {m.cfg.horizon, kActionWidth}, false);
  const auto grid = m.grid(rng);
  const auto vin = worldgen::make_video_input(grid, 0.5, 0.05, 0.0, rng);
  auto vs = m.dit.begin(vin, m.ctx);
  const Td with = m.policy.forward(a_t, 0.5, m.ctx, &m.bank, false, {&m.dit, &vs});
  const Td without = m.policy.forward(a_t, 0.5, m.ctx);
  EXPECT_EQ(with.shape(), (Shape{m.cfg.horizon, kActionWidth}));
  EXPECT_EQ(max_abs_diff(with.data(), without.data()), 0.0);
  EXPECT_EQ(vs.next_block, 0);
  EXPECT_THROW(m.policy.forward(a_t, 0.5, m.ctx, &m.bank, true), std::invalid_argument);
  const Td fused = m.policy.forward(a_t, 0.5, m.ctx, &m.bank, true, {&m.dit, &vs});
  EXPECT_GT(max_abs_diff(fused.data(), without.data()), 1e-9);
}

TEST(DiffusionPolicy, GammaZeroEqualsTapFreeModel) {
  MicroJoint m(4, 2, 4);
  randomize(m.store, "fusion.", 5);
  ParamStore<double> bare(4);
  DiffusionPolicy<double> tap_free(bare, m.cfg);
  Rng rng(6);
  for (int i = 0; i < 100; ++i) {
    const Td a_t = random_tensor(rng, {m.cfg.horizon, kActionWidth}, false);
    const double t = rng.uniform();
    const auto vin = worldgen::make_video_input(m.grid(rng), t, 0.05, 0.0, rng);
    auto vs = m.dit.begin(vin, m.ctx);
    const Td x = m.policy.forward(a_t, t, m.ctx, &m.bank, false, {&m.dit, &vs});
    const Td y = tap_free.forward(a_t, t, m.ctx);
    ASSERT_EQ(max_abs_diff(x.data(), y.data()), 0.0);
  }
}

TEST(DiffusionPolicy, GradientCheckWithFusion) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    MicroJoint m(seed, 1, 2);
    randomize(m.store, "fusion.", seed + 30);
    for (auto* p : m.store.with_prefix("policy.")) {
      if (p->name.find("mod") != std::string::npos || p->name.find("out_proj") != std::string::npos) {
        Rng r(seed + 40);
        for (auto& x : p->tensor.mutable_data()) x = 0.3 * r.normal();
      }
    }
    Rng rng(seed + 1);
    Td a_t = random_tensor(rng, {m.cfg.horizon, kActionWidth});
    const auto vin = worldgen::make_video_input(m.grid(rng), 0.7, 0.05, 0.0, rng);
    NamedTensors<double> leaves{{"a_t", a_t}, {"ctx", m.ctx.tokens}};
    for (auto& p : m.store.all()) {
      if (p.name.rfind("policy.", 0) == 0 || p.name.rfind("fusion.", 0) == 0) leaves.emplace_back(p.name, p.tensor);
    }
    const auto res = grad_check<double>([&] {
      const auto v = joint_forward(m.policy, m.dit, &m.bank, true, a_t, 0.7, vin, m.ctx);
      return add(project(v.action, seed), project(v.video, seed + 1));
    }, leaves, 1e-6, 4, seed);
    EXPECT_LE(res.max_rel_error, 1e-4) << res.worst_param;
  }
}

TEST(DiffusionPolicy, LossEndpointsAndPerfectPredictor) {
  Rng rng(7);
  const auto steps = random_steps(rng, 3);
  const Td actions = encode_actions<double>(steps);
  const Td eps = gaussian_like<double>(actions.shape(), rng);
  EXPECT_EQ(max_abs_diff(flow_interpolate(actions, eps, 1.0).data(), eps.data()), 0.0);
  EXPECT_EQ(max_abs_diff(flow_interpolate(actions, eps, 0.0).data(), actions.data()), 0.0);
  const Td target = flow_target(actions, eps);
  EXPECT_EQ(mse(target, target).item(), 0.0);
  MicroJoint m(8);
  const Td gt = encode_actions<double>(random_steps(rng, m.cfg.horizon));
  Rng a(3), b(3);
  const auto la = diffusion_policy_loss(m.policy, gt, m.ctx, 0.4, a);
  const auto lb = diffusion_policy_loss(m.policy, gt, m.ctx, 0.4, b);
  EXPECT_EQ(la.loss.item(), lb.loss.item());
  EXPECT_EQ(la.velocity.shape(), gt.shape());
}

TEST(DiffusionPolicy, ZeroPredictorMatchesMonteCarlo) {
  Rng rng(9);
  const Td actions = encode_actions<double>(random_steps(rng, 5));
  double aa = 0;
  for (double v : actions.data()) aa += v * v;
  const double expected = 1.0 + aa / static_cast<double>(actions.size());
  const int draws = 10000;
  double s = 0, s2 = 0;
  for (int i = 0; i < draws; ++i) {
    Td target;
    make_action_input(actions, rng.uniform_open(), rng, &target);
    const double l = mse(Td::zeros(actions.shape()), target).item();
    s += l;
    s2 += l * l;
  }
  const double mean = s / draws, se = std::sqrt((s2 / draws - mean * mean) / draws);
  EXPECT_LE(std::abs(mean - expected), 3 * se);
}

TEST(Sampling, ActionsOneStepAndDeterminism) {
  MicroJoint m(10);
  const Td a1 = sample_actions(m.policy, m.ctx, 1, 4);
  Rng r(4);
  const Td eps = gaussian_like<double>({m.cfg.horizon, kActionWidth}, r);
  const Td v = m.policy.forward(eps, 1.0, m.ctx);
  for (std::size_t i = 0; i < eps.size(); ++i) EXPECT_NEAR(a1[i], eps[i] - v[i], 1e-14);
  EXPECT_EQ(max_abs_diff(sample_actions(m.policy, m.ctx, 5, 2).data(), sample_actions(m.policy, m.ctx, 5, 2).data()),
            0.0);
}

TEST(Sampling, SynchronizedRolloutMatchesPolicyOnlyWhenFusionOff) {
  MicroJoint m(11, 2, 4);
  randomize(m.store, "fusion.", 12);
  Rng rng(13);
  const auto grid = m.grid(rng);
  const auto off = joint_sample(m.policy, m.dit, m.codec, &m.bank, false, grid.cond, grid.roles, m.ctx, 4, 21);
  const auto on = joint_sample(m.policy, m.dit, m.codec, &m.bank, true, grid.cond, grid.roles, m.ctx, 4, 21);
  const Td alone = sample_actions(m.policy, m.ctx, 4, 21);
  EXPECT_EQ(max_abs_diff(off.actions.data(), alone.data()), 0.0);
  EXPECT_GT(max_abs_diff(on.actions.data(), alone.data()), 1e-9);
  EXPECT_EQ(static_cast<int>(on.future.frames.size()), m.cfg.horizon);
}

TEST(JointLoss, TotalIsWeightedSum) {
  MicroJoint m(14);
  Rng rng(15);
  const auto grid = m.grid(rng);
  const Td actions = encode_actions<double>(random_steps(rng, m.cfg.horizon));
  for (double lambda : {0.5, 1.0, 2.0}) {
    Rng r(16);
    const auto t = joint_loss(m.policy, m.dit, &m.bank, true, actions, grid, m.ctx, 0.3, lambda, r);
    EXPECT_NEAR(t.total.item(), t.vg.item() + lambda * t.ph.item(), 1e-12);
  }
}
