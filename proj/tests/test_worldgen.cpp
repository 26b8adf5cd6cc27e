#include <gtest/gtest.h>

#include <map>
#include <set>

#include "navgen/worldgen/flow.hpp"
#include "test_util.hpp"

using namespace navgen;
using namespace navgen::worldgen;
using namespace navgen::testing;

namespace {

// Independent table of expected coordinates, built slot by slot from the
// offsets: front w, right w + W, left w + 2W, all at the first time index
// after the history; futures continue from there.
std::vector<RopeCoord> coord_oracle(int history, int futures, int h, int w, bool with_sides) {
  std::vector<RopeCoord> out;
  auto grid = [&](int t, int off) {
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) out.push_back({t, r, c + off});
  };
  for (int j = 0; j < history; ++j) grid(j, 0);
  grid(history, 0);
  if (with_sides) {
    grid(history, w);
    grid(history, 2 * w);
  }
  for (int m = 1; m <= futures; ++m) grid(history + m, 0);
  return out;
}

std::vector<SlotRole> roles_for(int history, int futures, bool with_sides) {
  std::vector<SlotRole> r(history, SlotRole::history);
  r.push_back(SlotRole::current_front);
  if (with_sides) {
    r.push_back(SlotRole::current_right);
    r.push_back(SlotRole::current_left);
  }
  r.insert(r.end(), futures, SlotRole::future);
  return r;
}

struct MicroGen {
  ModelConfig cfg = micro_config();
  ParamStore<double> store{7};
  FrameCodec<double> codec;
  VideoDiT<double> dit;
  Td ctx_tokens;
  ContextEmbedding<double> ctx;

  explicit MicroGen(std::uint64_t seed = 0) : store(seed) {
    codec = FrameCodec<double>(store, cfg);
    dit = VideoDiT<double>(store, cfg);
    Rng rng(seed + 100);
    ctx.tokens = random_tensor(rng, {6, cfg.dim});
    ctx.mask = {1, 1, 1, 1, 0, 1};
  }

  LatentGrid<double> grid(Rng& rng) const {
    LatentGrid<double> g;
    const int tpf = cfg.tokens_per_frame();
    g.roles = default_roles(cfg.history, cfg.horizon);
    g.cond = random_tensor(rng, {(cfg.history + 3) * tpf, cfg.latent_channels}, false);
    g.future = random_tensor(rng, {cfg.horizon * tpf, cfg.latent_channels}, false);
    return g;
  }
};

}  // namespace

TEST(Rope, PinnedOffsets) {
  // W = 4: history of 2 gives the current views t = 2
  std::vector<SlotRole> roles = {SlotRole::history, SlotRole::history, SlotRole::current_front,
                                 SlotRole::current_right, SlotRole::current_left};
  const auto c = assign_rope_coords(roles, 4, 4);
  const int tpf = 16;
  const RopeCoord left = c[4 * tpf + 1 * 4 + 3];
  EXPECT_EQ(left, (RopeCoord{2, 1, 11}));
  EXPECT_EQ(c[2 * tpf], (RopeCoord{2, 0, 0}));
  EXPECT_EQ(c[3 * tpf + 2 * 4 + 1], (RopeCoord{2, 2, 5}));
}

TEST(Rope, MatchesBruteForceTable) {
  for (int history = 0; history <= 3; ++history) {
    for (int w : {2, 4}) {
      for (int futures = 0; futures <= 3; ++futures) {
        for (bool sides : {false, true}) {
          const auto got = assign_rope_coords(roles_for(history, futures, sides), w, w);
          EXPECT_EQ(got, coord_oracle(history, futures, w, w, sides))
              << "history " << history << " W " << w << " futures " << futures;
          const std::set<RopeCoord> unique(got.begin(), got.end());
          EXPECT_EQ(unique.size(), got.size());
          for (const auto& rc : got) EXPECT_TRUE(rc.t >= 0 && rc.h >= 0 && rc.w >= 0);
        }
      }
    }
  }
}

TEST(Rope, RejectsBadRoles) {
  EXPECT_THROW(assign_rope_coords({SlotRole::history, static_cast<SlotRole>(9)}, 2, 2), std::invalid_argument);
  EXPECT_THROW(assign_rope_coords({SlotRole::history, SlotRole::future}, 2, 2), std::invalid_argument);
  EXPECT_THROW(assign_rope_coords({SlotRole::current_front, SlotRole::current_front}, 2, 2), std::invalid_argument);
  EXPECT_THROW(default_rope_axes(4), ShapeError);
  EXPECT_THROW(default_rope_axes(7), ShapeError);
}

TEST(Rope, ZeroCoordsAreIdentityAndNormPreserved) {
  Rng rng(1);
  const Td x = random_tensor(rng, {5, 24}, false);
  const auto same = rope_rotate(x, std::vector<RopeCoord>(5), 2);
  EXPECT_LT(max_abs_diff(same.data(), x.data()), 1e-15);
  std::vector<RopeCoord> coords;
  for (int i = 0; i < 5; ++i) coords.push_back({rng.uniform_int(0, 9), rng.uniform_int(0, 9), rng.uniform_int(0, 20)});
  const auto y = rope_rotate(x, coords, 2);
  for (int r = 0; r < 5; ++r) {
    double nx = 0, ny = 0;
    for (int c = 0; c < 24; ++c) {
      nx += x.at(r, c) * x.at(r, c);
      ny += y.at(r, c) * y.at(r, c);
    }
    EXPECT_NEAR(std::sqrt(nx), std::sqrt(ny), 1e-6);
  }
}

TEST(Rope, DotProductDependsOnlyOnOffsets) {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const Td q = random_tensor(rng, {1, 12}, false);
    const Td k = random_tensor(rng, {1, 12}, false);
    const RopeCoord a{rng.uniform_int(0, 6), rng.uniform_int(0, 6), rng.uniform_int(0, 12)};
    const RopeCoord b{rng.uniform_int(0, 6), rng.uniform_int(0, 6), rng.uniform_int(0, 12)};
    const RopeCoord s{rng.uniform_int(0, 5), rng.uniform_int(0, 5), rng.uniform_int(0, 5)};
    auto dot = [&](RopeCoord ca, RopeCoord cb) {
      const auto rq = rope_rotate(q, {ca}, 1);
      const auto rk = rope_rotate(k, {cb}, 1);
      double d = 0;
      for (int c = 0; c < 12; ++c) d += rq[c] * rk[c];
      return d;
    };
    EXPECT_NEAR(dot(a, b), dot({a.t + s.t, a.h + s.h, a.w + s.w}, {b.t + s.t, b.h + s.h, b.w + s.w}), 1e-10);
  }
}

TEST(Rope, GradientCheck) {
  Rng rng(3);
  Td x = random_tensor(rng, {4, 12});
  const std::vector<RopeCoord> coords = {{0, 1, 2}, {3, 0, 5}, {1, 1, 1}, {2, 3, 7}};
  const auto res = grad_check<double>([&] { return project(rope_rotate(x, coords, 2), 9); }, {{"x", x}});
  EXPECT_LE(res.max_rel_error, 1e-6);
}

TEST(Codec, ZeroFrameFiniteAndDeterministic) {
  const ModelConfig c = micro_config();
  ParamStore<double> store(1);
  FrameCodec<double> codec(store, c);
  const std::vector<float> zero(static_cast<std::size_t>(c.view_resolution * c.view_resolution * 3), 0.0f);
  const auto z = codec.encode(zero);
  EXPECT_EQ(z.shape(), (Shape{c.tokens_per_frame(), c.latent_channels}));
  EXPECT_TRUE(all_finite(z));
  const auto px = codec.decode_frame(z);
  EXPECT_EQ(px.size(), zero.size());
  for (float v : px) EXPECT_TRUE(std::isfinite(v));
  Rng rng(2);
  const auto f = random_frame(rng, c.view_resolution);
  EXPECT_EQ(max_abs_diff(codec.encode(f).data(), codec.encode(f).data()), 0.0);
  EXPECT_THROW(codec.encode(std::vector<float>(5)), ShapeError);
  EXPECT_THROW(codec.decode(random_tensor(rng, {4, c.latent_channels + 1}, false)), ShapeError);
}

TEST(Generator, OutputShapeAndContextSensitivity) {
  MicroGen g;
  Rng rng(4);
  const auto grid = g.grid(rng);
  const auto in = make_video_input(grid, 0.6, g.cfg.sigma_obs, 0.0, rng);
  const auto v = g.dit.forward(in, g.ctx);
  EXPECT_EQ(v.shape(), grid.future.shape());
  EXPECT_TRUE(all_finite(v));

  auto blank = g.ctx;
  blank.tokens = Td::zeros(g.ctx.tokens.shape());
  const auto v0 = g.dit.forward(in, blank);
  EXPECT_GT(max_abs_diff(v.data(), v0.data()), 1e-8);

  std::vector<Td> hidden;
  g.dit.forward(in, g.ctx, &hidden);
  EXPECT_EQ(static_cast<int>(hidden.size()), g.dit.blocks());
}

TEST(Generator, BlockwiseMatchesForward) {
  ModelConfig c = micro_config();
  c.video_blocks = 3;
  ParamStore<double> store(2);
  VideoDiT<double> dit(store, c);
  MicroGen g;
  Rng rng(5);
  const auto in = make_video_input(g.grid(rng), 0.3, 0.05, 0.0, rng);
  const auto full = dit.forward(in, g.ctx);
  auto s = dit.begin(in, g.ctx);
  while (s.next_block < dit.blocks()) dit.run_block(s);
  EXPECT_EQ(max_abs_diff(full.data(), dit.finish(s).data()), 0.0);
}

TEST(Generator, RejectsMisorderedOrEmptyFutures) {
  MicroGen g;
  Rng rng(6);
  auto grid = g.grid(rng);
  auto in = make_video_input(grid, 0.5, 0.0, 0.0, rng);
  auto swapped = in;
  std::swap(swapped.roles.front(), swapped.roles.back());
  EXPECT_THROW(g.dit.forward(swapped, g.ctx), ShapeError);
  grid.future = Td::zeros({0, g.cfg.latent_channels});
  EXPECT_ANY_THROW(vg_loss(g.dit, grid, g.ctx, 0.5, rng));
}

TEST(Generator, GradientCheckOneBlock) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    MicroGen g(seed);
    // Widen the modulation so every branch carries signal.
    for (auto& p : g.store.all()) {
      if (p.name.find("mod") != std::string::npos || p.name.find("out_proj") != std::string::npos) {
        Rng r(seed + 50);
        for (auto& x : p.tensor.mutable_data()) x = 0.3 * r.normal();
      }
    }
    Rng rng(seed + 1);
    const auto grid = g.grid(rng);
    Td cond = grid.cond;
    cond.set_requires_grad(true);
    Rng draw(seed + 2);
    auto in = make_video_input(grid, 0.4, 0.05, 0.0, draw);
    in.cond = cond;
    NamedTensors<double> leaves{{"cond", cond}, {"ctx", g.ctx.tokens}};
    for (auto& p : g.store.all()) {
      if (p.name.rfind("generator.", 0) == 0) leaves.emplace_back(p.name, p.tensor);
    }
    const auto res =
        grad_check<double>([&] { return project(g.dit.forward(in, g.ctx), seed); }, leaves, 1e-6, 4, seed);
    EXPECT_LE(res.max_rel_error, 1e-4) << res.worst_param;
  }
}

TEST(FlowMatching, EndpointsAndPerfectPredictor) {
  Rng rng(7);
  const Td z = random_tensor(rng, {6, 3}, false);
  const Td eps = random_tensor(rng, {6, 3}, false);
  EXPECT_EQ(max_abs_diff(flow_interpolate(z, eps, 0.0).data(), z.data()), 0.0);
  EXPECT_EQ(max_abs_diff(flow_interpolate(z, eps, 1.0).data(), eps.data()), 0.0);
  const Td target = flow_target(z, eps);
  EXPECT_EQ(mse(target, target).item(), 0.0);
  for (std::size_t i = 0; i < target.size(); ++i) EXPECT_EQ(target[i], eps[i] - z[i]);
}

TEST(FlowMatching, VgLossDeterministicAndFutureOnly) {
  MicroGen g;
  Rng rng(8);
  const auto grid = g.grid(rng);
  Rng a(11), b(11);
  const auto la = vg_loss(g.dit, grid, g.ctx, 0.3, a);
  const auto lb = vg_loss(g.dit, grid, g.ctx, 0.3, b);
  EXPECT_EQ(la.loss.item(), lb.loss.item());
  EXPECT_EQ(la.velocity.shape(), grid.future.shape());
  EXPECT_EQ(la.target.shape(), grid.future.shape());
  // the target is built from future latents alone
  auto moved = grid;
  moved.cond = add_scalar(grid.cond, 3.0);
  Rng c(11);
  const auto lc = vg_loss(g.dit, moved, g.ctx, 0.3, c);
  EXPECT_EQ(max_abs_diff(la.target.data(), lc.target.data()), 0.0);
}

TEST(FlowMatching, ZeroPredictorMatchesMonteCarlo) {
  Rng rng(9);
  const Td z = random_tensor(rng, {4, 3}, false, 0.7);
  double zz = 0;
  for (double v : z.data()) zz += v * v;
  const double expected = 1.0 + zz / static_cast<double>(z.size());  // E|eps - z|^2 per entry
  const int draws = 10000;
  double s = 0, s2 = 0;
  for (int i = 0; i < draws; ++i) {
    const Td eps = gaussian_like<double>(z.shape(), rng);
    const double l = mse(Td::zeros(z.shape()), flow_target(z, eps)).item();
    s += l;
    s2 += l * l;
  }
  const double mean = s / draws, se = std::sqrt((s2 / draws - mean * mean) / draws);
  EXPECT_LE(std::abs(mean - expected), 3 * se);
}

TEST(Sampler, OneStepClosedFormAndSeedDeterminism) {
  MicroGen g;
  Rng rng(12);
  const auto grid = g.grid(rng);
  const auto s1 = sample_future(g.dit, g.codec, grid.cond, grid.roles, g.ctx, 1, 5);
  // replay the sampler's draws by hand
  Rng r(5);
  const Td eps = gaussian_like<double>(grid.future.shape(), r);
  VideoInput<double> in;
  in.cond = noisy_conditioning(grid.cond, g.cfg.sigma_obs, r);
  in.future = eps;
  in.roles = grid.roles;
  in.t_future = 1.0;
  const Td v = g.dit.forward(in, g.ctx);
  for (std::size_t i = 0; i < eps.size(); ++i) EXPECT_NEAR(s1.latent[i], eps[i] - v[i], 1e-14);
  const auto a = sample_future(g.dit, g.codec, grid.cond, grid.roles, g.ctx, 4, 9);
  const auto b = sample_future(g.dit, g.codec, grid.cond, grid.roles, g.ctx, 4, 9);
  EXPECT_EQ(a.frames, b.frames);
  EXPECT_EQ(static_cast<int>(a.frames.size()), g.cfg.horizon);
}

TEST(Sampler, NonFiniteStateReportsStep) {
  MicroGen g;
  Rng rng(13);
  const auto grid = g.grid(rng);
  for (auto& p : g.store.all()) {
    if (p.name == "generator.out_proj.bias") p.tensor.mutable_data()[0] = std::numeric_limits<double>::infinity();
  }
  try {
    sample_future(g.dit, g.codec, grid.cond, grid.roles, g.ctx, 3, 1);
    FAIL() << "expected a numeric error";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("step 0"), std::string::npos) << e.what();
  }
}
