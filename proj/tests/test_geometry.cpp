#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <numbers>

#include "navgen/geometry.hpp"
#include "navgen/numerics/random.hpp"

using namespace navgen;
using namespace navgen::geometry;
constexpr double kPi = std::numbers::pi;

namespace {

// Full 3x3 rotation matrix of a quaternion; yaw is read off the first column.
std::array<double, 9> rotation_matrix(const Quaternion& q) {
  const double w = q.w, x = q.x, y = q.y, z = q.z;
  return {1 - 2 * (y * y + z * z), 2 * (x * y - w * z),     2 * (x * z + w * y),
          2 * (x * y + w * z),     1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
          2 * (x * z - w * y),     2 * (y * z + w * x),     1 - 2 * (x * x + y * y)};
}

double matrix_yaw(const Quaternion& q) {
  const auto m = rotation_matrix(q);
  return std::atan2(m[3], m[0]);
}

double angle_diff(double a, double b) { return std::abs(std::remainder(a - b, 2 * kPi)); }

Pose random_pose(Rng& rng) { return make_pose(rng.uniform(-10, 10), rng.uniform(-10, 10), rng.uniform(-kPi, kPi), rng.uniform(0, 2)); }

// Homogeneous SE(2) matrix of a ground-plane pose.
std::array<double, 9> se2(double x, double y, double h) {
  return {std::cos(h), -std::sin(h), x, std::sin(h), std::cos(h), y, 0, 0, 1};
}

std::array<double, 9> se2_inverse(const std::array<double, 9>& m) {
  // [R t]^-1 = [R^T, -R^T t]
  return {m[0], m[3], -(m[0] * m[2] + m[3] * m[5]), m[1], m[4], -(m[1] * m[2] + m[4] * m[5]), 0, 0, 1};
}

std::array<double, 9> matmul3(const std::array<double, 9>& a, const std::array<double, 9>& b) {
  std::array<double, 9> c{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) c[i * 3 + j] += a[i * 3 + k] * b[k * 3 + j];
  return c;
}

}  // namespace

TEST(Heading, IdentityIsZero) { EXPECT_EQ(quat_to_heading({1, 0, 0, 0}), 0.0); }

TEST(Heading, QuarterTurnMatchesRotationMatrix) {
  const Quaternion q{std::cos(kPi / 4), 0, 0, std::sin(kPi / 4)};
  EXPECT_NEAR(quat_to_heading(q), kPi / 2, 1e-12);
  EXPECT_NEAR(quat_to_heading(q), matrix_yaw(q), 1e-12);
}

TEST(Heading, CompositionAddsYaw) {
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    const double a = rng.uniform(-kPi, kPi), b = rng.uniform(-kPi, kPi);
    const Quaternion q = yaw_quaternion(a) * yaw_quaternion(b);
    EXPECT_LT(angle_diff(quat_to_heading(q), matrix_yaw(q)), 1e-9);
    EXPECT_LT(angle_diff(quat_to_heading(q), wrap_angle(a + b)), 1e-9);
  }
}

TEST(Heading, DiscardsPitchAndRoll) {
  // yaw 0.7 followed by a small pitch about the body y axis
  const Quaternion pitch{std::cos(0.1), 0, std::sin(0.1), 0};
  const Quaternion q = yaw_quaternion(0.7) * pitch;
  EXPECT_NEAR(quat_to_heading(q), matrix_yaw(q), 1e-12);
}

TEST(Heading, RejectsNonUnit) {
  EXPECT_THROW(quat_to_heading({1.01, 0, 0, 0}), GeometryError);
  EXPECT_NO_THROW(quat_to_heading({1.0005, 0, 0, 0}));
}

TEST(Heading, WrapRange) {
  EXPECT_EQ(wrap_angle(kPi), kPi);
  EXPECT_EQ(wrap_angle(-kPi), kPi);
  Rng rng(2);
  for (int i = 0; i < 1000; ++i) {
    const double w = wrap_angle(rng.uniform(-50, 50));
    EXPECT_GT(w, -kPi);
    EXPECT_LE(w, kPi);
  }
}

TEST(LocalFrame, IdentityAndAxisAligned) {
  const Pose ref = make_pose(2, 3, 0.4);
  auto s = to_local_frame(ref, {ref}, Vec3{2, 3, 0}, 1.0);
  EXPECT_NEAR(s[0].x, 0, 1e-12);
  EXPECT_NEAR(s[0].y, 0, 1e-12);
  EXPECT_NEAR(s[0].theta, 0, 1e-12);
  EXPECT_EQ(s[0].arrive, 1.0);

  const Pose ahead = make_pose(2 + std::cos(0.4), 3 + std::sin(0.4), 0.4);
  s = to_local_frame(ref, {ahead}, Vec3{50, 50, 0}, 1.0);
  EXPECT_NEAR(s[0].x, 1, 1e-12);
  EXPECT_NEAR(s[0].y, 0, 1e-12);
  EXPECT_NEAR(s[0].theta, 0, 1e-12);
  EXPECT_EQ(s[0].arrive, 0.0);
  EXPECT_TRUE(to_local_frame(ref, {}).empty());
}

TEST(LocalFrame, MatchesSe2MatrixOracle) {
  Rng rng(3);
  for (int i = 0; i < 500; ++i) {
    const Pose a = random_pose(rng), b = random_pose(rng);
    const auto rel = matmul3(se2_inverse(se2(a.position.x, a.position.y, heading(a))),
                             se2(b.position.x, b.position.y, heading(b)));
    const auto s = to_local_frame(a, {b})[0];
    EXPECT_NEAR(s.x, rel[2], 1e-9);
    EXPECT_NEAR(s.y, rel[5], 1e-9);
    EXPECT_LT(angle_diff(s.theta, std::atan2(rel[3], rel[0])), 1e-9);
  }
}

TEST(ApplyAction, ZeroStepAndPureTurn) {
  const Pose p = make_pose(1, -2, 0.3, 0.5);
  const Pose q = apply_action(p, {});
  EXPECT_NEAR(q.position.x, 1, 1e-15);
  EXPECT_NEAR(q.position.y, -2, 1e-15);
  EXPECT_EQ(q.position.z, 0.5);
  EXPECT_NEAR(heading(q), 0.3, 1e-12);
  const Pose t = apply_action(p, {0, 0, kPi / 2, 0});
  EXPECT_NEAR(t.position.x, 1, 1e-15);
  EXPECT_NEAR(heading(t), 0.3 + kPi / 2, 1e-12);
}

TEST(ApplyAction, InvertsLocalFrame) {
  Rng rng(4);
  for (int i = 0; i < 1000; ++i) {
    const Pose a = random_pose(rng), b = random_pose(rng);
    const Pose r = apply_action(a, to_local_frame(a, {b})[0]);
    EXPECT_NEAR(r.position.x, b.position.x, 1e-9);
    EXPECT_NEAR(r.position.y, b.position.y, 1e-9);
    EXPECT_LT(angle_diff(heading(r), heading(b)), 1e-9);
  }
}

TEST(Encoding, BoundaryCases) {
  auto e = encode_action({0.5, 0.1, 0.0, 1.0});
  EXPECT_EQ(e.cos_theta, 1.0);
  EXPECT_EQ(e.sin_theta, 0.0);
  e = encode_action({0, 0, kPi, 0});
  EXPECT_EQ(e.cos_theta, -1.0);
  EXPECT_NEAR(e.sin_theta, 0.0, 1e-15);
  EXPECT_EQ(decode_action(e).theta, kPi);
  EXPECT_EQ(decode_action({0, 0, -1, -0.0, 0}).theta, kPi);
  EXPECT_THROW(decode_action({0, 0, 1e-12, -1e-12, 0}), GeometryError);
}

TEST(Encoding, RoundTrip) {
  Rng rng(5);
  double worst = 0;
  for (int i = 0; i < 1000; ++i) {
    const ActionStep a{rng.uniform(-2, 2), rng.uniform(-2, 2), wrap_angle(rng.uniform(-4, 4)),
                       rng.bernoulli(0.5) ? 1.0 : 0.0};
    const auto e = encode_action(a);
    EXPECT_NEAR(e.cos_theta * e.cos_theta + e.sin_theta * e.sin_theta, 1.0, 1e-6);
    const ActionStep d = decode_action(e);
    worst = std::max({worst, std::abs(d.x - a.x), std::abs(d.y - a.y), angle_diff(d.theta, a.theta)});
    EXPECT_EQ(d.arrive, a.arrive);
  }
  EXPECT_LT(worst, 1e-9);
}

TEST(Encoding, DecodeNormalizesScaledPair) {
  const auto d = decode_action({1, 2, 3 * std::cos(0.8), 3 * std::sin(0.8), -0.2});
  EXPECT_NEAR(d.theta, 0.8, 1e-12);
  EXPECT_EQ(d.arrive, 0.0);
}
