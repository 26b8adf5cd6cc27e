#pragma once

// Ground-plane pose algebra. Conventions: +Z is up, heading 0 points along +X,
// positive angles turn counter-clockwise, and headings live in (-pi, pi].

#include <cmath>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <vector>

namespace navgen::geometry {

struct Vec3 {
  double x = 0, y = 0, z = 0;
};

struct Quaternion {
  double w = 1, x = 0, y = 0, z = 0;

  double norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }
};

inline Quaternion operator*(const Quaternion& a, const Quaternion& b) {
  return {a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z, a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
          a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x, a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w};
}

struct Pose {
  Vec3 position;
  Quaternion rotation;
};

/// One predicted or ground-truth step expressed in a reference frame.
struct ActionStep {
  double x = 0;      // forward displacement
  double y = 0;      // lateral displacement, positive to the left
  double theta = 0;  // heading change
  double arrive = 0;
};

/// Network-facing encoding (x, y, cos theta, sin theta, arrive).
struct ActionEncoding {
  double x = 0, y = 0, cos_theta = 1, sin_theta = 0, arrive = 0;
};

class GeometryError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Wraps an angle into (-pi, pi]; -pi maps to +pi.
inline double wrap_angle(double a) {
  constexpr double pi = std::numbers::pi;
  a = std::remainder(a, 2.0 * pi);
  if (a <= -pi) a += 2.0 * pi;
  return a;
}

inline Quaternion yaw_quaternion(double heading) {
  return {std::cos(heading / 2), 0.0, 0.0, std::sin(heading / 2)};
}

inline Pose make_pose(double x, double y, double heading, double z = 0.0) {
  return {{x, y, z}, yaw_quaternion(heading)};
}

/// Yaw about +Z. Pitch and roll are discarded.
inline double quat_to_heading(const Quaternion& q) {
  if (std::abs(q.norm() - 1.0) > 1e-3) throw GeometryError("quat_to_heading: quaternion is not unit length");
  const double siny = 2.0 * (q.w * q.z + q.x * q.y);
  const double cosy = 1.0 - 2.0 * (q.y * q.y + q.z * q.z);
  return wrap_angle(std::atan2(siny, cosy));
}

inline double heading(const Pose& p) { return quat_to_heading(p.rotation); }

inline double ground_distance(const Vec3& a, const Vec3& b) { return std::hypot(a.x - b.x, a.y - b.y); }

/// Expresses `targets` in the ground-plane frame of `reference`. When a goal
/// is given, a step's arrive flag is 1 iff its position lies within
/// `arrive_threshold` of the goal on the ground plane.
inline std::vector<ActionStep> to_local_frame(const Pose& reference, const std::vector<Pose>& targets,
                                              std::optional<Vec3> goal = std::nullopt,
                                              double arrive_threshold = 1.0) {
  const double h = heading(reference);
  const double c = std::cos(h), s = std::sin(h);
  std::vector<ActionStep> out;
  out.reserve(targets.size());
  for (const auto& t : targets) {
    const double dx = t.position.x - reference.position.x;
    const double dy = t.position.y - reference.position.y;
    ActionStep a;
    a.x = c * dx + s * dy;
    a.y = -s * dx + c * dy;
    a.theta = wrap_angle(heading(t) - h);
    if (goal) a.arrive = ground_distance(t.position, *goal) <= arrive_threshold ? 1.0 : 0.0;
    out.push_back(a);
  }
  return out;
}

/// Moves by the step's local displacement, then applies its heading change.
/// Height is preserved and the result is a pure-yaw pose.
inline Pose apply_action(const Pose& current, const ActionStep& step) {
  const double h = heading(current);
  const double c = std::cos(h), s = std::sin(h);
  Pose out;
  out.position = {current.position.x + c * step.x - s * step.y, current.position.y + s * step.x + c * step.y,
                  current.position.z};
  out.rotation = yaw_quaternion(wrap_angle(h + step.theta));
  return out;
}

inline ActionEncoding encode_action(const ActionStep& a) {
  return {a.x, a.y, std::cos(a.theta), std::sin(a.theta), a.arrive};
}

/// Inverse of encode_action. The heading comes from atan2 of the (cos, sin)
/// pair so unnormalized pairs are accepted; `arrive` is 1 iff the encoded
/// value is positive (a logit thresholded at 0).
inline ActionStep decode_action(const ActionEncoding& e) {
  if (std::abs(e.cos_theta) < 1e-9 && std::abs(e.sin_theta) < 1e-9) {
    throw GeometryError("decode_action: degenerate heading pair (cos, sin) ~ (0, 0)");
  }
  ActionStep a;
  a.x = e.x;
  a.y = e.y;
  a.theta = wrap_angle(std::atan2(e.sin_theta, e.cos_theta));
  a.arrive = e.arrive > 0.0 ? 1.0 : 0.0;
  return a;
}

}  // namespace navgen::geometry
