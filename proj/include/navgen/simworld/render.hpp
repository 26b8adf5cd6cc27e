#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <vector>

#include "navgen/simworld/world.hpp"

namespace navgen::sim {

/// V x V RGB image, row-major (row, col, channel), values in [0, 1].
struct Frame {
  int size = 0;
  std::vector<float> rgb;

  Frame() = default;
  explicit Frame(int v) : size(v), rgb(static_cast<std::size_t>(v) * v * 3, 0.0f) {}

  float* pixel(int r, int c) { return rgb.data() + (static_cast<std::size_t>(r) * size + c) * 3; }
  const float* pixel(int r, int c) const { return rgb.data() + (static_cast<std::size_t>(r) * size + c) * 3; }
  friend bool operator==(const Frame&, const Frame&) = default;
};

enum class ViewIndex { left = 0, front = 1, right = 2 };

/// Yaw offsets of the side cameras relative to the front camera. The right
/// camera looks clockwise, i.e. at heading - 90 degrees.
inline constexpr std::array<double, 3> kViewYawOffset = {std::numbers::pi / 2, 0.0, -std::numbers::pi / 2};

struct Observation {
  std::array<Frame, 3> views;  // left, front, right
  Pose pose;

  const Frame& left() const { return views[0]; }
  const Frame& front() const { return views[1]; }
  const Frame& right() const { return views[2]; }
  friend bool operator==(const Observation& a, const Observation& b) { return a.views == b.views; }
};

struct RayHit {
  bool hit = false;
  double distance = 0.0;  // along the ray
  Cell cell;
  bool x_side = false;  // crossed a vertical grid line (face normal along x)
  double u = 0.0;       // position along the hit face in [0, 1)
};

/// Grid traversal (DDA) from (x, y) along angle `a` until the first
/// non-free cell or `max_distance`.
inline RayHit cast_ray(const WorldMap& m, double x, double y, double a, double max_distance) {
  const double cs = m.cell_size();
  const double dx = std::cos(a), dy = std::sin(a);
  int col = static_cast<int>(std::floor(x / cs)), row = static_cast<int>(std::floor(y / cs));
  const int step_c = dx >= 0 ? 1 : -1, step_r = dy >= 0 ? 1 : -1;
  constexpr double inf = std::numeric_limits<double>::infinity();
  const double delta_c = dx != 0 ? std::abs(cs / dx) : inf;
  const double delta_r = dy != 0 ? std::abs(cs / dy) : inf;
  double next_c = dx != 0 ? ((step_c > 0 ? (col + 1) * cs - x : x - col * cs) / std::abs(dx)) : inf;
  double next_r = dy != 0 ? ((step_r > 0 ? (row + 1) * cs - y : y - row * cs) / std::abs(dy)) : inf;
  RayHit h;
  while (true) {
    double t;
    if (next_c < next_r) {
      t = next_c;
      next_c += delta_c;
      col += step_c;
      h.x_side = true;
    } else {
      t = next_r;
      next_r += delta_r;
      row += step_r;
      h.x_side = false;
    }
    if (t > max_distance) return {};
    if (!m.is_free(row, col)) {
      h.hit = true;
      h.distance = t;
      h.cell = {row, col};
      const double along = h.x_side ? y + t * dy : x + t * dx;
      h.u = along / cs - std::floor(along / cs);
      return h;
    }
  }
}

namespace detail {

// Surface pattern per landmark category, as a brightness multiplier over the
// face coordinate u and wall-height coordinate v (both in [0, 1)).
inline float category_pattern(const std::string& category, double u, double v) {
  if (category == "door") return (u > 0.3 && u < 0.7 && v > 0.25) ? 0.55f : 1.0f;
  if (category == "box") return (u < 0.15 || u > 0.85 || v < 0.15 || v > 0.85) ? 0.6f : 1.0f;
  if (category == "plant") return (static_cast<int>(u * 4.0) % 2) ? 0.7f : 1.0f;
  if (category == "chair") return (v > 0.45 && v < 0.6) ? 0.55f : 1.0f;
  return 1.0f;  // sphere: solid
}

}  // namespace detail

/// Renders one camera. Column c casts a single ray; rows are filled with
/// ceiling above and floor below the projected wall span. Wall colour fades
/// with perpendicular distance and x-facing sides are darkened slightly.
inline Frame render_view(const WorldMap& m, const Pose& pose, double yaw_offset, const WorldConfig& cfg) {
  const int v = cfg.view_resolution;
  Frame f(v);
  const double yaw = geometry::heading(pose) + yaw_offset;
  const double half_fov = cfg.fov_deg * std::numbers::pi / 360.0;
  const double focal = 0.5 * v / std::tan(half_fov);
  const double cam_height = 0.5, wall_height = 1.0;
  for (int c = 0; c < v; ++c) {
    // Leftmost column looks counter-clockwise of the camera axis.
    const double xn = 1.0 - 2.0 * (c + 0.5) / v;
    const double off = std::atan(xn * std::tan(half_fov));
    const RayHit h = cast_ray(m, pose.position.x, pose.position.y, yaw + off, cfg.max_view_distance);
    double top = 0.5 * v, bottom = 0.5 * v;
    Rgb colour = kWallColor;
    std::string category;
    if (h.hit) {
      const double perp = std::max(1e-6, h.distance * std::cos(off));
      top = 0.5 * v - focal * (wall_height - cam_height) / perp;
      bottom = 0.5 * v + focal * cam_height / perp;
      const int id = m.landmark_id(h.cell.row, h.cell.col);
      if (id >= 0) {
        colour = m.landmarks()[static_cast<std::size_t>(id)].rgb;
        category = m.landmarks()[static_cast<std::size_t>(id)].category;
      }
      const float shade = static_cast<float>(1.0 / (1.0 + 0.15 * perp)) * (h.x_side ? 0.85f : 1.0f);
      for (auto& ch : colour) ch *= shade;
    }
    for (int r = 0; r < v; ++r) {
      const double yc = r + 0.5;
      float* px = f.pixel(r, c);
      if (h.hit && yc >= top && yc < bottom) {
        const float p = category.empty() ? 1.0f : detail::category_pattern(category, h.u, (yc - top) / (bottom - top));
        for (int k = 0; k < 3; ++k) px[k] = colour[static_cast<std::size_t>(k)] * p;
      } else {
        const Rgb& bg = yc < 0.5 * v ? kCeilingColor : kFloorColor;
        for (int k = 0; k < 3; ++k) px[k] = bg[static_cast<std::size_t>(k)];
      }
    }
  }
  return f;
}

inline Observation render(const WorldMap& m, const Pose& pose, const WorldConfig& cfg) {
  if (!m.point_free(pose.position)) throw WorldError("render: pose is not inside a free cell");
  Observation o;
  o.pose = pose;
  for (int i = 0; i < 3; ++i) o.views[static_cast<std::size_t>(i)] = render_view(m, pose, kViewYawOffset[i], cfg);
  return o;
}

}  // namespace navgen::sim
