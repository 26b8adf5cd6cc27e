#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "navgen/geometry.hpp"

namespace navgen::runtime {

/// What nav_metrics needs from one evaluated episode.
struct EpisodeOutcome {
  std::vector<geometry::Vec3> trajectory;  // executed positions, start first, stop point last
  geometry::Vec3 goal;
  double shortest_length = 0;  // geodesic shortest-path length l_i
  double stop_error = 0;       // geodesic distance from the stop point to the goal
};

struct NavMetrics {
  double sr = 0, os = 0, spl = 0, ne = 0;
  int episodes = 0;
};

inline double path_length(const std::vector<geometry::Vec3>& traj) {
  double p = 0;
  for (std::size_t i = 1; i < traj.size(); ++i) p += geometry::ground_distance(traj[i - 1], traj[i]);
  return p;
}

inline bool succeeded(const EpisodeOutcome& o, double radius) {
  return !o.trajectory.empty() && geometry::ground_distance(o.trajectory.back(), o.goal) <= radius;
}

inline double episode_spl(const EpisodeOutcome& o, double radius) {
  if (!succeeded(o, radius)) return 0.0;
  const double p = path_length(o.trajectory), l = o.shortest_length;
  const double denom = std::max(p, l);
  return denom > 0 ? l / denom : 1.0;
}

/// SR: stop point within `radius` of the goal. OS: any visited point within
/// the radius. SPL: mean of S * l / max(p, l). NE: mean stop error.
inline NavMetrics nav_metrics(const std::vector<EpisodeOutcome>& outcomes, double radius) {
  if (outcomes.empty()) throw std::invalid_argument("nav_metrics: no episodes");
  NavMetrics m;
  m.episodes = static_cast<int>(outcomes.size());
  for (const auto& o : outcomes) {
    if (o.trajectory.empty()) throw std::invalid_argument("nav_metrics: empty trajectory");
    const bool s = succeeded(o, radius);
    bool oracle = false;
    for (const auto& p : o.trajectory) oracle = oracle || geometry::ground_distance(p, o.goal) <= radius;
    m.sr += s;
    m.os += oracle;
    m.spl += episode_spl(o, radius);
    m.ne += o.stop_error;
  }
  const double n = m.episodes;
  m.sr /= n;
  m.os /= n;
  m.spl /= n;
  m.ne /= n;
  return m;
}

inline constexpr double kPsnrCap = 99.0;

/// 10 log10(1 / MSE) for frames with values in [0, 1]; identical frames give
/// the cap.
inline double psnr(std::span<const float> pred, std::span<const float> gt, double cap = kPsnrCap) {
  if (pred.size() != gt.size() || pred.empty()) {
    throw std::invalid_argument("psnr: frames differ in size (" + std::to_string(pred.size()) + " vs " +
                                std::to_string(gt.size()) + ")");
  }
  double se = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = static_cast<double>(pred[i]) - static_cast<double>(gt[i]);
    se += d * d;
  }
  const double mse = se / static_cast<double>(pred.size());
  if (mse == 0.0) return cap;
  return std::min(cap, 10.0 * std::log10(1.0 / mse));
}

}  // namespace navgen::runtime
