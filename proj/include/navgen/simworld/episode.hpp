#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "navgen/simworld/render.hpp"
#include "navgen/simworld/world.hpp"

namespace navgen::sim {

enum class Action : int { forward = 0, turn_left = 1, turn_right = 2, stop = 3 };

inline const char* action_name(Action a) {
  switch (a) {
    case Action::forward: return "forward";
    case Action::turn_left: return "turn_left";
    case Action::turn_right: return "turn_right";
    case Action::stop: return "stop";
  }
  return "?";
}

struct StepResult {
  Pose pose;
  bool collided = false;
};

/// Discrete simulator transition. Turns snap the heading to a multiple of the
/// turn increment so repeated turns never drift.
inline StepResult step(const WorldMap& m, const Pose& pose, Action a, const WorldConfig& cfg) {
  const double h = geometry::heading(pose);
  const double turn = cfg.turn_deg * std::numbers::pi / 180.0;
  switch (a) {
    case Action::forward: {
      Pose next = pose;
      next.position.x += cfg.forward_step * std::cos(h);
      next.position.y += cfg.forward_step * std::sin(h);
      if (!m.point_free(next.position)) return {pose, true};
      return {next, false};
    }
    case Action::turn_left:
    case Action::turn_right: {
      const double sign = a == Action::turn_left ? 1.0 : -1.0;
      const double k = std::round((h + sign * turn) / turn);
      Pose next = pose;
      next.rotation = geometry::yaw_quaternion(geometry::wrap_angle(k * turn));
      return {next, false};
    }
    case Action::stop: return {pose, false};
  }
  return {pose, false};
}

/// Closed word-level vocabulary: special tokens first, then the sorted
/// template words. Ids depend only on the template set.
class Tokenizer {
 public:
  static constexpr int kPad = 0, kUnk = 1, kBos = 2, kEos = 3;

  Tokenizer() {
    std::vector<std::string> words = {"go",     "to",  "the", "find", "turn",  "left",    "right", "then",
                                      "on",     "your", "ahead", "behind", "you", "straight", "walk", "towards"};
    for (const auto& c : landmark_colors()) words.push_back(c.name);
    for (const auto& c : landmark_categories()) words.push_back(c);
    std::sort(words.begin(), words.end());
    words.erase(std::unique(words.begin(), words.end()), words.end());
    vocab_ = {"<pad>", "<unk>", "<bos>", "<eos>"};
    vocab_.insert(vocab_.end(), words.begin(), words.end());
    for (std::size_t i = 0; i < vocab_.size(); ++i) ids_[vocab_[i]] = static_cast<int>(i);
  }

  int size() const { return static_cast<int>(vocab_.size()); }
  const std::vector<std::string>& vocabulary() const { return vocab_; }

  std::vector<int> tokenize(const std::string& text) const {
    std::vector<int> out{kBos};
    std::istringstream is(text);
    std::string w;
    while (is >> w) {
      std::transform(w.begin(), w.end(), w.begin(), [](unsigned char ch) { return std::tolower(ch); });
      auto it = ids_.find(w);
      out.push_back(it == ids_.end() ? kUnk : it->second);
    }
    out.push_back(kEos);
    return out;
  }

  std::string detokenize(const std::vector<int>& ids) const {
    std::string s;
    for (int id : ids) {
      if (id == kBos || id == kEos || id == kPad) continue;
      if (!s.empty()) s += ' ';
      s += (id >= 0 && id < size()) ? vocab_[static_cast<std::size_t>(id)] : vocab_[kUnk];
    }
    return s;
  }

 private:
  std::vector<std::string> vocab_;
  std::map<std::string, int> ids_;
};

inline const Tokenizer& default_tokenizer() {
  static const Tokenizer tok;
  return tok;
}

struct Episode {
  std::uint64_t seed = 0;
  std::string instruction;
  std::vector<int> tokens;
  int goal_landmark = 0;
  Cell goal_cell;
  Vec3 goal_position;
  std::vector<Pose> poses;                   // decision poses p_0 .. p_{T-1}
  std::vector<Action> actions;               // expert action at each decision pose
  std::vector<geometry::ActionStep> steps;   // p_i -> p_{i+1} in p_i's frame; last is the stop step
  std::vector<Observation> observations;     // per decision pose, empty unless rendered
  double path_length = 0.0;                  // sum of expert displacement magnitudes
  double geodesic_length = 0.0;              // shortest_path(start cell, goal cell)

  const Pose& start() const { return poses.front(); }
  int length() const { return static_cast<int>(poses.size()); }
};

class ExpertFailure : public WorldError {
 public:
  using WorldError::WorldError;
};

namespace detail {

inline std::string relative_direction(const Pose& p, const Vec3& goal) {
  const double bearing =
      geometry::wrap_angle(std::atan2(goal.y - p.position.y, goal.x - p.position.x) - geometry::heading(p));
  const double deg = bearing * 180.0 / std::numbers::pi;
  if (std::abs(deg) <= 45.0) return "ahead";
  if (deg > 45.0 && deg < 135.0) return "on your left";
  if (deg < -45.0 && deg > -135.0) return "on your right";
  return "behind you";
}

}  // namespace detail

/// Follows the shortest cell path: turn toward the next waypoint when the
/// bearing error exceeds half a turn increment, otherwise move forward.
/// Stops once within the configured stop distance of the goal landmark.
inline void run_expert(const WorldMap& m, Episode& ep, const WorldConfig& cfg) {
  const Cell start = m.cell_of(ep.poses.front().position);
  const PathResult path = shortest_path(m, start, ep.goal_cell);
  if (!path.reachable) throw ExpertFailure("expert: goal unreachable");
  ep.geodesic_length = path.length;
  std::vector<Vec3> waypoints;
  for (std::size_t i = 1; i + 1 < path.cells.size(); ++i) waypoints.push_back(m.center(path.cells[i]));
  waypoints.push_back(ep.goal_position);

  const double half_turn = 0.5 * cfg.turn_deg * std::numbers::pi / 180.0;
  Pose pose = ep.poses.front();
  ep.poses.clear();
  std::size_t idx = 0;
  for (int it = 0; it < cfg.max_expert_steps; ++it) {
    ep.poses.push_back(pose);
    if (geometry::ground_distance(pose.position, ep.goal_position) <= cfg.expert_stop_distance) {
      ep.actions.push_back(Action::stop);
      return;
    }
    while (idx + 1 < waypoints.size() &&
           geometry::ground_distance(pose.position, waypoints[idx]) <= 0.3 * cfg.cell_size) {
      ++idx;
    }
    const Vec3& target = waypoints[idx];
    const double err = geometry::wrap_angle(
        std::atan2(target.y - pose.position.y, target.x - pose.position.x) - geometry::heading(pose));
    Action a = Action::forward;
    if (err > half_turn + 1e-9) a = Action::turn_left;
    else if (err < -half_turn - 1e-9) a = Action::turn_right;
    const StepResult r = step(m, pose, a, cfg);
    if (r.collided) throw ExpertFailure("expert: collision while following path");
    ep.actions.push_back(a);
    pose = r.pose;
  }
  throw ExpertFailure("expert: step budget exhausted");
}

/// Fills `steps`, `path_length` and the arrive flags from poses/actions.
inline void finalize_steps(Episode& ep, const WorldConfig& cfg) {
  ep.steps.clear();
  ep.path_length = 0.0;
  const int n = ep.length();
  for (int i = 0; i < n; ++i) {
    const Pose& next = i + 1 < n ? ep.poses[static_cast<std::size_t>(i + 1)] : ep.poses[static_cast<std::size_t>(i)];
    auto s = geometry::to_local_frame(ep.poses[static_cast<std::size_t>(i)], {next}, ep.goal_position,
                                      cfg.arrival_threshold)[0];
    ep.path_length += std::hypot(s.x, s.y);
    ep.steps.push_back(s);
  }
}

inline std::string make_instruction(const Landmark& lm, const Pose& start, Action first_action, Rng& rng) {
  const std::string target = "the " + lm.color + " " + lm.category;
  switch (rng.uniform_int(0, 3)) {
    case 0: return "go to " + target;
    case 1: return "find " + target;
    case 2: return "go to " + target + " " + detail::relative_direction(start, {(lm.cell.col + 0.5), (lm.cell.row + 0.5), 0});
    default: {
      const std::string first = first_action == Action::turn_left    ? "turn left"
                                : first_action == Action::turn_right ? "turn right"
                                                                     : "go straight";
      return first + " then go to " + target;
    }
  }
}

/// Builds a map for `seed`, samples a start pose and a landmark goal at least
/// `min_start_goal_distance` away, runs the expert and renders observations.
inline Episode generate_episode(std::uint64_t seed, const WorldConfig& cfg, const WorldMap* prebuilt = nullptr) {
  const WorldMap map = prebuilt ? *prebuilt : generate_world(seed, cfg);
  const double turn = cfg.turn_deg * std::numbers::pi / 180.0;
  const int headings = static_cast<int>(std::lround(2.0 * std::numbers::pi / turn));
  std::vector<Cell> free_cells;
  for (int r = 0; r < map.height(); ++r) {
    for (int c = 0; c < map.width(); ++c) {
      if (map.is_free(r, c)) free_cells.push_back({r, c});
    }
  }
  for (int attempt = 0; attempt < cfg.max_retries; ++attempt) {
    Rng rng(derive_seed(seed, "episode#" + std::to_string(attempt)));
    Episode ep;
    ep.seed = seed;
    ep.goal_landmark = rng.uniform_int(0, static_cast<int>(map.landmarks().size()) - 1);
    const Landmark& lm = map.landmarks()[static_cast<std::size_t>(ep.goal_landmark)];
    ep.goal_cell = lm.cell;
    ep.goal_position = map.center(lm.cell);
    const Cell sc = free_cells[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(free_cells.size()) - 1))];
    const Vec3 sp = map.center(sc);
    if (geometry::ground_distance(sp, ep.goal_position) < cfg.min_start_goal_distance) continue;
    const double h = geometry::wrap_angle(rng.uniform_int(0, headings - 1) * turn);
    ep.poses.push_back(geometry::make_pose(sp.x, sp.y, h));
    try {
      run_expert(map, ep, cfg);
    } catch (const ExpertFailure&) {
      continue;
    }
    finalize_steps(ep, cfg);
    ep.instruction = make_instruction(lm, ep.poses.front(), ep.actions.front(), rng);
    ep.tokens = default_tokenizer().tokenize(ep.instruction);
    if (cfg.render_observations) {
      for (const auto& p : ep.poses) ep.observations.push_back(render(map, p, cfg));
    }
    return ep;
  }
  throw WorldError("generate_episode: no reachable landmark goal after bounded retries (seed " +
                   std::to_string(seed) + ")");
}

}  // namespace navgen::sim
