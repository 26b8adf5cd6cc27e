#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <queue>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "navgen/geometry.hpp"
#include "navgen/numerics/random.hpp"

namespace navgen::sim {

using geometry::Pose;
using geometry::Vec3;

struct WorldConfig {
  int width = 10;   // cells, border included
  int height = 10;
  double cell_size = 1.0;
  int landmark_count = 3;
  int wall_segments = 4;
  int view_resolution = 32;
  double fov_deg = 90.0;
  double max_view_distance = 8.0;
  double forward_step = 0.25;
  double turn_deg = 15.0;
  double arrival_threshold = 1.0;
  double expert_stop_distance = 0.95;
  double min_start_goal_distance = 2.5;
  int history = 4;
  int horizon = 5;
  int max_retries = 64;
  int max_expert_steps = 200;
  bool render_observations = true;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(WorldConfig, width, height, cell_size, landmark_count, wall_segments,
                                                view_resolution, fov_deg, max_view_distance, forward_step, turn_deg,
                                                arrival_threshold, expert_stop_distance, min_start_goal_distance,
                                                history, horizon, max_retries, max_expert_steps, render_observations)

enum class CellType : std::uint8_t { free = 0, wall = 1, landmark = 2 };

struct Cell {
  int row = 0, col = 0;
  friend bool operator==(const Cell&, const Cell&) = default;
};

using Rgb = std::array<float, 3>;

struct Landmark {
  int id = 0;
  std::string color;
  std::string category;
  Rgb rgb{};
  Cell cell;
};

struct Palette {
  std::string name;
  Rgb rgb;
};

inline const std::vector<Palette>& landmark_colors() {
  static const std::vector<Palette> colors = {
      {"red", {0.90f, 0.10f, 0.10f}},    {"green", {0.10f, 0.75f, 0.15f}}, {"blue", {0.10f, 0.25f, 0.95f}},
      {"yellow", {0.95f, 0.85f, 0.10f}}, {"purple", {0.60f, 0.15f, 0.80f}}, {"orange", {1.00f, 0.50f, 0.05f}},
  };
  return colors;
}

inline const std::vector<std::string>& landmark_categories() {
  static const std::vector<std::string> cats = {"sphere", "door", "box", "plant", "chair"};
  return cats;
}

inline constexpr Rgb kWallColor{0.55f, 0.55f, 0.55f};
inline constexpr Rgb kFloorColor{0.35f, 0.30f, 0.25f};
inline constexpr Rgb kCeilingColor{0.80f, 0.82f, 0.88f};

class WorldError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Occupancy grid. Row r spans y in [r, r+1) * cell_size, column c spans x.
class WorldMap {
 public:
  WorldMap() = default;
  WorldMap(int height, int width, double cell_size)
      : height_(height), width_(width), cell_size_(cell_size),
        cells_(static_cast<std::size_t>(height) * width, CellType::free),
        landmark_at_(static_cast<std::size_t>(height) * width, -1) {
    for (int r = 0; r < height; ++r) {
      for (int c = 0; c < width; ++c) {
        if (r == 0 || c == 0 || r == height - 1 || c == width - 1) set(r, c, CellType::wall);
      }
    }
  }

  int height() const { return height_; }
  int width() const { return width_; }
  double cell_size() const { return cell_size_; }

  bool in_bounds(int r, int c) const { return r >= 0 && c >= 0 && r < height_ && c < width_; }
  CellType at(int r, int c) const {
    return in_bounds(r, c) ? cells_[static_cast<std::size_t>(r) * width_ + c] : CellType::wall;
  }
  CellType at(const Cell& c) const { return at(c.row, c.col); }
  bool is_free(int r, int c) const { return at(r, c) == CellType::free; }
  bool is_free(const Cell& c) const { return is_free(c.row, c.col); }

  void set(int r, int c, CellType t) { cells_[static_cast<std::size_t>(r) * width_ + c] = t; }

  int landmark_id(int r, int c) const {
    return in_bounds(r, c) ? landmark_at_[static_cast<std::size_t>(r) * width_ + c] : -1;
  }
  const std::vector<Landmark>& landmarks() const { return landmarks_; }

  void add_landmark(Landmark lm) {
    lm.id = static_cast<int>(landmarks_.size());
    set(lm.cell.row, lm.cell.col, CellType::landmark);
    landmark_at_[static_cast<std::size_t>(lm.cell.row) * width_ + lm.cell.col] = lm.id;
    landmarks_.push_back(std::move(lm));
  }

  Cell cell_of(double x, double y) const {
    return {static_cast<int>(std::floor(y / cell_size_)), static_cast<int>(std::floor(x / cell_size_))};
  }
  Cell cell_of(const Vec3& p) const { return cell_of(p.x, p.y); }

  Vec3 center(const Cell& c) const { return {(c.col + 0.5) * cell_size_, (c.row + 0.5) * cell_size_, 0.0}; }

  bool point_free(const Vec3& p) const { return is_free(cell_of(p)); }

  const std::vector<CellType>& cells() const { return cells_; }

 private:
  int height_ = 0, width_ = 0;
  double cell_size_ = 1.0;
  std::vector<CellType> cells_;
  std::vector<int> landmark_at_;
  std::vector<Landmark> landmarks_;
};

struct PathResult {
  bool reachable = false;
  double length = 0.0;  // world units
  std::vector<Cell> cells;
};

namespace detail {

inline constexpr std::array<std::array<int, 2>, 8> kNeighbors = {
    {{-1, 0}, {1, 0}, {0, -1}, {0, 1}, {-1, -1}, {-1, 1}, {1, -1}, {1, 1}}};

// 8-connected move from (r, c) by (dr, dc). Diagonals may not cut a corner:
// both orthogonally adjacent cells must be free.
inline bool move_allowed(const WorldMap& m, int r, int c, int dr, int dc) {
  if (dr != 0 && dc != 0) return m.is_free(r + dr, c) && m.is_free(r, c + dc);
  return true;
}

}  // namespace detail

/// Dijkstra over free cells with 8-connectivity, diagonal cost sqrt(2),
/// scaled by cell size. `to` may be a landmark cell, entered only as the
/// final cell of the path.
inline PathResult shortest_path(const WorldMap& m, Cell from, Cell to) {
  if (!m.is_free(from)) throw WorldError("shortest_path: start cell is not free");
  if (m.at(to) == CellType::wall) throw WorldError("shortest_path: goal cell is a wall");
  const int n = m.height() * m.width();
  auto id = [&](int r, int c) { return r * m.width() + c; };
  std::vector<double> dist(n, std::numeric_limits<double>::infinity());
  std::vector<int> prev(n, -1);
  using Item = std::pair<double, int>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
  const int src = id(from.row, from.col), dst = id(to.row, to.col);
  dist[src] = 0.0;
  pq.emplace(0.0, src);
  while (!pq.empty()) {
    auto [d, u] = pq.top();
    pq.pop();
    if (d > dist[u]) continue;
    if (u == dst) break;
    const int r = u / m.width(), c = u % m.width();
    for (auto [dr, dc] : detail::kNeighbors) {
      const int nr = r + dr, nc = c + dc;
      const int v = id(nr, nc);
      if (!m.in_bounds(nr, nc)) continue;
      if (!(m.is_free(nr, nc) || v == dst)) continue;
      if (!detail::move_allowed(m, r, c, dr, dc)) continue;
      const double nd = d + ((dr && dc) ? std::sqrt(2.0) : 1.0);
      if (nd < dist[v]) {
        dist[v] = nd;
        prev[v] = u;
        pq.emplace(nd, v);
      }
    }
  }
  PathResult res;
  if (!std::isfinite(dist[dst])) return res;
  res.reachable = true;
  res.length = dist[dst] * m.cell_size();
  for (int v = dst; v != -1; v = prev[v]) res.cells.push_back({v / m.width(), v % m.width()});
  std::reverse(res.cells.begin(), res.cells.end());
  return res;
}

/// Geodesic distance (world units) from every cell to `goal`, under the same
/// move rules as shortest_path. Unreachable cells hold +inf.
inline std::vector<double> distance_field(const WorldMap& m, Cell goal) {
  const int n = m.height() * m.width();
  std::vector<double> dist(n, std::numeric_limits<double>::infinity());
  using Item = std::pair<double, int>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
  const int g = goal.row * m.width() + goal.col;
  dist[g] = 0.0;
  pq.emplace(0.0, g);
  while (!pq.empty()) {
    auto [d, u] = pq.top();
    pq.pop();
    if (d > dist[u]) continue;
    const int r = u / m.width(), c = u % m.width();
    for (auto [dr, dc] : detail::kNeighbors) {
      const int nr = r + dr, nc = c + dc;
      if (!m.is_free(nr, nc)) continue;
      // Moves are symmetric, so the reverse-edge corner rule is the same.
      if (!detail::move_allowed(m, r, c, dr, dc)) continue;
      const int v = nr * m.width() + nc;
      const double nd = d + ((dr && dc) ? std::sqrt(2.0) : 1.0) * m.cell_size();
      if (nd < dist[v]) {
        dist[v] = nd;
        pq.emplace(nd, v);
      }
    }
  }
  return dist;
}

/// Geodesic distance from a continuous point: the best of |p - center(n)| +
/// field(n) over the point's cell and its 8 neighbours. Never smaller than
/// the straight-line distance to the goal cell center.
inline double geodesic_distance(const WorldMap& m, const std::vector<double>& field, const Vec3& p) {
  const Cell c = m.cell_of(p);
  double best = std::numeric_limits<double>::infinity();
  for (int dr = -1; dr <= 1; ++dr) {
    for (int dc = -1; dc <= 1; ++dc) {
      const int r = c.row + dr, cc = c.col + dc;
      if (!m.in_bounds(r, cc)) continue;
      const double f = field[static_cast<std::size_t>(r) * m.width() + cc];
      if (!std::isfinite(f)) continue;
      best = std::min(best, geometry::ground_distance(p, m.center({r, cc})) + f);
    }
  }
  return best;
}

namespace detail {

// Keeps the largest 4-connected free component; every other free cell
// becomes a wall.
inline void keep_largest_component(WorldMap& m) {
  const int n = m.height() * m.width();
  std::vector<int> comp(n, -1);
  std::vector<int> sizes;
  for (int s = 0; s < n; ++s) {
    if (comp[s] != -1 || !m.is_free(s / m.width(), s % m.width())) continue;
    const int label = static_cast<int>(sizes.size());
    int size = 0;
    std::vector<int> stack{s};
    comp[s] = label;
    while (!stack.empty()) {
      const int u = stack.back();
      stack.pop_back();
      ++size;
      const int r = u / m.width(), c = u % m.width();
      for (int k = 0; k < 4; ++k) {
        const int nr = r + kNeighbors[k][0], nc = c + kNeighbors[k][1];
        if (!m.is_free(nr, nc)) continue;
        const int v = nr * m.width() + nc;
        if (comp[v] == -1) {
          comp[v] = label;
          stack.push_back(v);
        }
      }
    }
    sizes.push_back(size);
  }
  if (sizes.empty()) return;
  const int keep = static_cast<int>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
  for (int u = 0; u < n; ++u) {
    if (comp[u] != -1 && comp[u] != keep) m.set(u / m.width(), u % m.width(), CellType::wall);
  }
}

inline bool touches_free(const WorldMap& m, const Cell& c) {
  for (int k = 0; k < 4; ++k) {
    if (m.is_free(c.row + kNeighbors[k][0], c.col + kNeighbors[k][1])) return true;
  }
  return false;
}

}  // namespace detail

/// Random connected map: border walls, a few straight interior wall segments
/// and `landmark_count` landmarks of distinct colours, each adjacent to the
/// single free component.
inline WorldMap generate_world(std::uint64_t seed, const WorldConfig& cfg) {
  if (cfg.landmark_count > static_cast<int>(landmark_colors().size())) {
    throw WorldError("generate_world: more landmarks than colours");
  }
  for (int attempt = 0; attempt < cfg.max_retries; ++attempt) {
    Rng rng(derive_seed(seed, "world#" + std::to_string(attempt)));
    WorldMap m(cfg.height, cfg.width, cfg.cell_size);
    for (int s = 0; s < cfg.wall_segments; ++s) {
      const bool horizontal = rng.bernoulli(0.5);
      const int len = rng.uniform_int(2, 4);
      const int r0 = rng.uniform_int(2, cfg.height - 3);
      const int c0 = rng.uniform_int(2, cfg.width - 3);
      for (int k = 0; k < len; ++k) {
        const int r = horizontal ? r0 : r0 + k, c = horizontal ? c0 + k : c0;
        if (r > 0 && c > 0 && r < cfg.height - 1 && c < cfg.width - 1) m.set(r, c, CellType::wall);
      }
    }
    std::vector<int> color_order(landmark_colors().size());
    for (std::size_t i = 0; i < color_order.size(); ++i) color_order[i] = static_cast<int>(i);
    for (std::size_t i = color_order.size() - 1; i > 0; --i) {
      std::swap(color_order[i], color_order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i)))]);
    }
    bool ok = true;
    for (int l = 0; l < cfg.landmark_count && ok; ++l) {
      ok = false;
      for (int tries = 0; tries < 100; ++tries) {
        const Cell c{rng.uniform_int(1, cfg.height - 2), rng.uniform_int(1, cfg.width - 2)};
        if (!m.is_free(c)) continue;
        Landmark lm;
        const auto& pal = landmark_colors()[static_cast<std::size_t>(color_order[static_cast<std::size_t>(l)])];
        lm.color = pal.name;
        lm.rgb = pal.rgb;
        lm.category = landmark_categories()[static_cast<std::size_t>(
            rng.uniform_int(0, static_cast<int>(landmark_categories().size()) - 1))];
        lm.cell = c;
        m.add_landmark(lm);
        ok = true;
        break;
      }
    }
    if (!ok) continue;
    detail::keep_largest_component(m);
    bool reachable = true;
    for (const auto& lm : m.landmarks()) reachable = reachable && detail::touches_free(m, lm.cell);
    int free_cells = 0;
    for (auto t : m.cells()) free_cells += t == CellType::free;
    if (reachable && free_cells >= (cfg.width - 2) * (cfg.height - 2) / 2) return m;
  }
  throw WorldError("generate_world: no valid map after bounded retries");
}

}  // namespace navgen::sim
