#pragma once

// Batch evaluation, the SFS speed table, and the on-disk artifacts written
// by the CLI: trajectory CSV, frame blobs with a manifest, PPM images.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "navgen/runtime/rollout.hpp"

namespace navgen::runtime {

/// Episodes with their maps, ready for closed-loop evaluation.
struct EvalSet {
  sim::WorldConfig world;
  std::vector<sim::WorldMap> maps;
  std::vector<sim::Episode> episodes;

  std::size_t size() const { return episodes.size(); }
};

inline EvalSet make_eval_set(std::uint64_t first_seed, std::uint64_t last_seed, sim::WorldConfig cfg) {
  cfg.render_observations = false;
  EvalSet set;
  set.world = cfg;
  for (std::uint64_t s = first_seed; s <= last_seed; ++s) {
    set.maps.push_back(sim::generate_world(s, cfg));
    set.episodes.push_back(sim::generate_episode(s, cfg, &set.maps.back()));
  }
  return set;
}

/// Rebuilds maps for stored episodes; worlds are a pure function of the seed.
inline EvalSet make_eval_set(const sim::EpisodeSource& src) {
  EvalSet set;
  set.world = src.world_config();
  for (std::size_t i = 0; i < src.size(); ++i) {
    set.episodes.push_back(src.episode(i));
    set.maps.push_back(sim::generate_world(set.episodes.back().seed, set.world));
  }
  return set;
}

struct EvalReport {
  std::string label;
  NavMetrics metrics;
  int sfs_k = 0;
  double mean_wall_time = 0;  // seconds per episode
  double mean_generator_time = 0, mean_policy_time = 0;
  long generator_calls = 0;
  long expected_generator_calls = 0;  // sum over episodes of ceil(T / k) when the generator is on
  long decisions = 0;
  double mean_psnr = 0;  // predicted vs. observed future front frames
  long psnr_pairs = 0;
  std::map<std::string, int> stop_reasons;
  std::vector<RolloutResult> results;  // kept when requested
};

/// PSNR pairs of one rollout: the m-th predicted frame of the plan made at
/// trajectory index d against the frame observed at index d + m.
inline std::vector<std::pair<std::size_t, double>> prediction_psnr(const RolloutResult& r, int execute_steps = 1) {
  std::vector<std::pair<std::size_t, double>> out;
  if (execute_steps != 1) return out;  // decision index equals trajectory index only in receding-horizon mode
  for (std::size_t p = 0; p < r.predictions.size(); ++p) {
    const auto& pr = r.predictions[p];
    for (std::size_t m = 0; m < pr.frames.size(); ++m) {
      const std::size_t idx = static_cast<std::size_t>(pr.step) + m + 1;
      if (idx >= r.observed_front.size()) break;
      out.emplace_back(p, psnr(pr.frames[m], r.observed_front[idx].rgb));
    }
  }
  return out;
}

template <typename T>
EvalReport evaluate(const NavModel<T>* model, const EvalSet& set, const RolloutOptions& opt, bool keep_results = false) {
  if (set.size() == 0) throw std::invalid_argument("evaluate: empty episode set");
  EvalReport rep;
  rep.sfs_k = opt.schedule.interval();
  std::vector<EpisodeOutcome> outcomes;
  double psnr_sum = 0;
  const bool generator_on =
      opt.controller == Controller::model && opt.variant == Variant::diffusion && opt.generator_enabled;
  for (std::size_t i = 0; i < set.size(); ++i) {
    auto r = rollout(model, set.maps[i], set.episodes[i], set.world, opt);
    outcomes.push_back(outcome_of(r, set.episodes[i], set.maps[i]));
    rep.mean_wall_time += r.wall_time;
    rep.mean_generator_time += r.generator_time;
    rep.mean_policy_time += r.policy_time;
    rep.generator_calls += r.generator_calls;
    if (generator_on) rep.expected_generator_calls += opt.schedule.expected_calls(r.decisions);
    rep.decisions += r.decisions;
    for (const auto& [_, v] : prediction_psnr(r, opt.execute_steps)) {
      psnr_sum += v;
      ++rep.psnr_pairs;
    }
    ++rep.stop_reasons[stop_reason_name(r.stop)];
    if (keep_results) {
      rep.results.push_back(std::move(r));
    }
  }
  const double n = static_cast<double>(set.size());
  rep.metrics = nav_metrics(outcomes, set.world.arrival_threshold);
  rep.mean_wall_time /= n;
  rep.mean_generator_time /= n;
  rep.mean_policy_time /= n;
  rep.mean_psnr = rep.psnr_pairs ? psnr_sum / static_cast<double>(rep.psnr_pairs) : 0.0;
  return rep;
}

inline nlohmann::json to_json(const NavMetrics& m) {
  return {{"sr", m.sr}, {"os", m.os}, {"spl", m.spl}, {"ne", m.ne}, {"episodes", m.episodes}};
}

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json j = {{"metrics", to_json(r.metrics)},
                      {"sfs_k", r.sfs_k},
                      {"mean_wall_time", r.mean_wall_time},
                      {"mean_generator_time", r.mean_generator_time},
                      {"mean_policy_time", r.mean_policy_time},
                      {"generator_calls", r.generator_calls},
                      {"expected_generator_calls", r.expected_generator_calls},
                      {"decisions", r.decisions},
                      {"mean_psnr", r.mean_psnr},
                      {"psnr_pairs", r.psnr_pairs},
                      {"stop_reasons", r.stop_reasons}};
  if (!r.label.empty()) j["label"] = r.label;
  return j;
}

struct SpeedRow {
  int k = 0;
  double wall_time = 0, sr = 0, speedup = 0;
  long generator_calls = 0, expected_calls = 0;
};

/// Wall time and SR per schedule interval; speedup is relative to k = 1
/// (or the smallest k present).
inline std::vector<SpeedRow> speed_rows(const std::vector<EvalReport>& reports) {
  if (reports.empty()) return {};
  std::vector<SpeedRow> rows;
  for (const auto& r : reports) {
    rows.push_back({r.sfs_k, r.mean_wall_time, r.metrics.sr, 0.0, r.generator_calls, r.expected_generator_calls});
  }
  std::sort(rows.begin(), rows.end(), [](const SpeedRow& a, const SpeedRow& b) { return a.k < b.k; });
  const double base = rows.front().wall_time;
  for (auto& row : rows) row.speedup = row.wall_time > 0 ? base / row.wall_time : 0.0;
  return rows;
}

inline nlohmann::json speed_report_json(const std::vector<EvalReport>& reports) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : speed_rows(reports)) {
    rows.push_back({{"k", r.k},
                    {"mean_wall_time", r.wall_time},
                    {"sr", r.sr},
                    {"speedup", r.speedup},
                    {"generator_calls", r.generator_calls},
                    {"expected_generator_calls", r.expected_calls}});
  }
  return {{"rows", rows}};
}

inline std::string speed_report_table(const std::vector<EvalReport>& reports) {
  std::ostringstream os;
  os << "   k  wall/ep (s)     SR  speedup  gen calls  ceil(T/k)\n";
  for (const auto& r : speed_rows(reports)) {
    char line[128];
    std::snprintf(line, sizeof line, "%4d  %11.3f  %5.3f  %6.2fx  %9ld  %9ld\n", r.k, r.wall_time, r.sr, r.speedup,
                  r.generator_calls, r.expected_calls);
    os << line;
  }
  return os.str();
}

// --- rollout artifacts -------------------------------------------------------

inline void write_trajectory_csv(const std::string& path, const RolloutResult& r) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << "step,x,y,theta,action,arrive_prob\n" << std::setprecision(17);
  for (const auto& s : r.steps) {
    os << s.step << ',' << s.pose.position.x << ',' << s.pose.position.y << ',' << geometry::heading(s.pose) << ','
       << sim::action_name(s.action) << ',' << s.arrive_prob << '\n';
  }
  // Final resting pose, after the last executed action.
  const auto& last = r.trajectory.back();
  os << r.decisions << ',' << last.position.x << ',' << last.position.y << ',' << geometry::heading(last) << ",end,\n";
}

inline sim::Frame frame_from(const std::vector<float>& rgb, int v) {
  sim::Frame f(v);
  if (rgb.size() != f.rgb.size()) throw std::invalid_argument("frame_from: expected a " + std::to_string(v) + "x" +
                                                              std::to_string(v) + " RGB frame");
  f.rgb = rgb;
  return f;
}

inline nlohmann::json rollout_meta(const RolloutResult& r, const sim::Episode& ep, const sim::WorldConfig& world,
                                   const RolloutOptions& opt) {
  return {{"episode_seed", ep.seed},
          {"instruction", ep.instruction},
          {"goal", {ep.goal_position.x, ep.goal_position.y}},
          {"geodesic_length", ep.geodesic_length},
          {"variant", variant_name(opt.variant)},
          {"controller", opt.controller == Controller::model ? "model" : "random"},
          {"sfs_k", opt.schedule.interval()},
          {"generator_enabled", opt.generator_enabled},
          {"stop", stop_reason_name(r.stop)},
          {"decisions", r.decisions},
          {"generator_calls", r.generator_calls},
          {"collisions", r.collisions},
          {"wall_time", r.wall_time},
          {"generator_time", r.generator_time},
          {"policy_time", r.policy_time},
          {"world", world}};
}

/// Writes meta.json, trajectory.csv and frames.bin (observed front frame at
/// every trajectory pose) into `dir`.
inline void dump_rollout(const std::string& dir, const RolloutResult& r, const sim::Episode& ep,
                         const sim::WorldConfig& world, const RolloutOptions& opt) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream os(dir + "/meta.json");
    os << rollout_meta(r, ep, world, opt).dump(2) << "\n";
  }
  write_trajectory_csv(dir + "/trajectory.csv", r);
  sim::FrameBlobWriter blob(dir + "/frames.bin", world.view_resolution);
  for (const auto& f : r.observed_front) blob.append(f);
  blob.close();
}

/// Writes predicted/observed frame pairs to pairs.bin (predicted at even
/// indices, observed at odd) and describes each pair in manifest.json.
inline nlohmann::json dump_frame_pairs(const std::string& dir, const RolloutResult& r, int v) {
  std::filesystem::create_directories(dir);
  sim::FrameBlobWriter blob(dir + "/pairs.bin", v);
  nlohmann::json pairs = nlohmann::json::array();
  for (const auto& pr : r.predictions) {
    for (std::size_t m = 0; m < pr.frames.size(); ++m) {
      const std::size_t idx = static_cast<std::size_t>(pr.step) + m + 1;
      if (idx >= r.observed_front.size()) break;
      const auto pi = blob.append(frame_from(pr.frames[m], v));
      const auto gi = blob.append(r.observed_front[idx]);
      pairs.push_back({{"decision", pr.step},
                       {"offset", m + 1},
                       {"trajectory_index", idx},
                       {"predicted", pi},
                       {"observed", gi},
                       {"psnr", psnr(pr.frames[m], r.observed_front[idx].rgb)}});
    }
  }
  blob.close();
  nlohmann::json manifest = {{"resolution", v}, {"blob", "pairs.bin"}, {"pairs", pairs}};
  std::ofstream os(dir + "/manifest.json");
  os << manifest.dump(2) << "\n";
  return manifest;
}

// --- images ------------------------------------------------------------------

/// RGB float image, row-major, values in [0, 1].
struct Image {
  int width = 0, height = 0;
  std::vector<float> rgb;

  Image() = default;
  Image(int w, int h, sim::Rgb fill = {1, 1, 1}) : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3) {
    for (std::size_t i = 0; i < rgb.size(); ++i) rgb[i] = fill[i % 3];
  }
  void set(int x, int y, const sim::Rgb& c) {
    if (x < 0 || y < 0 || x >= width || y >= height) return;
    float* p = rgb.data() + (static_cast<std::size_t>(y) * width + x) * 3;
    p[0] = c[0], p[1] = c[1], p[2] = c[2];
  }
  void blit(const sim::Frame& f, int x0, int y0, int scale = 1) {
    for (int r = 0; r < f.size * scale; ++r) {
      for (int c = 0; c < f.size * scale; ++c) {
        const float* px = f.pixel(r / scale, c / scale);
        set(x0 + c, y0 + r, {px[0], px[1], px[2]});
      }
    }
  }
};

/// Binary PPM (P6).
inline void write_ppm(const std::string& path, const Image& img) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  std::vector<unsigned char> bytes(img.rgb.size());
  for (std::size_t i = 0; i < img.rgb.size(); ++i) {
    bytes[i] = static_cast<unsigned char>(std::lround(std::clamp(img.rgb[i], 0.0f, 1.0f) * 255.0f));
  }
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline void draw_line(Image& img, double x0, double y0, double x1, double y1, const sim::Rgb& c) {
  const int n = static_cast<int>(std::ceil(std::max(std::abs(x1 - x0), std::abs(y1 - y0)))) + 1;
  for (int i = 0; i <= n; ++i) {
    const double t = static_cast<double>(i) / n;
    img.set(static_cast<int>(std::lround(x0 + t * (x1 - x0))), static_cast<int>(std::lround(y0 + t * (y1 - y0))), c);
  }
}

inline void draw_disc(Image& img, double cx, double cy, double radius, const sim::Rgb& c) {
  const int r = static_cast<int>(std::ceil(radius));
  for (int dy = -r; dy <= r; ++dy) {
    for (int dx = -r; dx <= r; ++dx) {
      if (dx * dx + dy * dy <= radius * radius) img.set(static_cast<int>(cx) + dx, static_cast<int>(cy) + dy, c);
    }
  }
}

/// Top-down map with the executed path (blue), start (green), stop point
/// (black) and goal (landmark colour, outlined by the success radius).
inline Image trajectory_overlay(const sim::WorldMap& map, const std::vector<geometry::Vec3>& path,
                                const geometry::Vec3& goal, double success_radius, int px_per_cell = 24) {
  Image img(map.width() * px_per_cell, map.height() * px_per_cell);
  const double scale = px_per_cell / map.cell_size();
  // Image y grows downwards, world y upwards.
  auto to_px = [&](const geometry::Vec3& p) {
    return std::pair<double, double>{p.x * scale, img.height - 1 - p.y * scale};
  };
  for (int r = 0; r < map.height(); ++r) {
    for (int c = 0; c < map.width(); ++c) {
      sim::Rgb col{0.95f, 0.95f, 0.95f};
      if (map.at(r, c) == sim::CellType::wall) col = sim::kWallColor;
      if (map.at(r, c) == sim::CellType::landmark) col = map.landmarks()[static_cast<std::size_t>(map.landmark_id(r, c))].rgb;
      for (int y = 0; y < px_per_cell; ++y) {
        for (int x = 0; x < px_per_cell; ++x) img.set(c * px_per_cell + x, img.height - 1 - (r * px_per_cell + y), col);
      }
    }
  }
  const auto [gx, gy] = to_px(goal);
  const double rr = success_radius * scale;
  for (int a = 0; a < 360; ++a) {
    const double th = a * std::numbers::pi / 180.0;
    img.set(static_cast<int>(gx + rr * std::cos(th)), static_cast<int>(gy + rr * std::sin(th)), {0.9f, 0.1f, 0.1f});
  }
  for (std::size_t i = 1; i < path.size(); ++i) {
    const auto [x0, y0] = to_px(path[i - 1]);
    const auto [x1, y1] = to_px(path[i]);
    draw_line(img, x0, y0, x1, y1, {0.1f, 0.2f, 0.9f});
  }
  if (!path.empty()) {
    const auto [sx, sy] = to_px(path.front());
    draw_disc(img, sx, sy, px_per_cell / 6.0, {0.1f, 0.7f, 0.1f});
    const auto [ex, ey] = to_px(path.back());
    draw_disc(img, ex, ey, px_per_cell / 6.0, {0.0f, 0.0f, 0.0f});
  }
  return img;
}

/// Two-row strip: predicted frames on top, observed frames below.
inline Image frame_strip(const std::vector<sim::Frame>& predicted, const std::vector<sim::Frame>& observed,
                         int scale = 2, int gap = 2) {
  if (predicted.size() != observed.size() || predicted.empty()) {
    throw std::invalid_argument("frame_strip: need equally many predicted and observed frames");
  }
  const int v = predicted.front().size * scale;
  const int n = static_cast<int>(predicted.size());
  Image img(n * v + (n + 1) * gap, 2 * v + 3 * gap);
  for (int i = 0; i < n; ++i) {
    img.blit(predicted[static_cast<std::size_t>(i)], gap + i * (v + gap), gap, scale);
    img.blit(observed[static_cast<std::size_t>(i)], gap + i * (v + gap), 2 * gap + v, scale);
  }
  return img;
}

}  // namespace navgen::runtime
