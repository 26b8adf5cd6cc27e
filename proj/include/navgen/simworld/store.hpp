#pragma once

// Episode store on disk:
//   index.jsonl   one JSON object per episode (instruction, tokens, seed, goal,
//                 poses, actions, steps, path lengths, frame_offset, frame_count)
//   frames.bin    "NVFB", u32 version, u32 V, u64 frame count, then frames as
//                 little-endian f32 V*V*3 row-major; three per decision step
//                 in view order left, front, right
//   world.json    the WorldConfig used to generate the episodes

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "navgen/simworld/episode.hpp"

namespace navgen::sim {

inline constexpr char kFrameMagic[4] = {'N', 'V', 'F', 'B'};
inline constexpr std::uint32_t kFrameBlobVersion = 1;
inline constexpr std::size_t kFrameHeaderBytes = 4 + 4 + 4 + 8;

class StoreError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class FrameBlobWriter {
 public:
  FrameBlobWriter(const std::string& path, int v) : path_(path), v_(v), os_(path, std::ios::binary | std::ios::trunc) {
    if (!os_) throw StoreError("cannot open frame blob for writing: " + path);
    os_.write(kFrameMagic, 4);
    const std::uint32_t ver = kFrameBlobVersion, vv = static_cast<std::uint32_t>(v);
    const std::uint64_t count = 0;
    os_.write(reinterpret_cast<const char*>(&ver), 4);
    os_.write(reinterpret_cast<const char*>(&vv), 4);
    os_.write(reinterpret_cast<const char*>(&count), 8);
  }
  ~FrameBlobWriter() {
    try {
      close();
    } catch (...) {
    }
  }

  std::uint64_t append(const Frame& f) {
    if (f.size != v_) throw StoreError("frame blob: resolution mismatch");
    os_.write(reinterpret_cast<const char*>(f.rgb.data()), static_cast<std::streamsize>(f.rgb.size() * 4));
    return count_++;
  }

  std::uint64_t count() const { return count_; }

  void close() {
    if (!os_.is_open()) return;
    os_.seekp(12);
    os_.write(reinterpret_cast<const char*>(&count_), 8);
    os_.close();
    if (os_.fail()) throw StoreError("frame blob: write failed for " + path_);
  }

 private:
  std::string path_;
  int v_;
  std::ofstream os_;
  std::uint64_t count_ = 0;
};

class FrameBlobReader {
 public:
  explicit FrameBlobReader(const std::string& path) : is_(path, std::ios::binary) {
    if (!is_) throw StoreError("cannot open frame blob: " + path);
    char magic[4];
    std::uint32_t ver = 0, v = 0;
    is_.read(magic, 4);
    is_.read(reinterpret_cast<char*>(&ver), 4);
    is_.read(reinterpret_cast<char*>(&v), 4);
    is_.read(reinterpret_cast<char*>(&count_), 8);
    if (!is_ || std::memcmp(magic, kFrameMagic, 4) != 0) throw StoreError("not a frame blob: " + path);
    if (ver != kFrameBlobVersion) throw StoreError("unsupported frame blob version in " + path);
    v_ = static_cast<int>(v);
  }

  int resolution() const { return v_; }
  std::uint64_t count() const { return count_; }

  Frame read(std::uint64_t index) {
    if (index >= count_) throw StoreError("frame index out of range");
    Frame f(v_);
    const std::uint64_t bytes = f.rgb.size() * 4;
    is_.seekg(static_cast<std::streamoff>(kFrameHeaderBytes + index * bytes));
    is_.read(reinterpret_cast<char*>(f.rgb.data()), static_cast<std::streamsize>(bytes));
    if (!is_) throw StoreError("truncated frame blob");
    return f;
  }

 private:
  std::ifstream is_;
  int v_ = 0;
  std::uint64_t count_ = 0;
};

inline nlohmann::json episode_to_json(const Episode& ep) {
  nlohmann::json j;
  j["seed"] = ep.seed;
  j["instruction"] = ep.instruction;
  j["tokens"] = ep.tokens;
  j["goal_landmark"] = ep.goal_landmark;
  j["goal_cell"] = {ep.goal_cell.row, ep.goal_cell.col};
  j["goal_position"] = {ep.goal_position.x, ep.goal_position.y, ep.goal_position.z};
  auto& poses = j["poses"] = nlohmann::json::array();
  for (const auto& p : ep.poses) {
    poses.push_back({p.position.x, p.position.y, p.position.z, p.rotation.w, p.rotation.x, p.rotation.y, p.rotation.z});
  }
  auto& actions = j["actions"] = nlohmann::json::array();
  for (auto a : ep.actions) actions.push_back(action_name(a));
  auto& steps = j["steps"] = nlohmann::json::array();
  for (const auto& s : ep.steps) steps.push_back({s.x, s.y, s.theta, s.arrive});
  j["path_length"] = ep.path_length;
  j["geodesic_length"] = ep.geodesic_length;
  return j;
}

inline Action action_from_name(const std::string& s) {
  if (s == "forward") return Action::forward;
  if (s == "turn_left") return Action::turn_left;
  if (s == "turn_right") return Action::turn_right;
  if (s == "stop") return Action::stop;
  throw StoreError("unknown action name: " + s);
}

inline Episode episode_from_json(const nlohmann::json& j) {
  Episode ep;
  ep.seed = j.at("seed").get<std::uint64_t>();
  ep.instruction = j.at("instruction").get<std::string>();
  ep.tokens = j.at("tokens").get<std::vector<int>>();
  ep.goal_landmark = j.at("goal_landmark").get<int>();
  ep.goal_cell = {j.at("goal_cell")[0].get<int>(), j.at("goal_cell")[1].get<int>()};
  const auto& g = j.at("goal_position");
  ep.goal_position = {g[0].get<double>(), g[1].get<double>(), g[2].get<double>()};
  for (const auto& p : j.at("poses")) {
    Pose pose;
    pose.position = {p[0].get<double>(), p[1].get<double>(), p[2].get<double>()};
    pose.rotation = {p[3].get<double>(), p[4].get<double>(), p[5].get<double>(), p[6].get<double>()};
    ep.poses.push_back(pose);
  }
  for (const auto& a : j.at("actions")) ep.actions.push_back(action_from_name(a.get<std::string>()));
  for (const auto& s : j.at("steps")) {
    ep.steps.push_back({s[0].get<double>(), s[1].get<double>(), s[2].get<double>(), s[3].get<double>()});
  }
  ep.path_length = j.at("path_length").get<double>();
  ep.geodesic_length = j.at("geodesic_length").get<double>();
  return ep;
}

/// Read access to episodes plus their per-step observations, wherever the
/// frames live.
class EpisodeSource {
 public:
  virtual ~EpisodeSource() = default;
  virtual std::size_t size() const = 0;
  virtual const Episode& episode(std::size_t i) const = 0;
  virtual Observation observation(std::size_t i, int step) const = 0;
  virtual const WorldConfig& world_config() const = 0;
};

/// Episodes kept in memory without frames; observations are re-rendered from
/// the regenerated map on demand.
class RenderedEpisodes : public EpisodeSource {
 public:
  RenderedEpisodes(WorldConfig cfg) : cfg_(cfg) { cfg_.render_observations = false; }

  void add(std::uint64_t seed) {
    maps_.push_back(generate_world(seed, cfg_));
    episodes_.push_back(generate_episode(seed, cfg_, &maps_.back()));
  }

  std::size_t size() const override { return episodes_.size(); }
  const Episode& episode(std::size_t i) const override { return episodes_.at(i); }
  const WorldMap& map(std::size_t i) const { return maps_.at(i); }
  Observation observation(std::size_t i, int step) const override {
    return render(maps_.at(i), episodes_.at(i).poses.at(static_cast<std::size_t>(step)), cfg_);
  }
  const WorldConfig& world_config() const override { return cfg_; }

 private:
  WorldConfig cfg_;
  std::vector<WorldMap> maps_;
  std::vector<Episode> episodes_;
};

inline RenderedEpisodes make_episodes(std::uint64_t first_seed, std::uint64_t last_seed, const WorldConfig& cfg) {
  RenderedEpisodes set(cfg);
  for (std::uint64_t s = first_seed; s <= last_seed; ++s) set.add(s);
  return set;
}

/// Writes episodes for seeds [first, last] into `dir`, streaming frames.
inline void write_episode_store(const std::string& dir, std::uint64_t first_seed, std::uint64_t last_seed,
                                WorldConfig cfg) {
  std::filesystem::create_directories(dir);
  cfg.render_observations = true;
  {
    std::ofstream wc(dir + "/world.json");
    wc << nlohmann::json(cfg).dump(2) << "\n";
  }
  std::ofstream index(dir + "/index.jsonl", std::ios::trunc);
  if (!index) throw StoreError("cannot write index in " + dir);
  FrameBlobWriter blob(dir + "/frames.bin", cfg.view_resolution);
  for (std::uint64_t s = first_seed; s <= last_seed; ++s) {
    const Episode ep = generate_episode(s, cfg);
    auto j = episode_to_json(ep);
    j["frame_offset"] = blob.count();
    for (const auto& o : ep.observations) {
      for (const auto& f : o.views) blob.append(f);
    }
    j["frame_count"] = ep.observations.size() * 3;
    index << j.dump() << "\n";
  }
  blob.close();
}

/// Episodes read back from an on-disk store; frames are read lazily.
class StoredEpisodes : public EpisodeSource {
 public:
  explicit StoredEpisodes(const std::string& dir) : blob_(std::make_unique<FrameBlobReader>(dir + "/frames.bin")) {
    std::ifstream wc(dir + "/world.json");
    if (!wc) throw StoreError("missing world.json in " + dir);
    cfg_ = nlohmann::json::parse(wc).get<WorldConfig>();
    std::ifstream index(dir + "/index.jsonl");
    if (!index) throw StoreError("missing index.jsonl in " + dir);
    std::string line;
    while (std::getline(index, line)) {
      if (line.empty()) continue;
      const auto j = nlohmann::json::parse(line);
      episodes_.push_back(episode_from_json(j));
      offsets_.push_back(j.at("frame_offset").get<std::uint64_t>());
    }
    if (blob_->resolution() != cfg_.view_resolution) throw StoreError("frame blob resolution differs from world.json");
  }

  std::size_t size() const override { return episodes_.size(); }
  const Episode& episode(std::size_t i) const override { return episodes_.at(i); }
  Observation observation(std::size_t i, int step) const override {
    Observation o;
    o.pose = episodes_.at(i).poses.at(static_cast<std::size_t>(step));
    const std::uint64_t base = offsets_.at(i) + static_cast<std::uint64_t>(step) * 3;
    for (int v = 0; v < 3; ++v) o.views[static_cast<std::size_t>(v)] = blob_->read(base + static_cast<std::uint64_t>(v));
    return o;
  }
  const WorldConfig& world_config() const override { return cfg_; }

 private:
  WorldConfig cfg_;
  std::unique_ptr<FrameBlobReader> blob_;
  std::vector<Episode> episodes_;
  std::vector<std::uint64_t> offsets_;
};

}  // namespace navgen::sim
