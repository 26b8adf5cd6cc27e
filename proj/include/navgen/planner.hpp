#pragma once

// Context encoder producing the conditioning sequence C shared by the video
// generator and both policy heads.
//
// Token layout of C (fixed by ModelConfig):
//   [0, Lmax)                          instruction tokens, padded with <pad>
//   then one group of (V/P)^2 tokens per frame slot, in order:
//     history frames o_{i-k} .. o_{i-1}  (front view, oldest first)
//     current left, current front, current right
// Padding tokens are excluded through the key mask.

#include <array>
#include <span>
#include <string>
#include <vector>

#include "navgen/model_config.hpp"
#include "navgen/numerics/layers.hpp"

namespace navgen {

struct Segment {
  enum class Kind { instruction, history, current };
  Kind kind = Kind::instruction;
  int index = 0;  // history slot (0 = oldest) or view (0 left, 1 front, 2 right)
  int begin = 0, end = 0;
};

template <typename T>
struct ContextEmbedding {
  Tensor<T> tokens;  // [L, D]
  KeyMask mask;      // one entry per token, 0 for padding
  std::vector<Segment> segments;

  int length() const { return tokens.rows(); }
  int dim() const { return tokens.cols(); }
};

struct PlannerInput {
  std::vector<int> tokens;                       // instruction ids including <bos>/<eos>
  std::vector<std::span<const float>> history;   // k front frames, oldest first
  std::array<std::span<const float>, 3> current; // left, front, right
};

inline std::vector<Segment> context_layout(const ModelConfig& cfg) {
  std::vector<Segment> seg;
  seg.push_back({Segment::Kind::instruction, 0, 0, cfg.max_instruction});
  int pos = cfg.max_instruction;
  const int tpf = cfg.tokens_per_frame();
  for (int j = 0; j < cfg.history; ++j, pos += tpf) seg.push_back({Segment::Kind::history, j, pos, pos + tpf});
  for (int v = 0; v < 3; ++v, pos += tpf) seg.push_back({Segment::Kind::current, v, pos, pos + tpf});
  return seg;
}

/// Anything that maps (instruction, history, current views) to C.
template <typename T>
class ContextEncoder {
 public:
  virtual ~ContextEncoder() = default;
  virtual ContextEmbedding<T> encode(const PlannerInput& in) const = 0;
};

template <typename T>
class Planner : public ContextEncoder<T> {
 public:
  Planner() = default;
  Planner(ParamStore<T>& store, const ModelConfig& cfg, const std::string& name = "planner") : cfg_(cfg) {
    const int d = cfg.dim;
    token_embed_ = store.create(name + ".token_embed", {cfg.vocab_size, d}, Init::normal, 0.1);
    instr_pos_ = store.create(name + ".instr_pos", {cfg.max_instruction, d}, Init::normal, 0.1);
    patch_proj_ = Linear<T>(store, name + ".patch_proj", cfg.patch_features(), d);
    patch_pos_ = store.create(name + ".patch_pos", {cfg.tokens_per_frame(), d}, Init::normal, 0.1);
    slot_tag_ = store.create(name + ".slot_tag", {cfg.frame_slots(), d}, Init::normal, 0.1);
    for (int b = 0; b < cfg.planner_blocks; ++b) {
      blocks_.emplace_back(store, name + ".block" + std::to_string(b), d, cfg.planner_heads, cfg.planner_mlp);
    }
    final_ln_ = LayerNorm<T>(store, name + ".final_ln", d);
  }

  ContextEmbedding<T> encode(const PlannerInput& in) const override {
    const int lmax = cfg_.max_instruction;
    if (static_cast<int>(in.tokens.size()) > lmax) {
      throw ShapeError("planner: instruction has " + std::to_string(in.tokens.size()) + " tokens, max " +
                       std::to_string(lmax));
    }
    if (static_cast<int>(in.history.size()) != cfg_.history) {
      throw ShapeError("planner: expected " + std::to_string(cfg_.history) + " history frames, got " +
                       std::to_string(in.history.size()));
    }
    std::vector<int> ids(in.tokens);
    KeyMask mask(static_cast<std::size_t>(lmax), 0);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (ids[i] < 0 || ids[i] >= cfg_.vocab_size) throw ShapeError("planner: token id out of vocabulary");
      mask[i] = 1;
    }
    ids.resize(static_cast<std::size_t>(lmax), 0);
    Tensor<T> instr = add(gather_rows(token_embed_, ids), instr_pos_);

    std::vector<Tensor<T>> patches;
    for (const auto& f : in.history) patches.push_back(patchify<T>(f, cfg_.view_resolution, cfg_.patch));
    for (const auto& f : in.current) patches.push_back(patchify<T>(f, cfg_.view_resolution, cfg_.patch));
    const int slots = cfg_.frame_slots(), tpf = cfg_.tokens_per_frame();
    Tensor<T> frames = patch_proj_(concat_rows(patches));
    frames = add(frames, concat_rows(std::vector<Tensor<T>>(static_cast<std::size_t>(slots), patch_pos_)));
    frames = add(frames, repeat_rows(slot_tag_, std::vector<int>(static_cast<std::size_t>(slots), tpf)));
    mask.resize(static_cast<std::size_t>(cfg_.context_length()), 1);

    Tensor<T> x = concat_rows<T>({instr, frames});
    for (const auto& b : blocks_) x = b(x, mask);
    return {final_ln_(x), std::move(mask), context_layout(cfg_)};
  }

  const ModelConfig& config() const { return cfg_; }

 private:
  ModelConfig cfg_;
  Tensor<T> token_embed_, instr_pos_, patch_pos_, slot_tag_;
  Linear<T> patch_proj_;
  std::vector<EncoderBlock<T>> blocks_;
  LayerNorm<T> final_ln_;
};

}  // namespace navgen
