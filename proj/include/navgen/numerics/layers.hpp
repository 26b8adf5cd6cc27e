#pragma once

#include <cmath>
#include <deque>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "navgen/numerics/attention.hpp"
#include "navgen/numerics/ops.hpp"
#include "navgen/numerics/random.hpp"

namespace navgen {

enum class Init { zeros, ones, normal, fan_in };

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> tensor;
  std::vector<T> adam_m;
  std::vector<T> adam_v;
  bool frozen = false;
};

/// Owns every trainable tensor of a model under a unique dotted name.
template <typename T>
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed = 0) : seed_(seed) {}
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;

  /// Creates a parameter; its initial value depends only on (seed, name).
  Tensor<T> create(const std::string& name, Shape shape, Init init, double scale = 1.0) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    const std::size_t n = numel(shape);
    Buffer<T> v(n, T(0));
    Rng rng(derive_seed(seed_, name));
    switch (init) {
      case Init::zeros: break;
      case Init::ones: std::fill(v.begin(), v.end(), T(scale)); break;
      case Init::normal:
        for (auto& x : v) x = static_cast<T>(scale * rng.normal());
        break;
      case Init::fan_in: {
        const double std = scale / std::sqrt(static_cast<double>(shape[0]));
        for (auto& x : v) x = static_cast<T>(std * rng.normal());
        break;
      }
    }
    Parameter<T> p;
    p.name = name;
    p.tensor = Tensor<T>::from(std::move(shape), std::move(v), true);
    index_[name] = params_.size();
    params_.push_back(std::move(p));
    return params_.back().tensor;
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  Parameter<T>& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
    return params_[it->second];
  }

  std::deque<Parameter<T>>& all() { return params_; }
  const std::deque<Parameter<T>>& all() const { return params_; }

  std::vector<Parameter<T>*> with_prefix(const std::string& prefix) {
    std::vector<Parameter<T>*> out;
    for (auto& p : params_) {
      if (p.name.compare(0, prefix.size(), prefix) == 0) out.push_back(&p);
    }
    return out;
  }

  void set_frozen(const std::string& prefix, bool frozen) {
    for (auto* p : with_prefix(prefix)) {
      p->frozen = frozen;
      p->tensor.set_requires_grad(!frozen);
    }
  }

  void freeze_all(bool frozen) { set_frozen("", frozen); }

  void zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.tensor.size();
    return n;
  }

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::deque<Parameter<T>> params_;
  std::map<std::string, std::size_t> index_;
};

template <typename T>
struct Linear {
  Tensor<T> weight;  // [in, out]
  Tensor<T> bias;    // [out]

  Linear() = default;
  Linear(ParamStore<T>& store, const std::string& name, int in, int out, bool with_bias = true,
         Init init = Init::fan_in, double scale = 1.0) {
    weight = store.create(name + ".weight", {in, out}, init, scale);
    if (with_bias) bias = store.create(name + ".bias", {out}, Init::zeros);
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, weight, bias); }
};

template <typename T>
struct LayerNorm {
  Tensor<T> gain;
  Tensor<T> bias;

  LayerNorm() = default;
  LayerNorm(ParamStore<T>& store, const std::string& name, int dim) {
    gain = store.create(name + ".gain", {dim}, Init::ones);
    bias = store.create(name + ".bias", {dim}, Init::zeros);
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm(x, gain, bias); }
};

template <typename T>
struct Mlp {
  Linear<T> fc1;
  Linear<T> fc2;

  Mlp() = default;
  Mlp(ParamStore<T>& store, const std::string& name, int dim, int hidden, int out = -1)
      : fc1(store, name + ".fc1", dim, hidden), fc2(store, name + ".fc2", hidden, out < 0 ? dim : out) {}

  Tensor<T> operator()(const Tensor<T>& x) const { return fc2(gelu(fc1(x))); }
};

/// Projected multi-head attention. Self-attention when q_input and kv_input
/// are the same tensor.
template <typename T>
struct MultiHeadAttention {
  Linear<T> wq, wk, wv, wo;
  int heads = 1;

  MultiHeadAttention() = default;
  MultiHeadAttention(ParamStore<T>& store, const std::string& name, int dim, int kv_dim, int heads_,
                     Init out_init = Init::fan_in)
      : wq(store, name + ".wq", dim, dim),
        wk(store, name + ".wk", kv_dim, dim),
        wv(store, name + ".wv", kv_dim, dim),
        wo(store, name + ".wo", dim, dim, true, out_init),
        heads(heads_) {
    if (heads <= 0 || dim % heads != 0) {
      throw ShapeError("multi_head_attention: dimension " + std::to_string(dim) + " not divisible by " +
                       std::to_string(heads_) + " heads");
    }
  }

  Tensor<T> operator()(const Tensor<T>& q_input, const Tensor<T>& kv_input, const KeyMask& mask = {},
                       const PositionTransform<T>* q_pos = nullptr,
                       const PositionTransform<T>* k_pos = nullptr) const {
    return attend(q_input, project_kv(kv_input, k_pos), mask, q_pos);
  }

  /// Projected keys and values, reusable across calls with the same kv input.
  struct KvCache {
    Tensor<T> k, v;
  };

  KvCache project_kv(const Tensor<T>& kv_input, const PositionTransform<T>* k_pos = nullptr) const {
    Tensor<T> k = wk(kv_input);
    if (k_pos) k = k_pos->apply(k, heads);
    return {k, wv(kv_input)};
  }

  Tensor<T> attend(const Tensor<T>& q_input, const KvCache& kv, const KeyMask& mask = {},
                   const PositionTransform<T>* q_pos = nullptr) const {
    Tensor<T> q = wq(q_input);
    if (q_pos) q = q_pos->apply(q, heads);
    return wo(attention(q, kv.k, kv.v, heads, mask));
  }
};

/// Pre-norm transformer encoder block: x + attn(ln(x)), then x + mlp(ln(x)).
template <typename T>
struct EncoderBlock {
  LayerNorm<T> ln1, ln2;
  MultiHeadAttention<T> attn;
  Mlp<T> mlp;

  EncoderBlock() = default;
  EncoderBlock(ParamStore<T>& store, const std::string& name, int dim, int heads, int hidden)
      : ln1(store, name + ".ln1", dim),
        ln2(store, name + ".ln2", dim),
        attn(store, name + ".attn", dim, dim, heads),
        mlp(store, name + ".mlp", dim, hidden) {}

  Tensor<T> operator()(const Tensor<T>& x, const KeyMask& mask = {}) const {
    Tensor<T> h = ln1(x);
    Tensor<T> y = add(x, attn(h, h, mask));
    return add(y, mlp(ln2(y)));
  }
};

}  // namespace navgen
