#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "navgen/numerics/layers.hpp"

namespace navgen {

struct AdamWConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// Cosine decay from `peak` to `floor_fraction * peak` over `total_steps`,
/// after an optional linear warmup.
struct CosineSchedule {
  double peak = 3e-4;
  double floor_fraction = 0.1;
  long total_steps = 1;
  long warmup_steps = 0;

  double operator()(long step) const {
    const double floor = floor_fraction * peak;
    if (warmup_steps > 0 && step < warmup_steps) return peak * static_cast<double>(step + 1) / warmup_steps;
    const long span = std::max<long>(1, total_steps - warmup_steps);
    const double p = std::clamp(static_cast<double>(step - warmup_steps) / span, 0.0, 1.0);
    return floor + (peak - floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * p));
  }
};

/// Adam with decoupled weight decay. Decay applies to matrices only; vectors
/// (biases, norm gains, embeddings stored as [N]) are not decayed.
template <typename T>
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

  long step_count() const { return step_; }
  void set_step_count(long s) { step_ = s; }
  const AdamWConfig& config() const { return cfg_; }

  /// Applies one update to every non-frozen parameter that received a
  /// gradient. A non-finite gradient aborts before anything is modified.
  void step(std::vector<Parameter<T>*> params, double lr) {
    for (auto* p : params) {
      if (p->frozen || !p->tensor.has_grad()) continue;
      for (T g : p->tensor.grad()) {
        if (!std::isfinite(g)) throw NumericError("adamw: non-finite gradient in parameter " + p->name);
      }
    }
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (auto* p : params) {
      if (p->frozen || !p->tensor.has_grad()) continue;
      auto w = p->tensor.mutable_data();
      auto g = p->tensor.grad();
      if (p->adam_m.size() != w.size()) {
        p->adam_m.assign(w.size(), T(0));
        p->adam_v.assign(w.size(), T(0));
      }
      const bool decay = p->tensor.rank() == 2 && cfg_.weight_decay != 0.0;
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = g[i];
        const double m = cfg_.beta1 * p->adam_m[i] + (1.0 - cfg_.beta1) * gi;
        const double v = cfg_.beta2 * p->adam_v[i] + (1.0 - cfg_.beta2) * gi * gi;
        p->adam_m[i] = static_cast<T>(m);
        p->adam_v[i] = static_cast<T>(v);
        double wi = w[i];
        if (decay) wi -= lr * cfg_.weight_decay * wi;
        wi -= lr * (m / bc1) / (std::sqrt(v / bc2) + cfg_.eps);
        w[i] = static_cast<T>(wi);
      }
    }
  }

 private:
  AdamWConfig cfg_;
  long step_ = 0;
};

/// Scales gradients so their global L2 norm is at most max_norm; returns the
/// norm before clipping.
template <typename T>
double clip_grad_norm(const std::vector<Parameter<T>*>& params, double max_norm) {
  double sq = 0.0;
  for (auto* p : params) {
    if (!p->tensor.has_grad()) continue;
    for (T g : p->tensor.grad()) sq += static_cast<double>(g) * g;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const T s = static_cast<T>(max_norm / (norm + 1e-12));
    for (auto* p : params) {
      if (!p->tensor.has_grad()) continue;
      for (auto& g : p->tensor.mutable_grad()) g *= s;
    }
  }
  return norm;
}

}  // namespace navgen
