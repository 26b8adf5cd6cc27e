#pragma once

// 3D rotary position embedding over (t, h, w) latent coordinates.
//
// The three current views share one time index and are laid side by side on
// the width axis: front keeps w, right becomes w + W, left becomes w + 2W.
// History slots count up from t = 0 and future slots continue after the
// current time index.

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "navgen/numerics/attention.hpp"

namespace navgen::worldgen {

enum class SlotRole { history = 0, current_front = 1, current_left = 2, current_right = 3, future = 4 };

inline const char* role_name(SlotRole r) {
  switch (r) {
    case SlotRole::history: return "history";
    case SlotRole::current_front: return "current_front";
    case SlotRole::current_left: return "current_left";
    case SlotRole::current_right: return "current_right";
    case SlotRole::future: return "future";
  }
  return "unknown";
}

struct RopeCoord {
  int t = 0, h = 0, w = 0;
  friend bool operator==(const RopeCoord&, const RopeCoord&) = default;
  friend auto operator<=>(const RopeCoord&, const RopeCoord&) = default;
};

/// Coordinates for every token of a grid whose slots have the given roles.
/// Tokens are enumerated slot-major, then row (h), then column (w).
inline std::vector<RopeCoord> assign_rope_coords(const std::vector<SlotRole>& roles, int height, int width) {
  int history = 0, fronts = 0, lefts = 0, rights = 0;
  for (SlotRole r : roles) {
    switch (r) {
      case SlotRole::history: ++history; break;
      case SlotRole::current_front: ++fronts; break;
      case SlotRole::current_left: ++lefts; break;
      case SlotRole::current_right: ++rights; break;
      case SlotRole::future: break;
      default: throw std::invalid_argument("assign_rope_coords: unknown slot role " + std::to_string(static_cast<int>(r)));
    }
  }
  if (fronts != 1 || lefts > 1 || rights > 1) {
    throw std::invalid_argument("assign_rope_coords: need exactly one current-front slot and at most one left/right");
  }
  const int now = history;
  std::vector<RopeCoord> out;
  out.reserve(roles.size() * static_cast<std::size_t>(height * width));
  int hist_seen = 0, future_seen = 0;
  for (SlotRole r : roles) {
    int t = now, offset = 0;
    switch (r) {
      case SlotRole::history: t = hist_seen++; break;
      case SlotRole::current_front: break;
      case SlotRole::current_right: offset = width; break;
      case SlotRole::current_left: offset = 2 * width; break;
      case SlotRole::future: t = now + ++future_seen; break;
    }
    for (int h = 0; h < height; ++h) {
      for (int w = 0; w < width; ++w) out.push_back({t, h, w + offset});
    }
  }
  return out;
}

/// Channel pairs per axis inside one head: t, h, w in that order.
struct RopeAxes {
  int t_pairs = 0, h_pairs = 0, w_pairs = 0;
  int channels() const { return 2 * (t_pairs + h_pairs + w_pairs); }
};

/// Splits a head dimension into three even axis groups, giving leftover
/// pairs to w and then h.
inline RopeAxes default_rope_axes(int head_dim) {
  if (head_dim < 6 || head_dim % 2 != 0) {
    throw ShapeError("rope: head dimension " + std::to_string(head_dim) +
                     " cannot be split into three even axis groups");
  }
  const int pairs = head_dim / 2, base = pairs / 3, rem = pairs % 3;
  return {base, base + (rem >= 2 ? 1 : 0), base + (rem >= 1 ? 1 : 0)};
}

/// Precomputed per-token rotation tables. Applies the same rotation to every
/// head of a [L, heads * head_dim] tensor.
template <typename T>
class Rope3D : public PositionTransform<T> {
 public:
  Rope3D() = default;
  Rope3D(const std::vector<RopeCoord>& coords, RopeAxes axes, double base = 100.0)
      : axes_(axes), tokens_(static_cast<int>(coords.size())) {
    const int pairs = axes.t_pairs + axes.h_pairs + axes.w_pairs;
    cos_.resize(coords.size() * static_cast<std::size_t>(pairs));
    sin_.resize(cos_.size());
    for (std::size_t l = 0; l < coords.size(); ++l) {
      int p = 0;
      auto fill = [&](int count, int pos) {
        for (int i = 0; i < count; ++i, ++p) {
          const double freq = std::pow(base, -static_cast<double>(i) / count);
          const double a = pos * freq;
          cos_[l * pairs + p] = static_cast<T>(std::cos(a));
          sin_[l * pairs + p] = static_cast<T>(std::sin(a));
        }
      };
      fill(axes.t_pairs, coords[l].t);
      fill(axes.h_pairs, coords[l].h);
      fill(axes.w_pairs, coords[l].w);
    }
  }

  const RopeAxes& axes() const { return axes_; }

  Tensor<T> apply(const Tensor<T>& x, int heads) const override {
    const int d = x.cols();
    if (x.rows() != tokens_) throw_shape("rope_rotate", x.shape(), Shape{tokens_, d});
    if (heads <= 0 || d % heads != 0 || d / heads != axes_.channels()) {
      throw ShapeError("rope_rotate: head dimension " + std::to_string(heads > 0 ? d / heads : 0) +
                       " does not match axis split of " + std::to_string(axes_.channels()));
    }
    const int pairs = axes_.channels() / 2, dh = d / heads;
    auto xv = x.data();
    Buffer<T> out(xv.size());
    for (int l = 0; l < tokens_; ++l) {
      const T* c = cos_.data() + static_cast<std::size_t>(l) * pairs;
      const T* s = sin_.data() + static_cast<std::size_t>(l) * pairs;
      for (int h = 0; h < heads; ++h) {
        const std::size_t base = static_cast<std::size_t>(l) * d + static_cast<std::size_t>(h) * dh;
        for (int p = 0; p < pairs; ++p) {
          const T a = xv[base + 2 * p], b = xv[base + 2 * p + 1];
          out[base + 2 * p] = a * c[p] - b * s[p];
          out[base + 2 * p + 1] = a * s[p] + b * c[p];
        }
      }
    }
    return make_result<T>(x.shape(), std::move(out), {x}, [this_cos = cos_, this_sin = sin_, pairs, heads, dh, d,
                                                           n = tokens_](Node<T>& self) {
      T* g = self.inputs[0]->grad_buffer();
      if (!g) return;
      for (int l = 0; l < n; ++l) {
        const T* c = this_cos.data() + static_cast<std::size_t>(l) * pairs;
        const T* s = this_sin.data() + static_cast<std::size_t>(l) * pairs;
        for (int h = 0; h < heads; ++h) {
          const std::size_t base = static_cast<std::size_t>(l) * d + static_cast<std::size_t>(h) * dh;
          for (int p = 0; p < pairs; ++p) {
            const T ga = self.grad[base + 2 * p], gb = self.grad[base + 2 * p + 1];
            g[base + 2 * p] += ga * c[p] + gb * s[p];
            g[base + 2 * p + 1] += -ga * s[p] + gb * c[p];
          }
        }
      }
    }, "rope_rotate");
  }

 private:
  RopeAxes axes_;
  int tokens_ = 0;
  Buffer<T> cos_, sin_;  // [tokens, pairs]
};

/// Convenience wrapper: rotates x by the given coordinates.
template <typename T>
Tensor<T> rope_rotate(const Tensor<T>& x, const std::vector<RopeCoord>& coords, int heads, double base = 100.0) {
  if (heads <= 0 || x.cols() % heads != 0) throw ShapeError("rope_rotate: dimension not divisible by heads");
  return Rope3D<T>(coords, default_rope_axes(x.cols() / heads), base).apply(x, heads);
}

}  // namespace navgen::worldgen
