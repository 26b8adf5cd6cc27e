#pragma once

// Linear-path flow matching shared by the video generator and the diffusion
// policy: z_t = (1 - t) z + t eps, velocity target eps - z, and Euler
// integration of dz/dt = v from t = 1 down to t = 0.

#include <string>
#include <vector>

#include "navgen/numerics/ops.hpp"
#include "navgen/numerics/random.hpp"

namespace navgen {

template <typename T>
Tensor<T> flow_interpolate(const Tensor<T>& z, const Tensor<T>& eps, double t) {
  if (z.shape() != eps.shape()) throw_shape("flow_interpolate", z.shape(), eps.shape());
  auto a = z.data();
  auto b = eps.data();
  Buffer<T> out(a.size());
  const T s = static_cast<T>(t), r = static_cast<T>(1.0 - t);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = r * a[i] + s * b[i];
  return Tensor<T>::from(z.shape(), std::move(out));
}

template <typename T>
Tensor<T> flow_target(const Tensor<T>& z, const Tensor<T>& eps) {
  if (z.shape() != eps.shape()) throw_shape("flow_target", z.shape(), eps.shape());
  auto a = z.data();
  auto b = eps.data();
  Buffer<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = b[i] - a[i];
  return Tensor<T>::from(z.shape(), std::move(out));
}

template <typename T>
Tensor<T> gaussian_like(Shape shape, Rng& rng) {
  return Tensor<T>::from(shape, rng.normal_vector<T>(numel(shape)));
}

/// Uniform time grid of an Euler sampler: t_s = 1 - s / steps.
inline std::vector<double> euler_grid(int steps) {
  if (steps <= 0) throw std::invalid_argument("euler sampler needs at least one step");
  std::vector<double> t(static_cast<std::size_t>(steps));
  for (int s = 0; s < steps; ++s) t[static_cast<std::size_t>(s)] = 1.0 - static_cast<double>(s) / steps;
  return t;
}

/// z <- z - dt * v, detached. Throws with the step index when the new state
/// is not finite.
template <typename T>
Tensor<T> euler_step(const Tensor<T>& z, const Tensor<T>& v, double dt, int step, const char* what) {
  if (z.shape() != v.shape()) throw_shape(what, z.shape(), v.shape());
  auto a = z.data();
  auto b = v.data();
  Buffer<T> out(a.size());
  const T h = static_cast<T>(dt);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = a[i] - h * b[i];
    if (!std::isfinite(static_cast<double>(out[i]))) {
      throw NumericError(std::string(what) + ": non-finite state at Euler step " + std::to_string(step));
    }
  }
  return Tensor<T>::from(z.shape(), std::move(out));
}

}  // namespace navgen
