#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "navgen/numerics/layers.hpp"

namespace navgen {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t checked = 0;
};

template <typename T>
using NamedTensors = std::vector<std::pair<std::string, Tensor<T>>>;

/// Compares reverse-mode gradients of a scalar function against central
/// differences. Error per entry is |analytic - numeric| / max(1, |numeric|).
///
/// `f` must rebuild its graph on every call. When `max_per_param` is nonzero
/// a seeded subset of entries is checked per tensor. Tensors that do not
/// require grad are skipped.
template <typename T>
GradCheckResult grad_check(const std::function<Tensor<T>()>& f, NamedTensors<T> leaves, double eps = 1e-5,
                           std::size_t max_per_param = 0, std::uint64_t seed = 0) {
  for (auto& [name, t] : leaves) t.zero_grad();
  Tensor<T> loss = f();
  if (!std::isfinite(static_cast<double>(loss.item()))) throw NumericError("grad_check: non-finite loss");
  loss.backward();

  GradCheckResult res;
  Rng rng(seed);
  for (auto& [name, t] : leaves) {
    if (!t.requires_grad()) continue;
    std::vector<T> analytic(t.size(), T(0));
    if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), analytic.begin());

    std::vector<std::size_t> idx(t.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    if (max_per_param && idx.size() > max_per_param) {
      for (std::size_t i = 0; i < max_per_param; ++i) {
        std::swap(idx[i], idx[i + static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(idx.size() - i - 1)))]);
      }
      idx.resize(max_per_param);
    }

    auto w = t.mutable_data();
    for (std::size_t i : idx) {
      const T saved = w[i];
      double fp, fm;
      {
        NoGradGuard guard;
        w[i] = static_cast<T>(saved + eps);
        fp = static_cast<double>(f().item());
        w[i] = static_cast<T>(saved - eps);
        fm = static_cast<double>(f().item());
      }
      w[i] = saved;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double a = static_cast<double>(analytic[i]);
      if (!std::isfinite(numeric) || !std::isfinite(a)) {
        throw NumericError("grad_check: non-finite gradient in " + name + "[" + std::to_string(i) + "]");
      }
      const double rel = std::abs(a - numeric) / std::max(1.0, std::abs(numeric));
      if (res.worst_param.empty() || rel > res.max_rel_error) {
        res.max_rel_error = rel;
        res.worst_param = name + "[" + std::to_string(i) + "]";
      }
      ++res.checked;
    }
  }
  for (auto& [name, t] : leaves) t.zero_grad();
  return res;
}

/// Same check over every non-frozen parameter of a store.
template <typename T>
GradCheckResult grad_check(const std::function<Tensor<T>()>& f, ParamStore<T>& store, double eps = 1e-5,
                           std::size_t max_per_param = 0, std::uint64_t seed = 0) {
  NamedTensors<T> leaves;
  for (auto& p : store.all()) {
    if (!p.frozen) leaves.emplace_back(p.name, p.tensor);
  }
  return grad_check<T>(f, std::move(leaves), eps, max_per_param, seed);
}

}  // namespace navgen
