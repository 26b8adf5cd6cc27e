#pragma once

#include <cstddef>
#include <functional>
#include <new>
#include <memory>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace navgen {

using Shape = std::vector<int>;

/// Over-aligned allocator for tensor storage. Eigen's vectorized kernels
/// split loops at the first aligned element, so a fixed buffer alignment is
/// what makes results bitwise reproducible across runs.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlign); }
  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const { return true; }
};

template <typename T>
using Buffer = std::vector<T, AlignedAllocator<T>>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? ", " : "") << s[i];
  os << ']';
  return os.str();
}

inline std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) n *= static_cast<std::size_t>(d);
  return n;
}

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

[[noreturn]] inline void throw_shape(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

namespace detail {
inline thread_local bool grad_mode = true;
}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode; }

/// Disables graph construction on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_mode) { detail::grad_mode = false; }
  ~NoGradGuard() { detail::grad_mode = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

template <typename T>
struct Node {
  Shape shape;
  Buffer<T> value;
  Buffer<T> grad;  // empty until something flows into it
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;
  const char* op = "leaf";

  bool is_leaf() const { return !backward_fn; }

  /// Gradient buffer for accumulation, allocated on first use. Null when
  /// this node does not take gradients.
  T* grad_buffer() {
    if (!requires_grad) return nullptr;
    if (grad.empty()) grad.assign(value.size(), T(0));
    return grad.data();
  }
};

/// Dense row-major tensor of rank 1 or 2 with reverse-mode autodiff.
///
/// A Tensor is a shared handle: copies alias the same node. Values are never
/// mutated after construction except for parameter leaves updated by an
/// optimizer and gradient accumulation during backward().
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  template <typename A>
  static Tensor from(Shape shape, const std::vector<T, A>& data, bool requires_grad = false) {
    return from(std::move(shape), Buffer<T>(data.begin(), data.end()), requires_grad);
  }

  static Tensor from(Shape shape, Buffer<T> data, bool requires_grad = false) {
    if (shape.empty() || shape.size() > 2) {
      throw ShapeError("tensor: rank must be 1 or 2, got " + shape_str(shape));
    }
    if (numel(shape) != data.size()) {
      throw ShapeError("tensor: shape " + shape_str(shape) + " does not match data length " +
                       std::to_string(data.size()));
    }
    auto n = std::make_shared<Node<T>>();
    n->shape = std::move(shape);
    n->value = std::move(data);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const auto n = numel(shape);
    return from(std::move(shape), Buffer<T>(n, T(0)), requires_grad);
  }

  static Tensor full(Shape shape, T v) {
    const auto n = numel(shape);
    return from(std::move(shape), Buffer<T>(n, v));
  }

  static Tensor scalar(T v) { return from({1}, Buffer<T>{v}); }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int rows() const { return rank() == 1 ? 1 : node_->shape[0]; }
  int cols() const { return node_->shape.back(); }
  std::size_t size() const { return node_->value.size(); }

  std::span<const T> data() const { return node_->value; }
  const T& operator[](std::size_t i) const { return node_->value[i]; }
  T at(int r, int c) const { return node_->value[static_cast<std::size_t>(r) * cols() + c]; }
  T item() const {
    if (size() != 1) throw ShapeError("item: tensor is not a scalar " + shape_str(shape()));
    return node_->value[0];
  }

  /// In-place access for leaves (parameter init, optimizer updates).
  std::span<T> mutable_data() {
    if (!node_->is_leaf()) throw std::logic_error("mutable_data: not a leaf tensor");
    return node_->value;
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() {
    node_->grad_buffer();
    return node_->grad;
  }
  void zero_grad() { node_->grad.clear(); }

  /// Value copy with no history.
  Tensor detach() const { return from(shape(), node_->value, false); }

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

  void backward() const;

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Builds the output node of a differentiable op. History is recorded only
/// when grad mode is on and at least one input takes gradients.
template <typename T>
Tensor<T> make_result(Shape shape, Buffer<T> value, std::vector<Tensor<T>> inputs,
                      std::function<void(Node<T>&)> backward_fn, const char* op) {
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->op = op;
  if (grad_enabled()) {
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (any) {
      n->requires_grad = true;
      n->inputs.reserve(inputs.size());
      for (const auto& in : inputs) n->inputs.push_back(in.node_ptr());
      n->backward_fn = std::move(backward_fn);
    }
  }
  return Tensor<T>(std::move(n));
}

template <typename T>
void Tensor<T>::backward() const {
  if (size() != 1) throw ShapeError("backward: root must be a scalar, got " + shape_str(shape()));
  if (!requires_grad()) return;

  // Iterative post-order DFS gives a topological order with inputs first.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, i] = stack.back();
    if (i < n->inputs.size()) {
      Node<T>* child = n->inputs[i++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  node_->grad_buffer()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->is_leaf() || n->grad.empty()) continue;
    n->backward_fn(*n);
    n->grad.clear();
    n->grad.shrink_to_fit();
  }
}

}  // namespace navgen
