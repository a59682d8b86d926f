#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "malab/errors.hpp"

namespace malab {

using Shape = std::vector<std::size_t>;

enum class DType { f32, f64 };

template <typename T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>,
                "tensors hold float or double");
  return std::is_same_v<T, float> ? DType::f32 : DType::f64;
}

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_to_string(const Shape& shape);

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until first written
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this->grad and accumulates into parents' grads.
  std::function<void(Node&)> backward_fn;

  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T(0));
  }
};

inline thread_local int no_grad_depth = 0;

}  // namespace detail

/// While alive, operations on this thread record no graph. Used for
/// evaluation passes over trainable parameters.
class NoGradGuard {
 public:
  NoGradGuard() { ++detail::no_grad_depth; }
  ~NoGradGuard() { --detail::no_grad_depth; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

inline bool grad_enabled() { return detail::no_grad_depth == 0; }

/// Dense row-major tensor with optional reverse-mode gradient tracking.
///
/// A Tensor is a shared handle: copies alias the same buffer. Results of
/// operations record their parents only when some input requires a
/// gradient, so inference on non-tracking inputs builds no graph.
template <typename T>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0), bool requires_grad = false)
      : node_(std::make_shared<detail::Node<T>>()) {
    node_->data.assign(shape_numel(shape), fill);
    node_->shape = std::move(shape);
    node_->requires_grad = requires_grad;
  }

  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false)
      : node_(std::make_shared<detail::Node<T>>()) {
    if (data.size() != shape_numel(shape)) {
      throw DimensionError("tensor data length " + std::to_string(data.size()) +
                           " does not match shape " + shape_to_string(shape));
    }
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    node_->requires_grad = requires_grad;
  }

  static Tensor scalar(T value, bool requires_grad = false) {
    return Tensor(Shape{1}, std::vector<T>{value}, requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  DType dtype() const { return dtype_of<T>(); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<T> data() { return node_->data; }
  std::span<const T> data() const { return node_->data; }
  T& operator[](std::size_t i) { return node_->data[i]; }
  const T& operator[](std::size_t i) const { return node_->data[i]; }
  T item() const {
    if (numel() != 1) throw ContractError("item() on non-scalar tensor");
    return node_->data[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<T> grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  std::span<const T> grad() const {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() { node_->grad.clear(); }

  /// Copy of the values with no graph attached.
  Tensor detach() const { return Tensor(shape(), node_->data, false); }

  /// Rows x cols view of a tensor whose last dimension is `cols`.
  std::size_t rows() const { return numel() / cols(); }
  std::size_t cols() const { return node_->shape.empty() ? 1 : node_->shape.back(); }

  /// Copy with a new shape of equal element count; gradients flow back.
  Tensor reshaped(Shape shape) const;

  void backward() const;

  const NodePtr& node() const { return node_; }
  bool same_node(const Tensor& other) const { return node_ == other.node_; }

  /// Builds an operation result. Parents and the backward closure are kept
  /// only when at least one parent tracks gradients.
  static Tensor make_result(Shape shape, std::vector<T> data,
                            std::vector<NodePtr> parents,
                            std::function<void(detail::Node<T>&)> backward_fn);

 private:
  NodePtr node_;
};

/// Reverse topological order of the graph under a scalar loss. Replaying it
/// visits each recorded operation exactly once.
template <typename T>
class GradTape {
 public:
  explicit GradTape(const Tensor<T>& loss);

  std::size_t size() const { return order_.size(); }
  const std::vector<detail::Node<T>*>& order() const { return order_; }

  /// Seeds d(loss)/d(loss) = 1 and runs every backward closure.
  void replay();

 private:
  std::shared_ptr<detail::Node<T>> root_;
  std::vector<detail::Node<T>*> order_;
};

template <typename T>
void backward(const Tensor<T>& loss) {
  GradTape<T>(loss).replay();
}

template <typename T>
void Tensor<T>::backward() const {
  malab::backward(*this);
}

template <typename T>
Tensor<T> Tensor<T>::make_result(Shape shape, std::vector<T> data,
                                 std::vector<NodePtr> parents,
                                 std::function<void(detail::Node<T>&)> backward_fn) {
  Tensor out;
  out.node_ = std::make_shared<detail::Node<T>>();
  out.node_->shape = std::move(shape);
  out.node_->data = std::move(data);
  bool tracked = false;
  if (grad_enabled())
    for (const auto& p : parents) tracked = tracked || p->requires_grad;
  if (tracked) {
    out.node_->requires_grad = true;
    out.node_->parents = std::move(parents);
    out.node_->backward_fn = std::move(backward_fn);
  }
  return out;
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape new_shape) const {
  if (shape_numel(new_shape) != numel()) {
    throw DimensionError("cannot reshape " + shape_to_string(shape()) + " to " +
                         shape_to_string(new_shape));
  }
  auto self = node_;
  return make_result(std::move(new_shape), node_->data, {self},
                     [self](detail::Node<T>& out) {
                       self->ensure_grad();
                       for (std::size_t i = 0; i < out.grad.size(); ++i) {
                         self->grad[i] += out.grad[i];
                       }
                     });
}

extern template class GradTape<float>;
extern template class GradTape<double>;

}  // namespace malab
