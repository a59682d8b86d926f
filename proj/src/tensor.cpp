#include "malab/tensor.hpp"

#include <unordered_set>

namespace malab {

std::string shape_to_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

template <typename T>
GradTape<T>::GradTape(const Tensor<T>& loss) : root_(loss.node()) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward() requires a scalar loss, got shape " +
                        (loss.defined() ? shape_to_string(loss.shape()) : "<undefined>"));
  }
  // Iterative post-order DFS; reversing it gives reverse topological order.
  std::unordered_set<detail::Node<T>*> visited;
  std::vector<std::pair<detail::Node<T>*, std::size_t>> stack;
  std::vector<detail::Node<T>*> post;
  stack.emplace_back(root_.get(), 0);
  visited.insert(root_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node<T>* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      post.push_back(node);
      stack.pop_back();
    }
  }
  order_.assign(post.rbegin(), post.rend());
}

template <typename T>
void GradTape<T>::replay() {
  if (!root_->requires_grad) return;
  root_->ensure_grad();
  root_->grad[0] += T(1);
  for (detail::Node<T>* node : order_) {
    if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
  }
}

template class GradTape<float>;
template class GradTape<double>;

}  // namespace malab
