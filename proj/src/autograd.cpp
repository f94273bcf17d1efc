#include "evdeblur/autograd.hpp"

#include <unordered_set>

namespace evdeblur {

namespace {

template <typename T>
std::vector<Node<T>*> topological_order(Node<T>* root) {
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  // Iterative post-order DFS; recurrences can make graphs deep.
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node<T>* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

}  // namespace

template <typename T>
void backward(const Var<T>& root, const Tensor<T>& seed) {
  require(static_cast<bool>(root), "backward: empty root");
  require_same_shape(root.value(), seed, "backward seed");
  if (!root.requires_grad()) return;
  Node<T>* r = root.node().get();
  Tensor<T>& g = r->grad_buffer();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += seed[i];
  auto order = topological_order(r);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

template <typename T>
void backward(const Var<T>& root) {
  require(root.value().size() == 1, "backward: root must be a scalar, got shape " + shape_str(root.shape()));
  backward(root, Tensor<T>(root.shape(), T(1)));
}

template void backward<float>(const Var<float>&);
template void backward<double>(const Var<double>&);
template void backward<float>(const Var<float>&, const Tensor<float>&);
template void backward<double>(const Var<double>&, const Tensor<double>&);

}  // namespace evdeblur
