#include "densepillars/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace dpp {

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) {
    if (d < 0) throw ConfigError("negative dimension in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill)
    : shape_(std::move(shape)), data_(static_cast<std::size_t>(shape_numel(shape_)), fill) {}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_numel(shape_) != static_cast<std::int64_t>(data_.size())) {
    throw ConfigError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                      shape_str(shape_));
  }
}

template <typename T>
void Tensor<T>::fill(T v) {
  std::fill(data_.begin(), data_.end(), v);
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
  if (shape_numel(shape) != numel()) {
    throw ConfigError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  return Tensor(std::move(shape), data_);
}

template <typename T>
bool Tensor<T>::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
}

template <typename T>
Tensor<T>& Node<T>::grad_buffer() {
  if (!has_grad) {
    grad = Tensor<T>(value.shape());
    has_grad = true;
  }
  return grad;
}

namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

bool grad_enabled() noexcept { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <typename T>
Var<T>::Var(Tensor<T> value, bool requires_grad) : node_(std::make_shared<Node<T>>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

template <typename T>
Var<T> Var<T>::from_op(Tensor<T> value, std::vector<Var> parents, BackwardFn<T> fn) {
  Var out(std::move(value), false);
  if (!g_grad_enabled) return out;
  bool any = std::any_of(parents.begin(), parents.end(), [](const Var& p) { return p.requires_grad(); });
  if (!any) return out;
  out.node_->requires_grad = true;
  out.node_->parents.reserve(parents.size());
  for (auto& p : parents) out.node_->parents.push_back(p.node_);
  out.node_->backward_fn = std::move(fn);
  return out;
}

template <typename T>
void Var<T>::zero_grad() {
  node_->grad = Tensor<T>();
  node_->has_grad = false;
}

template <typename T>
void backward(const Var<T>& root) {
  if (!root.defined() || !root.requires_grad()) return;
  if (root.numel() != 1) throw ConfigError("backward() needs a scalar root, got " + shape_str(root.shape()));

  // Iterative post-order DFS gives a topological order (parents before children).
  // Owning pointers: releasing a closure may drop the last other reference.
  std::vector<std::shared_ptr<Node<T>>> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<std::shared_ptr<Node<T>>, std::size_t>> stack{{root.node(), 0}};
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      std::shared_ptr<Node<T>> p = node->parents[next++];
      if (p->requires_grad && seen.insert(p.get()).second) stack.push_back({std::move(p), 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->grad_buffer()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = it->get();
    if (!node->backward_fn) continue;
    if (node->has_grad) node->backward_fn(*node);
    node->backward_fn = nullptr;
    node->parents.clear();
    node->grad = Tensor<T>();
    node->has_grad = false;
  }
}

template class Tensor<float>;
template class Tensor<double>;
template struct Node<float>;
template struct Node<double>;
template class Var<float>;
template class Var<double>;
template void backward<float>(const Var<float>&);
template void backward<double>(const Var<double>&);

}  // namespace dpp
