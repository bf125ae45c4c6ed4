// Reverse-mode differentiation tape.
//
// Every op appends one node holding its output and a closure that maps the
// output gradient onto the gradients of its inputs. backward() walks the nodes
// in exact reverse order of creation, so accumulation order is fixed by the
// forward pass.
#pragma once

#include <deque>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "luke/numerics/tensor.hpp"

namespace luke {

template <typename T>
class Tape;

template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return tape->value(id); }
  const Shape& shape() const { return value().shape(); }
};

template <typename T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Tensor<T>& grad_out)>;
  using GradientHook = std::function<void(const std::string&, Tensor<T>&)>;

  explicit Tape(bool record_gradients = true) : recording_(record_gradients) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }
  std::size_t size() const { return nodes_.size(); }

  Var<T> constant(Tensor<T> value) {
    Node node;
    node.owned = std::move(value);
    return append(std::move(node));
  }

  // Leaf bound to an externally owned parameter. The tensor must outlive the
  // tape and stay unmodified until backward() is done. Registering the same
  // name twice returns the existing leaf.
  Var<T> parameter(const std::string& name, const Tensor<T>& value) {
    if (auto it = params_.find(name); it != params_.end()) {
      return Var<T>{this, it->second};
    }
    Node node;
    node.ref = &value;
    node.needs_grad = recording_;
    node.param = name;
    Var<T> v = append(std::move(node));
    params_.emplace(name, v.id);
    return v;
  }

  // Appends an op output. The closure is kept only if some input needs a
  // gradient and the tape is recording.
  Var<T> push(Tensor<T> value, std::initializer_list<Var<T>> inputs,
              Backward backward) {
    return push(std::move(value), std::vector<Var<T>>(inputs), std::move(backward));
  }

  Var<T> push(Tensor<T> value, const std::vector<Var<T>>& inputs,
              Backward backward) {
    if (check_finite_mode() && !value.all_finite()) {
      throw NonFiniteError("non-finite value produced at tape node " +
                           std::to_string(nodes_.size()));
    }
    Node node;
    node.owned = std::move(value);
    if (recording_) {
      for (const auto& in : inputs) {
        if (nodes_[in.id].needs_grad) node.needs_grad = true;
      }
      if (node.needs_grad) node.backward = std::move(backward);
    }
    return append(std::move(node));
  }

  const Tensor<T>& value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.ref ? *n.ref : n.owned;
  }

  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }

  // Zero-initialized on first access.
  Tensor<T>& grad(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.has_grad) {
      n.grad = Tensor<T>(value(id).shape());
      n.has_grad = true;
    }
    return n.grad;
  }

  void accumulate(std::size_t id, const Tensor<T>& g) {
    if (!nodes_[id].needs_grad) return;
    Tensor<T>& dst = grad(id);
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
  }

  void backward(Var<T> loss) {
    if (!recording_) throw std::logic_error("backward() on a non-recording tape");
    if (loss.value().size() != 1) {
      throw DimensionError("backward() needs a scalar loss, got " +
                           shape_str(loss.shape()));
    }
    grad(loss.id).fill(T{1});
    visit_order_.clear();
    for (std::size_t id = loss.id + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (!n.has_grad) continue;
      visit_order_.push_back(id);
      if (n.backward) n.backward(*this, n.grad);
    }
  }

  // Node ids in the order the last backward() visited them.
  const std::vector<std::size_t>& visit_order() const { return visit_order_; }

  // Applied to every parameter gradient as it is read out. Used to inject
  // faults when exercising the gradient checker.
  void set_gradient_hook(GradientHook hook) { hook_ = std::move(hook); }

  std::map<std::string, Tensor<T>> parameter_gradients() {
    std::map<std::string, Tensor<T>> out;
    for (const auto& [name, id] : params_) {
      Tensor<T> g = nodes_[id].has_grad ? nodes_[id].grad
                                        : Tensor<T>(value(id).shape());
      if (hook_) hook_(name, g);
      out.emplace(name, std::move(g));
    }
    return out;
  }

 private:
  struct Node {
    Tensor<T> owned;
    const Tensor<T>* ref = nullptr;
    Tensor<T> grad;
    bool has_grad = false;
    bool needs_grad = false;
    Backward backward;
    std::string param;
  };

  Var<T> append(Node node) {
    nodes_.push_back(std::move(node));
    return Var<T>{this, nodes_.size() - 1};
  }

  bool recording_;
  std::deque<Node> nodes_;
  std::map<std::string, std::size_t> params_;
  std::vector<std::size_t> visit_order_;
  GradientHook hook_;
};

}  // namespace luke
