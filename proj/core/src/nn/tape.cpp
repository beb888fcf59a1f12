#include "pddpm/nn/tape.hpp"

#include "pddpm/error.hpp"

namespace pddpm::nn {

Var Tape::input(Tensor value) {
  Node node;
  activation_elements_ += value.size();
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::parameter(const std::string& name, const Tensor& value) {
  Node node;
  node.external = &value;
  node.param_name = name;
  node.needs_grad = grad_enabled_;
  nodes_.push_back(std::move(node));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::record(Tensor value, std::vector<int> inputs, BackwardFn backward) {
  Node node;
  for (int in : inputs) {
    if (in < 0 || in >= static_cast<int>(nodes_.size())) throw ArgumentError("tape: invalid input handle");
    node.needs_grad = node.needs_grad || nodes_[static_cast<std::size_t>(in)].needs_grad;
  }
  activation_elements_ += value.size();
  node.value = std::move(value);
  node.inputs = std::move(inputs);
  if (node.needs_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

const Tensor& Tape::value(int id) const {
  const Node& node = nodes_.at(static_cast<std::size_t>(id));
  return node.external ? *node.external : node.value;
}

Tensor& Tape::grad(int id) {
  Node& node = nodes_.at(static_cast<std::size_t>(id));
  if (node.grad.empty()) node.grad = Tensor(value(id).shape(), 0.0f);
  return node.grad;
}

Gradients Tape::backward(Var loss, const ParamStore& params, float seed) {
  if (nodes_.empty()) throw ArgumentError("backward: empty tape");
  Tensor seed_tensor(value(loss).shape(), seed);
  return backward(loss, params, seed_tensor);
}

Gradients Tape::backward(Var loss, const ParamStore& params, const Tensor& seed) {
  if (nodes_.empty()) throw ArgumentError("backward: empty tape");
  if (!loss.valid() || loss.id >= static_cast<int>(nodes_.size())) throw ArgumentError("backward: invalid loss handle");
  if (seed.shape() != value(loss).shape()) {
    throw ShapeError("backward: seed " + shape_str(seed.shape()) + " vs loss " + shape_str(value(loss).shape()));
  }
  for (auto& node : nodes_) node.grad = Tensor();
  grad(loss.id) = seed;

  for (int id = loss.id; id >= 0; --id) {
    Node& node = nodes_[static_cast<std::size_t>(id)];
    if (!node.backward || node.grad.empty()) continue;
    node.backward(*this, id);
  }

  Gradients out;
  for (const auto& entry : params.entries()) out.emplace(entry.name, Tensor(entry.value.shape(), 0.0f));
  for (auto& node : nodes_) {
    if (node.param_name.empty() || node.grad.empty()) continue;
    auto it = out.find(node.param_name);
    if (it == out.end()) continue;
    auto dst = it->second.data();
    auto src = node.grad.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }
  return out;
}

}  // namespace pddpm::nn
