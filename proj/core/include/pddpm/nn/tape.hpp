#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "pddpm/nn/param_store.hpp"
#include "pddpm/tensor.hpp"

namespace pddpm::nn {

class Tape;

// Handle to a value recorded on a Tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

using BackwardFn = std::function<void(Tape&, int node)>;

// Records a forward computation for reverse-mode differentiation. Nodes are
// appended in execution order; backward visits them in exact reverse.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  // With gradients disabled, parameters are recorded as constants and no
  // backward closures are kept (inference mode).
  void set_grad_enabled(bool enabled) { grad_enabled_ = enabled; }
  bool grad_enabled() const { return grad_enabled_; }

  // Constant input; never receives a gradient.
  Var input(Tensor value);
  // Parameter leaf. The tensor is referenced, not copied, and must outlive the tape.
  Var parameter(const std::string& name, const Tensor& value);
  Var parameter(const ParamStore& params, const std::string& name) {
    return parameter(name, params.at(name));
  }

  // Used by op implementations.
  Var record(Tensor value, std::vector<int> inputs, BackwardFn backward);

  const Tensor& value(Var v) const { return value(v.id); }
  const Tensor& value(int id) const;
  bool needs_grad(int id) const { return nodes_.at(static_cast<std::size_t>(id)).needs_grad; }
  const std::vector<int>& inputs(int id) const { return nodes_.at(static_cast<std::size_t>(id)).inputs; }
  // Gradient accumulator for a node, zero-initialized on first access.
  Tensor& grad(int id);

  bool empty() const { return nodes_.empty(); }
  std::size_t node_count() const { return nodes_.size(); }

  // Total elements held by non-parameter nodes. After a forward pass this is
  // the peak activation footprint of the step (the tape keeps every value).
  std::size_t activation_elements() const { return activation_elements_; }

  // Seeds d(loss) = seed and propagates. Returns a gradient for every entry
  // of `params` (zero when the parameter was not touched).
  Gradients backward(Var loss, const ParamStore& params, float seed = 1.0f);
  // Same, with an explicit seed tensor shaped like the loss.
  Gradients backward(Var loss, const ParamStore& params, const Tensor& seed);

 private:
  struct Node {
    Tensor value;
    const Tensor* external = nullptr;
    std::string param_name;
    std::vector<int> inputs;
    BackwardFn backward;
    Tensor grad;
    bool needs_grad = false;
  };

  std::vector<Node> nodes_;
  std::size_t activation_elements_ = 0;
  bool grad_enabled_ = true;
};

}  // namespace pddpm::nn
