#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <vector>

#include "advsim/tensor.hpp"

namespace advsim {

enum class OpKind {
  Leaf,
  Scale,
  Conv2d,
  AddBias,
  Relu,
  MaxPool2,
  Dense,
  Softmax,
  Sigmoid,
  CeLoss,
  BceLoss,
  Sum,
};

const char* op_name(OpKind kind);

class Tape;

// Handle to a value recorded on a tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
};

// One recorded operation. `constant` holds a non-differentiable operand (loss
// targets); `saved` holds activations reused by the backward pass.
struct OpRecord {
  OpKind kind = OpKind::Leaf;
  std::vector<std::size_t> inputs;
  Tensor value;
  Tensor constant;
  std::vector<std::size_t> saved;
  double factor = 1.0;
  std::size_t stride = 1;
  bool requires_grad = false;
};

// Reverse-mode differentiation tape. Records are appended in evaluation order,
// so every record's inputs precede it.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = false);

  const Tensor& value(Var v) const { return records_.at(v.id).value; }
  const OpRecord& record(std::size_t id) const { return records_.at(id); }
  std::size_t size() const noexcept { return records_.size(); }

  // Propagates `seed` (shaped like `output`) back through the tape. Gradients
  // of earlier backward calls are discarded.
  void backward(Var output, const Tensor& seed);
  // Scalar form; throws ContractError when `loss` is not a single element.
  void backward(Var loss);

  // Gradient of the last backward call w.r.t. `v`; zeros when no path exists.
  Tensor grad(Var v) const;

  // Replaces a leaf value; used together with replay().
  void set_leaf(Var leaf, Tensor value);
  // Recomputes every non-leaf record from the current leaf values and returns
  // the value of `output`.
  const Tensor& replay(Var output);

  Var push(OpRecord record);

 private:
  void evaluate(OpRecord& record) const;

  std::vector<OpRecord> records_;
  std::vector<std::optional<Tensor>> grads_;
};

Var scale(Var x, double factor);
Var conv2d(Var input, Var kernel, std::size_t stride);
Var add_bias(Var input, Var bias);
Var relu(Var x);
Var maxpool2(Var x);
Var dense(Var input, Var weights, Var bias);
Var softmax(Var logits);
Var sigmoid(Var x);
Var ce_loss(Var probs, const Tensor& target);
Var bce_loss(Var probs, const Tensor& target);
Var sum(Var x);

// dJ/dX for a scalar loss recorded on the tape.
Tensor grad_wrt_input(Tape& tape, Var loss, Var input);

// Central differences (J(X + h e_i) - J(X - h e_i)) / 2h for every coordinate.
Tensor finite_diff_gradient(const std::function<double(const Tensor&)>& loss, const Tensor& x, double h = 1e-5);

// Central-difference derivative at `x` along a single coordinate.
double finite_diff_coordinate(const std::function<double(const Tensor&)>& loss, const Tensor& x, std::size_t index,
                              double h = 1e-5);

}  // namespace advsim
