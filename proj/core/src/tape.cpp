#include "advsim/tape.hpp"

#include "advsim/error.hpp"
#include "advsim/ops.hpp"

namespace advsim {

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Leaf: return "leaf";
    case OpKind::Scale: return "scale";
    case OpKind::Conv2d: return "conv2d";
    case OpKind::AddBias: return "add_bias";
    case OpKind::Relu: return "relu";
    case OpKind::MaxPool2: return "maxpool2";
    case OpKind::Dense: return "dense";
    case OpKind::Softmax: return "softmax";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::CeLoss: return "ce_loss";
    case OpKind::BceLoss: return "bce_loss";
    case OpKind::Sum: return "sum";
  }
  return "unknown";
}

const Tensor& Var::value() const { return tape->value(*this); }

Var Tape::leaf(Tensor value, bool requires_grad) {
  OpRecord r;
  r.kind = OpKind::Leaf;
  r.value = std::move(value);
  r.requires_grad = requires_grad;
  records_.push_back(std::move(r));
  return {this, records_.size() - 1};
}

Var Tape::push(OpRecord record) {
  for (std::size_t in : record.inputs) {
    if (in >= records_.size()) throw ContractError("tape: operand recorded on a different tape");
    record.requires_grad = record.requires_grad || records_[in].requires_grad;
  }
  evaluate(record);
  records_.push_back(std::move(record));
  return {this, records_.size() - 1};
}

void Tape::evaluate(OpRecord& r) const {
  auto in = [&](std::size_t i) -> const Tensor& { return records_[r.inputs[i]].value; };
  switch (r.kind) {
    case OpKind::Leaf: return;
    case OpKind::Scale: r.value = ops::scale(in(0), r.factor); return;
    case OpKind::Conv2d: r.value = ops::conv2d(in(0), in(1), r.stride); return;
    case OpKind::AddBias: r.value = ops::add_bias(in(0), in(1)); return;
    case OpKind::Relu: r.value = ops::relu(in(0)); return;
    case OpKind::MaxPool2: r.value = ops::maxpool2(in(0), &r.saved); return;
    case OpKind::Dense: r.value = ops::dense(in(0), in(1), in(2)); return;
    case OpKind::Softmax: r.value = ops::softmax(in(0)); return;
    case OpKind::Sigmoid: r.value = ops::sigmoid(in(0)); return;
    case OpKind::CeLoss: r.value = Tensor({1}, ops::ce_loss(in(0), r.constant)); return;
    case OpKind::BceLoss: r.value = Tensor({1}, ops::bce_loss(in(0), r.constant)); return;
    case OpKind::Sum: {
      double s = 0.0;
      for (double v : in(0).data()) s += v;
      r.value = Tensor({1}, s);
      return;
    }
  }
}

void Tape::backward(Var loss) {
  if (value(loss).size() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " + shape_string(value(loss).shape()));
  }
  backward(loss, Tensor(value(loss).shape(), 1.0));
}

namespace {
void accumulate(std::optional<Tensor>& slot, const Tensor& g) {
  if (!slot) {
    slot = g;
    return;
  }
  for (std::size_t i = 0; i < g.size(); ++i) (*slot)[i] += g[i];
}
}  // namespace

void Tape::backward(Var output, const Tensor& seed) {
  if (output.tape != this) throw ContractError("backward: variable belongs to another tape");
  if (seed.shape() != value(output).shape()) throw DimensionError("backward: seed shape does not match output");
  grads_.assign(records_.size(), std::nullopt);
  grads_[output.id] = seed;

  for (std::size_t id = output.id + 1; id-- > 0;) {
    const OpRecord& r = records_[id];
    if (r.kind == OpKind::Leaf || !r.requires_grad || !grads_[id]) continue;
    const Tensor& g = *grads_[id];
    auto needs = [&](std::size_t i) { return records_[r.inputs[i]].requires_grad; };
    auto in = [&](std::size_t i) -> const Tensor& { return records_[r.inputs[i]].value; };
    auto slot = [&](std::size_t i) -> std::optional<Tensor>& { return grads_[r.inputs[i]]; };

    switch (r.kind) {
      case OpKind::Leaf: break;
      case OpKind::Scale: accumulate(slot(0), ops::scale(g, r.factor)); break;
      case OpKind::Conv2d:
        if (needs(0)) accumulate(slot(0), ops::conv2d_backward_input(g, in(1), r.stride, in(0).shape()));
        if (needs(1)) accumulate(slot(1), ops::conv2d_backward_kernel(in(0), g, r.stride, in(1).shape()));
        break;
      case OpKind::AddBias:
        if (needs(0)) accumulate(slot(0), g);
        if (needs(1)) {
          Tensor db(in(1).shape());
          const std::size_t c = db.size();
          for (std::size_t i = 0; i < g.size(); ++i) db[i % c] += g[i];
          accumulate(slot(1), db);
        }
        break;
      case OpKind::Relu: {
        Tensor dx = g;
        const Tensor& x = in(0);
        for (std::size_t i = 0; i < dx.size(); ++i) {
          if (x[i] <= 0.0) dx[i] = 0.0;
        }
        accumulate(slot(0), dx);
        break;
      }
      case OpKind::MaxPool2: {
        Tensor dx(in(0).shape());
        for (std::size_t o = 0; o < g.size(); ++o) dx[r.saved[o]] += g[o];
        accumulate(slot(0), dx);
        break;
      }
      case OpKind::Dense: {
        const Tensor& x = in(0);
        const Tensor& w = in(1);
        const std::size_t n = w.dim(0), m = w.dim(1);
        if (needs(0)) {
          Tensor dx(x.shape());
          for (std::size_t i = 0; i < n; ++i) {
            const double* row = w.data().data() + i * m;
            double acc = 0.0;
            for (std::size_t j = 0; j < m; ++j) acc += row[j] * g[j];
            dx[i] = acc;
          }
          accumulate(slot(0), dx);
        }
        if (needs(1)) {
          Tensor dw(w.shape());
          double* d = dw.data().data();
          for (std::size_t i = 0; i < n; ++i) {
            const double xi = x[i];
            if (xi == 0.0) continue;
            for (std::size_t j = 0; j < m; ++j) d[i * m + j] = xi * g[j];
          }
          accumulate(slot(1), dw);
        }
        if (needs(2)) accumulate(slot(2), g);
        break;
      }
      case OpKind::Softmax: {
        const Tensor& p = r.value;
        double inner = 0.0;
        for (std::size_t i = 0; i < p.size(); ++i) inner += g[i] * p[i];
        Tensor dx(p.shape());
        for (std::size_t i = 0; i < p.size(); ++i) dx[i] = p[i] * (g[i] - inner);
        accumulate(slot(0), dx);
        break;
      }
      case OpKind::Sigmoid: {
        const Tensor& s = r.value;
        Tensor dx(s.shape());
        for (std::size_t i = 0; i < s.size(); ++i) dx[i] = g[i] * s[i] * (1.0 - s[i]);
        accumulate(slot(0), dx);
        break;
      }
      case OpKind::CeLoss:
        accumulate(slot(0), ops::scale(ops::ce_loss_grad(in(0), r.constant), g[0]));
        break;
      case OpKind::BceLoss:
        accumulate(slot(0), ops::scale(ops::bce_loss_grad(in(0), r.constant), g[0]));
        break;
      case OpKind::Sum: accumulate(slot(0), Tensor(in(0).shape(), g[0])); break;
    }
  }
}

Tensor Tape::grad(Var v) const {
  if (v.id < grads_.size() && grads_[v.id]) return *grads_[v.id];
  return Tensor(value(v).shape());
}

void Tape::set_leaf(Var leaf, Tensor value) {
  OpRecord& r = records_.at(leaf.id);
  if (r.kind != OpKind::Leaf) throw ContractError("set_leaf: not a leaf");
  if (value.shape() != r.value.shape()) throw DimensionError("set_leaf: shape mismatch");
  r.value = std::move(value);
}

const Tensor& Tape::replay(Var output) {
  for (std::size_t id = 0; id <= output.id; ++id) evaluate(records_[id]);
  grads_.clear();
  return records_[output.id].value;
}

namespace {
Var unary(Var x, OpKind kind) {
  OpRecord r;
  r.kind = kind;
  r.inputs = {x.id};
  return x.tape->push(std::move(r));
}

void same_tape(Var a, Var b) {
  if (a.tape != b.tape) throw ContractError("operands recorded on different tapes");
}
}  // namespace

Var scale(Var x, double factor) {
  OpRecord r;
  r.kind = OpKind::Scale;
  r.inputs = {x.id};
  r.factor = factor;
  return x.tape->push(std::move(r));
}

Var conv2d(Var input, Var kernel, std::size_t stride) {
  same_tape(input, kernel);
  OpRecord r;
  r.kind = OpKind::Conv2d;
  r.inputs = {input.id, kernel.id};
  r.stride = stride;
  return input.tape->push(std::move(r));
}

Var add_bias(Var input, Var bias) {
  same_tape(input, bias);
  OpRecord r;
  r.kind = OpKind::AddBias;
  r.inputs = {input.id, bias.id};
  return input.tape->push(std::move(r));
}

Var relu(Var x) { return unary(x, OpKind::Relu); }
Var maxpool2(Var x) { return unary(x, OpKind::MaxPool2); }
Var softmax(Var logits) { return unary(logits, OpKind::Softmax); }
Var sigmoid(Var x) { return unary(x, OpKind::Sigmoid); }
Var sum(Var x) { return unary(x, OpKind::Sum); }

Var dense(Var input, Var weights, Var bias) {
  same_tape(input, weights);
  same_tape(input, bias);
  OpRecord r;
  r.kind = OpKind::Dense;
  r.inputs = {input.id, weights.id, bias.id};
  return input.tape->push(std::move(r));
}

Var ce_loss(Var probs, const Tensor& target) {
  OpRecord r;
  r.kind = OpKind::CeLoss;
  r.inputs = {probs.id};
  r.constant = target;
  return probs.tape->push(std::move(r));
}

Var bce_loss(Var probs, const Tensor& target) {
  OpRecord r;
  r.kind = OpKind::BceLoss;
  r.inputs = {probs.id};
  r.constant = target;
  return probs.tape->push(std::move(r));
}

Tensor grad_wrt_input(Tape& tape, Var loss, Var input) {
  if (!tape.record(input.id).requires_grad) throw ContractError("grad_wrt_input: input leaf does not require grad");
  tape.backward(loss);
  return tape.grad(input);
}

double finite_diff_coordinate(const std::function<double(const Tensor&)>& loss, const Tensor& x, std::size_t index,
                              double h) {
  if (!(h > 0.0)) throw ContractError("finite_diff_gradient: step must be positive");
  Tensor probe = x;
  probe[index] = x[index] + h;
  const double up = loss(probe);
  probe[index] = x[index] - h;
  const double down = loss(probe);
  return (up - down) / (2.0 * h);
}

Tensor finite_diff_gradient(const std::function<double(const Tensor&)>& loss, const Tensor& x, double h) {
  Tensor g(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) g[i] = finite_diff_coordinate(loss, x, i, h);
  return g;
}

}  // namespace advsim
