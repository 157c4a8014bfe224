#include "flexclip/tape.hpp"

#include <sstream>

#include "flexclip/errors.hpp"

namespace flexclip {

Parameter::Parameter(std::string n, Matrix v)
    : name(std::move(n)),
      value(std::move(v)),
      grad(value.rows(), value.cols()),
      adam_m(value.rows(), value.cols()),
      adam_v(value.rows(), value.cols()) {}

void Parameter::zero_grad() { grad.fill(Real(0)); }

const Matrix& Var::value() const { return tape_->value(id_); }

Real Var::scalar() const {
  const Matrix& v = value();
  if (v.size() != 1) throw ContractError("scalar() on non-scalar node " + shape_string(v));
  return v(0, 0);
}

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, false, nullptr, {}});
  return {this, nodes_.size() - 1};
}

Var Tape::parameter(Parameter& p) {
  nodes_.push_back(Node{p.value, {}, true, &p, {}});
  return {this, nodes_.size() - 1};
}

Var Tape::record(Matrix value, bool needs_grad, BackwardFn backward) {
  nodes_.push_back(Node{std::move(value), {}, needs_grad, nullptr,
                        needs_grad ? std::move(backward) : BackwardFn{}});
  return {this, nodes_.size() - 1};
}

void Tape::accumulate(std::size_t id, const Matrix& g) {
  Node& node = nodes_[id];
  if (!node.needs_grad) return;
  if (!g.same_shape(node.value)) {
    throw DimensionError("gradient " + shape_string(g) + " does not match node " +
                         shape_string(node.value));
  }
  if (node.grad.empty() && !node.value.empty()) {
    node.grad = g;
    return;
  }
  auto dst = node.grad.values();
  auto src = g.values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

void Tape::backward(Var loss) {
  if (&loss.tape() != this) throw ContractError("loss was recorded on a different tape");
  const Matrix& lv = nodes_[loss.id()].value;
  if (lv.rows() != 1 || lv.cols() != 1) {
    throw ContractError("backward() needs a scalar loss, got " + shape_string(lv));
  }
  accumulate(loss.id(), Matrix(1, 1, Real(1)));
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.needs_grad || node.grad.empty()) continue;
    if (node.backward) {
      // The callback may append to nodes_ only through accumulate(), which
      // never reallocates, so holding `node` is safe.
      const Matrix g = std::move(node.grad);
      node.backward(*this, g);
    } else if (node.param != nullptr) {
      Parameter& p = *node.param;
      if (p.grad.empty()) p.grad = Matrix(p.value.rows(), p.value.cols());
      auto dst = p.grad.values();
      auto src = node.grad.values();
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
    }
  }
  clear();
}

}  // namespace flexclip
