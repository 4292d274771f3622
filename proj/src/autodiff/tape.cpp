#include "unite/autodiff/tape.hpp"

#include "unite/error.hpp"

namespace unite::ad {

const Tensor& Var::value() const {
  if (!valid()) throw ContractError("use of an unbound Var");
  return tape->value(id);
}

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::parameter(std::string name, Tensor value) {
  if (parameters_.contains(name)) throw ContractError("parameter '" + name + "' registered twice");
  if (!value.all_finite()) throw NumericalError("non-finite value in parameter '" + name + "'");
  Node n;
  n.op = name;
  n.kind = Kind::parameter;
  n.value = std::move(value);
  n.needs_grad = true;
  Var v = push(std::move(n));
  parameters_.emplace(std::move(name), v.id);
  return v;
}

Var Tape::input(std::string name, Tensor value) {
  if (inputs_.contains(name)) throw ContractError("input '" + name + "' bound twice");
  if (!value.all_finite()) throw NumericalError("non-finite value in input '" + name + "'");
  Node n;
  n.op = name;
  n.kind = Kind::input;
  n.value = std::move(value);
  Var v = push(std::move(n));
  inputs_.emplace(std::move(name), v.id);
  return v;
}

Var Tape::constant(Tensor value) {
  if (!value.all_finite()) throw NumericalError("non-finite constant");
  Node n;
  n.op = "constant";
  n.kind = Kind::constant;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::record(std::string_view op, Tensor value, std::vector<Var> operands, Backward backward) {
  if (!value.all_finite()) {
    throw NumericalError("non-finite value produced by node #" + std::to_string(nodes_.size()) + " (" +
                         std::string(op) + ")");
  }
  Node n;
  n.op = std::string(op);
  n.value = std::move(value);
  for (const Var& v : operands) {
    if (v.tape != this) throw ContractError("operand of '" + n.op + "' belongs to another tape");
    n.needs_grad = n.needs_grad || nodes_[v.id].needs_grad;
  }
  if (n.needs_grad) n.backward = std::move(backward);
  return push(std::move(n));
}

Tensor& Tape::grad(int id) {
  Node& n = nodes_.at(id);
  if (!n.has_grad) {
    n.grad = Tensor(n.value.shape());
    n.has_grad = true;
  }
  return n.grad;
}

GradientMap Tape::backward(Var output) {
  if (output.tape != this) throw ContractError("backward output belongs to another tape");
  if (nodes_.at(output.id).value.rank() != 0) {
    throw ContractError("gradient requires a scalar output, node #" + std::to_string(output.id) + " has shape " +
                        shape_string(nodes_[output.id].value.shape()));
  }
  for (Node& n : nodes_) {
    n.has_grad = false;
    n.grad = Tensor();
  }
  grad(output.id).fill(1.0);
  for (int id = output.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.has_grad) continue;
    if (!n.grad.all_finite()) {
      throw NumericalError("non-finite adjoint at node #" + std::to_string(id) + " (" + n.op + ")");
    }
    if (!n.backward) continue;
    const Tensor out_grad = std::move(n.grad);
    n.backward(*this, out_grad);
  }
  GradientMap result;
  for (const auto& [name, id] : parameters_) {
    Node& n = nodes_[id];
    Tensor g = n.has_grad ? n.grad : Tensor(n.value.shape());
    if (!g.all_finite()) throw NumericalError("non-finite gradient for parameter '" + name + "'");
    result.emplace(name, std::move(g));
  }
  return result;
}

std::vector<std::string> Tape::parameter_names() const {
  std::vector<std::string> names;
  for (const auto& [name, id] : parameters_) names.push_back(name);
  return names;
}

}  // namespace unite::ad
