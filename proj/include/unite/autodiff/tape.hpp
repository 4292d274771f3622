#pragma once

#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "unite/autodiff/tensor.hpp"

namespace unite::ad {

class Tape;

/// Handle to a node recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Tensor& value() const;
  const Tensor::Shape& shape() const { return value().shape(); }
  bool valid() const noexcept { return tape != nullptr && id >= 0; }
};

/// Per-parameter adjoints, keyed by parameter name.
using GradientMap = std::map<std::string, Tensor>;

/// Define-by-run record of primitive operations. Nodes are appended in
/// evaluation order, so the node list is always a topological order of an
/// acyclic graph.
class Tape {
 public:
  enum class Kind { parameter, input, constant, op };

  /// Accumulates the node's output adjoint into its operands' adjoints.
  using Backward = std::function<void(Tape&, const Tensor& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var parameter(std::string name, Tensor value);
  Var input(std::string name, Tensor value);
  Var constant(Tensor value);

  /// Appends an op node. Rejects non-finite values, naming the node.
  Var record(std::string_view op, Tensor value, std::vector<Var> operands, Backward backward);

  const Tensor& value(int id) const { return nodes_.at(id).value; }
  std::string_view op(int id) const { return nodes_.at(id).op; }
  bool needs_grad(int id) const { return nodes_.at(id).needs_grad; }
  bool needs_grad(Var v) const { return needs_grad(v.id); }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Adjoint buffer of a node, zero-initialised on first touch.
  Tensor& grad(int id);
  Tensor& grad(Var v) { return grad(v.id); }

  /// Reverse sweep from a rank-0 output. Returns adjoints for every
  /// registered parameter (zeros for parameters the output does not reach).
  GradientMap backward(Var output);

  std::vector<std::string> parameter_names() const;

 private:
  struct Node {
    std::string op;
    Kind kind = Kind::op;
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool needs_grad = false;
    Backward backward;
  };

  Var push(Node node);

  std::vector<Node> nodes_;
  std::map<std::string, int> parameters_;
  std::map<std::string, int> inputs_;
};

}  // namespace unite::ad
