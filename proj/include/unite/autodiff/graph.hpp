#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "unite/autodiff/tape.hpp"

namespace unite::ad {

/// Named tensors owned by a model. Frozen entries enter graphs as constants
/// and therefore never receive adjoints.
class ParameterSet {
 public:
  struct Entry {
    Tensor value;
    bool trainable = true;
  };

  void add(const std::string& name, Tensor value, bool trainable = true);
  bool contains(const std::string& name) const { return entries_.contains(name); }
  const Tensor& at(const std::string& name) const;
  Tensor& at(const std::string& name);
  bool trainable(const std::string& name) const;
  void set_trainable(const std::string& name, bool trainable);

  const std::map<std::string, Entry>& entries() const noexcept { return entries_; }
  std::vector<std::string> names() const;
  std::vector<std::string> trainable_names() const;
  std::size_t scalar_count() const;
  bool empty() const noexcept { return entries_.empty(); }

  friend bool operator==(const ParameterSet& a, const ParameterSet& b);

 private:
  std::map<std::string, Entry> entries_;
};

bool operator==(const ParameterSet::Entry& a, const ParameterSet::Entry& b);

using Bindings = std::map<std::string, Tensor>;

/// Registers parameters and inputs on a tape lazily, once per name.
class Scope {
 public:
  Scope(Tape& tape, const ParameterSet& params, const Bindings& bindings = {});

  Var param(const std::string& name);
  Var input(const std::string& name);
  Tape& tape() noexcept { return tape_; }
  const ParameterSet& parameters() const noexcept { return params_; }

 private:
  Tape& tape_;
  const ParameterSet& params_;
  const Bindings& bindings_;
  std::map<std::string, Var> cache_;
};

/// A differentiable program over a parameter registry. The body is re-run on
/// a fresh tape for every evaluation; it must be a pure function of the
/// parameters and bindings (random draws come from seeds it captures).
struct Graph {
  using Body = std::function<std::map<std::string, Var>(Scope&)>;

  ParameterSet parameters;
  Body body;
};

std::map<std::string, Tensor> evaluate(const Graph& graph, const Bindings& bindings);

/// Reverse-mode adjoints of a rank-0 output w.r.t. every trainable parameter.
GradientMap gradient(const Graph& graph, const Bindings& bindings, const std::string& scalar_output);

struct GradientCheckReport {
  struct Entry {
    std::string parameter;
    std::size_t index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    double rel_error = 0.0;
  };

  double max_rel_error = 0.0;
  std::size_t checked = 0;
  Entry worst;
  bool passed = true;

  bool empty() const noexcept { return checked == 0; }
};

/// Compares reverse-mode adjoints against central differences for every
/// trainable scalar. Relative error is |a - n| / max(|a|, |n|, 1e-6).
GradientCheckReport check_gradient(const Graph& graph, const Bindings& bindings, const std::string& scalar_output,
                                   double step, double tolerance);

}  // namespace unite::ad
