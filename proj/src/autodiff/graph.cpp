#include "unite/autodiff/graph.hpp"

#include <algorithm>
#include <cmath>

#include "unite/error.hpp"

namespace unite::ad {

void ParameterSet::add(const std::string& name, Tensor value, bool trainable) {
  if (entries_.contains(name)) throw ContractError("parameter '" + name + "' already exists");
  entries_.emplace(name, Entry{std::move(value), trainable});
}

const Tensor& ParameterSet::at(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ContractError("unknown parameter '" + name + "'");
  return it->second.value;
}

Tensor& ParameterSet::at(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ContractError("unknown parameter '" + name + "'");
  return it->second.value;
}

bool ParameterSet::trainable(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ContractError("unknown parameter '" + name + "'");
  return it->second.trainable;
}

void ParameterSet::set_trainable(const std::string& name, bool trainable) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ContractError("unknown parameter '" + name + "'");
  it->second.trainable = trainable;
}

std::vector<std::string> ParameterSet::names() const {
  std::vector<std::string> out;
  for (const auto& [name, e] : entries_) out.push_back(name);
  return out;
}

std::vector<std::string> ParameterSet::trainable_names() const {
  std::vector<std::string> out;
  for (const auto& [name, e] : entries_)
    if (e.trainable) out.push_back(name);
  return out;
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, e] : entries_) n += e.value.size();
  return n;
}

bool operator==(const ParameterSet::Entry& a, const ParameterSet::Entry& b) {
  return a.trainable == b.trainable && a.value == b.value;
}

bool operator==(const ParameterSet& a, const ParameterSet& b) { return a.entries_ == b.entries_; }

Scope::Scope(Tape& tape, const ParameterSet& params, const Bindings& bindings)
    : tape_(tape), params_(params), bindings_(bindings) {}

Var Scope::param(const std::string& name) {
  if (auto it = cache_.find(name); it != cache_.end()) return it->second;
  const Tensor& value = params_.at(name);
  Var v = params_.trainable(name) ? tape_.parameter(name, value) : tape_.constant(value);
  cache_.emplace(name, v);
  return v;
}

Var Scope::input(const std::string& name) {
  const std::string key = "input:" + name;
  if (auto it = cache_.find(key); it != cache_.end()) return it->second;
  auto it = bindings_.find(name);
  if (it == bindings_.end()) throw ContractError("graph input '" + name + "' is not bound");
  Var v = tape_.input(name, it->second);
  cache_.emplace(key, v);
  return v;
}

std::map<std::string, Tensor> evaluate(const Graph& graph, const Bindings& bindings) {
  Tape tape;
  Scope scope(tape, graph.parameters, bindings);
  std::map<std::string, Tensor> out;
  for (auto& [name, var] : graph.body(scope)) out.emplace(name, var.value());
  return out;
}

GradientMap gradient(const Graph& graph, const Bindings& bindings, const std::string& scalar_output) {
  Tape tape;
  Scope scope(tape, graph.parameters, bindings);
  auto outputs = graph.body(scope);
  auto it = outputs.find(scalar_output);
  if (it == outputs.end()) throw ContractError("graph has no output '" + scalar_output + "'");
  GradientMap grads = tape.backward(it->second);
  // Trainable parameters the body never touched still get a (zero) entry.
  for (const std::string& name : graph.parameters.trainable_names()) {
    if (!grads.contains(name)) grads.emplace(name, Tensor(graph.parameters.at(name).shape()));
  }
  return grads;
}

GradientCheckReport check_gradient(const Graph& graph, const Bindings& bindings, const std::string& scalar_output,
                                   double step, double tolerance) {
  if (!(step > 0.0)) throw ContractError("check_gradient: step must be positive");
  GradientCheckReport report;
  const std::vector<std::string> names = graph.parameters.trainable_names();
  if (names.empty()) return report;

  const GradientMap analytic = gradient(graph, bindings, scalar_output);
  Graph probe = graph;
  auto value_at = [&]() { return evaluate(probe, bindings).at(scalar_output).item(); };

  for (const std::string& name : names) {
    Tensor& p = probe.parameters.at(name);
    const Tensor& g = analytic.at(name);
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double saved = p[i];
      p[i] = saved + step;
      const double up = value_at();
      p[i] = saved - step;
      const double down = value_at();
      p[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double denom = std::max({std::abs(g[i]), std::abs(numeric), 1e-6});
      const double rel = std::abs(g[i] - numeric) / denom;
      ++report.checked;
      if (rel > report.max_rel_error || report.checked == 1) {
        report.max_rel_error = std::max(report.max_rel_error, rel);
        if (rel >= report.worst.rel_error) report.worst = {name, i, g[i], numeric, rel};
      }
    }
  }
  report.passed = report.max_rel_error < tolerance;
  return report;
}

}  // namespace unite::ad
