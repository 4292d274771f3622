#include "unite/train/adam.hpp"

#include <cmath>

#include "unite/error.hpp"

namespace unite::train {

void adam_step(ad::ParameterSet& params, const ad::GradientMap& grads, AdamMoments& moments, const AdamConfig& config,
               std::size_t step_index) {
  if (step_index < 1) throw ContractError("adam_step: step_index counts from 1");
  if (!(config.learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  for (const auto& [name, g] : grads) {
    if (!g.all_finite()) throw NumericalError("adam_step: non-finite gradient for '" + name + "'");
  }
  const double t = static_cast<double>(step_index);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  for (const auto& [name, g] : grads) {
    if (!params.trainable(name)) continue;
    ad::Tensor& p = params.at(name);
    if (!p.same_shape(g)) throw ShapeError("adam_step: gradient shape differs for '" + name + "'");
    auto [m_it, m_new] = moments.first.try_emplace(name, ad::Tensor(g.shape()));
    auto [v_it, v_new] = moments.second.try_emplace(name, ad::Tensor(g.shape()));
    ad::Tensor& m = m_it->second;
    ad::Tensor& v = v_it->second;
    for (std::size_t i = 0; i < g.size(); ++i) {
      m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g[i];
      v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g[i] * g[i];
      p[i] -= config.learning_rate * ((m[i] / c1) / (std::sqrt(v[i] / c2) + config.epsilon) + config.weight_decay * p[i]);
    }
  }
}

double clip_global_norm(ad::GradientMap& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, g] : grads)
    for (double x : g.data()) sq += x * x;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double factor = max_norm / norm;
    for (auto& [name, g] : grads)
      for (double& x : g.data()) x *= factor;
  }
  return norm;
}

}  // namespace unite::train
