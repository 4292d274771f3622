#pragma once

#include <map>
#include <string>

#include "unite/autodiff/graph.hpp"

namespace unite::train {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  /// Decoupled decay: p -= learning_rate * weight_decay * p each step.
  double weight_decay = 0.0;
};

/// First and second moment estimates per parameter.
struct AdamMoments {
  std::map<std::string, ad::Tensor> first;
  std::map<std::string, ad::Tensor> second;
  friend bool operator==(const AdamMoments&, const AdamMoments&) = default;
};

/// One bias-corrected Adam update that descends the objective whose gradient
/// is `grads` (pass the gradient of -ELBO to ascend the ELBO). Parameters
/// without a gradient entry are untouched. step_index counts from 1.
/// Throws NumericalError on a non-finite gradient.
void adam_step(ad::ParameterSet& params, const ad::GradientMap& grads, AdamMoments& moments, const AdamConfig& config,
               std::size_t step_index);

/// Rescales grads in place so their joint Euclidean norm is at most max_norm.
/// Returns the norm before clipping.
double clip_global_norm(ad::GradientMap& grads, double max_norm);

}  // namespace unite::train
