#pragma once

#include <span>

#include "unite/autodiff/ops.hpp"
#include "unite/autodiff/tensor.hpp"

// ARD radial-basis kernel k(v, w) = exp(-1/2 sum_k ((v_k - w_k) / l_k)^2).
// No output scale: the prior signal variance is fixed at 1.
namespace unite::kernel {

inline constexpr double kDefaultJitter = 1e-6;
inline constexpr double kMaxJitter = 1e-2;

double rbf(std::span<const double> v, std::span<const double> w, std::span<const double> lengthscales);

/// Entry (i, j) = rbf(V_i, W_j) over the rows of V and W.
ad::Tensor kernel_matrix(const ad::Tensor& V, const ad::Tensor& W, std::span<const double> lengthscales);
ad::Tensor add_jitter(const ad::Tensor& K, double jitter);

struct Factorization {
  ad::Tensor lower;
  double jitter = 0.0;
};

/// Cholesky of K + jitter I, doubling the jitter from `initial` up to
/// kMaxJitter. Throws NumericalError "irrecoverably singular kernel".
Factorization stable_cholesky(const ad::Tensor& K, double initial = kDefaultJitter);

// Differentiable forms. log_lengthscale is [1, D].
ad::Var kernel_matrix(ad::Var V, ad::Var W, ad::Var log_lengthscale);
/// Inputs divided by their lengthscales, so that K = exp(-sqdist / 2).
ad::Var scale_inputs(ad::Var X, ad::Var log_lengthscale);
ad::Var kernel_from_scaled(ad::Var Vs, ad::Var Ws);

struct GraphFactorization {
  ad::Var lower;
  double jitter = 0.0;
};

/// Recorded Cholesky of K + jitter I with the same escalation rule.
GraphFactorization stable_cholesky(ad::Var K, double initial = kDefaultJitter);

}  // namespace unite::kernel
