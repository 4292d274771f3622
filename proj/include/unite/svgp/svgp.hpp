#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "unite/autodiff/ops.hpp"
#include "unite/autodiff/tensor.hpp"
#include "unite/kernel/kernel.hpp"

// Sparse variational GP classification with q(u) = N(m, sigma^2 I) over the
// inducing values, m = Z alpha (or a free M-vector), and prior
// p(u) = N(0, K_ZZ).
namespace unite::svgp {

struct VariationalState {
  ad::Tensor Z;      ///< [M, D]
  ad::Tensor alpha;  ///< [D, 1], or [M, 1] with a free mean
  double log_sigma2 = 0.0;
  bool free_mean = false;

  std::size_t inducing_count() const noexcept { return Z.rows(); }
  /// Mean of q(u), [M, 1].
  ad::Tensor mean() const;
};

struct ConditionalGaussian {
  std::vector<double> mean;
  /// Full [n, n] covariance when requested, otherwise empty.
  ad::Tensor covariance;
  /// Marginal variances clamped at 0, and as computed before clamping.
  std::vector<double> variance;
  std::vector<double> raw_variance;
};

struct ElboEstimate {
  double value = 0.0;
  double likelihood_term = 0.0;
  double kl_term = 0.0;
  std::size_t n_samples = 0;
  /// Monte Carlo standard error of likelihood_term.
  double standard_error = 0.0;
};

// Plain evaluation.

/// f | u at the rows of V: mean K_VZ K_ZZ^-1 u, covariance
/// K_VV - K_VZ K_ZZ^-1 K_ZV.
ConditionalGaussian conditional_f_given_u(const ad::Tensor& V, std::span<const double> u, const ad::Tensor& Z,
                                          std::span<const double> lengthscales, bool full_covariance = false,
                                          double jitter = kernel::kDefaultJitter);

/// B reparameterized draws m + sqrt(sigma^2) eps, each an M-vector.
std::vector<std::vector<double>> sample_q_u(const VariationalState& state, std::size_t B, std::uint64_t seed);

/// KL[q(u) || N(0, K_ZZ)] for an already jittered K_ZZ.
double kl_q_p(const VariationalState& state, const ad::Tensor& K_ZZ);

/// log Bernoulli(y | sigmoid(f)) = y f - softplus(f).
double bernoulli_log_lik(int y, double f);

/// Monte Carlo ELBO for fixed latent rows V.
ElboEstimate elbo_fixed(const ad::Tensor& V, std::span<const int> labels, const VariationalState& state,
                        std::span<const double> lengthscales, std::size_t B, double total_count, std::uint64_t seed,
                        double jitter = kernel::kDefaultJitter);

/// k-means centroids (k-means++ seeding, Lloyd iterations). With fewer rows
/// than k, every row is used and the remainder are perturbed copies.
ad::Tensor kmeans(const ad::Tensor& X, std::size_t k, std::uint64_t seed, std::size_t iterations = 50);

// Differentiable pieces.

/// Frozen standard-normal draws driving one ELBO evaluation.
struct ElboNoise {
  ad::Tensor u;  ///< [M, B]
  ad::Tensor f;  ///< [n, B]
  static ElboNoise draw(std::size_t M, std::size_t n, std::size_t B, std::uint64_t seed);
};

ad::Var variational_mean(ad::Var Z, ad::Var alpha, bool free_mean);
/// [M, B] columns m + exp(log_sigma2 / 2) * noise.
ad::Var sample_q_u(ad::Var mean, ad::Var log_sigma2, const ad::Tensor& noise);

struct InducingPrior {
  ad::Var lower;     ///< Cholesky factor of K_ZZ + jitter I
  ad::Var Zs;        ///< inducing rows divided by the lengthscales
  double jitter = 0.0;
};

InducingPrior inducing_prior(ad::Var Z, ad::Var log_lengthscale, double jitter = kernel::kDefaultJitter);

struct ConditionalVars {
  ad::Var mean;      ///< [n, B]
  ad::Var variance;  ///< [n, 1], clamped at 0
};

ConditionalVars conditional(const InducingPrior& prior, ad::Var V, ad::Var log_lengthscale, ad::Var U);

ad::Var kl_q_p(const InducingPrior& prior, ad::Var mean, ad::Var log_sigma2);

/// Elementwise y f - softplus(f), rows are patients.
ad::Var bernoulli_log_lik(ad::Var f, std::span<const int> labels);

struct ElboVars {
  ad::Var value;
  ad::Var likelihood;
  ad::Var kl;
  /// Per-sample likelihood sums, [1, B], already scaled.
  ad::Var per_sample;
};

/// likelihood = (P / n) (1 / B) sum_j sum_i log p(y_i | f_ij) with f drawn
/// from the conditional marginals; value = likelihood - KL.
ElboVars elbo(ad::Var V, std::span<const int> labels, ad::Var Z, ad::Var alpha, ad::Var log_sigma2,
              ad::Var log_lengthscale, bool free_mean, const ElboNoise& noise, double total_count,
              double jitter = kernel::kDefaultJitter);

ElboEstimate summarize(const ElboVars& vars);

}  // namespace unite::svgp
