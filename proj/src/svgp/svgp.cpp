#include "unite/svgp/svgp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "unite/autodiff/linalg.hpp"
#include "unite/error.hpp"
#include "unite/random.hpp"

namespace unite::svgp {

using ad::Tensor;
using ad::Var;

namespace {

Tensor log_of(std::span<const double> lengthscales) {
  Tensor t({1, lengthscales.size()});
  for (std::size_t k = 0; k < lengthscales.size(); ++k) {
    if (!(lengthscales[k] > 0.0)) throw ContractError("lengthscales must be positive");
    t[k] = std::log(lengthscales[k]);
  }
  return t;
}

void check_state(const VariationalState& s) {
  if (s.Z.rank() != 2 || s.Z.rows() < 1) throw ShapeError("variational state: Z must be a non-empty matrix");
  const std::size_t want = s.free_mean ? s.Z.rows() : s.Z.cols();
  if (s.alpha.size() != want) {
    throw ShapeError("variational state: alpha has " + std::to_string(s.alpha.size()) + " entries, expected " +
                     std::to_string(want));
  }
}

Tensor alpha_column(const VariationalState& s) { return s.alpha.reshaped({s.alpha.size(), 1}); }

}  // namespace

Tensor VariationalState::mean() const {
  check_state(*this);
  if (free_mean) return alpha_column(*this);
  Tensor m({Z.rows(), 1});
  for (std::size_t i = 0; i < Z.rows(); ++i)
    for (std::size_t k = 0; k < Z.cols(); ++k) m[i] += Z(i, k) * alpha[k];
  return m;
}

ConditionalGaussian conditional_f_given_u(const Tensor& V, std::span<const double> u, const Tensor& Z,
                                          std::span<const double> lengthscales, bool full_covariance, double jitter) {
  if (u.size() != Z.rows()) throw ShapeError("conditional_f_given_u: u length differs from the inducing count");
  if (V.cols() != Z.cols() || lengthscales.size() != Z.cols()) {
    throw ShapeError("conditional_f_given_u: latent dimensions disagree");
  }
  ad::Tape tape;
  Var log_l = tape.constant(log_of(lengthscales));
  const InducingPrior prior = inducing_prior(tape.constant(Z), log_l, jitter);
  Var U = tape.constant(Tensor({u.size(), 1}, std::vector<double>(u.begin(), u.end())));
  Var Vv = tape.constant(V);
  const ConditionalVars c = conditional(prior, Vv, log_l, U);

  ConditionalGaussian out;
  const std::size_t n = V.rows();
  out.mean.assign(c.mean.value().data().begin(), c.mean.value().data().end());
  out.variance.assign(c.variance.value().data().begin(), c.variance.value().data().end());
  Var A = ad::tri_solve(prior.lower, kernel::kernel_from_scaled(prior.Zs, kernel::scale_inputs(Vv, log_l)));
  const Tensor& a = A.value();
  out.raw_variance.assign(n, 1.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t m = 0; m < a.rows(); ++m) out.raw_variance[i] -= a(m, i) * a(m, i);
  if (full_covariance) {
    Tensor cov = kernel::kernel_matrix(V, V, lengthscales);
    const Tensor ata = ad::matmul(ad::transpose(A), A).value();
    for (std::size_t i = 0; i < cov.size(); ++i) cov[i] -= ata[i];
    for (std::size_t i = 0; i < n; ++i) cov(i, i) = std::max(cov(i, i), 0.0);
    out.covariance = std::move(cov);
  }
  return out;
}

std::vector<std::vector<double>> sample_q_u(const VariationalState& state, std::size_t B, std::uint64_t seed) {
  if (B < 1) throw ContractError("sample_q_u: B must be at least 1");
  const Tensor m = state.mean();
  const double sd = std::exp(0.5 * state.log_sigma2);
  Rng rng = make_rng(seed, Stream::monte_carlo);
  std::normal_distribution<double> normal;
  std::vector<std::vector<double>> out(B, std::vector<double>(m.size()));
  for (auto& draw : out)
    for (std::size_t i = 0; i < m.size(); ++i) draw[i] = m[i] + sd * normal(rng);
  return out;
}

double kl_q_p(const VariationalState& state, const Tensor& K_ZZ) {
  if (K_ZZ.rows() != state.inducing_count() || K_ZZ.cols() != state.inducing_count()) {
    throw ShapeError("kl_q_p: K_ZZ size differs from the inducing count");
  }
  ad::Tape tape;
  InducingPrior prior;
  prior.lower = ad::cholesky(tape.constant(K_ZZ));
  return kl_q_p(prior, tape.constant(state.mean()), tape.constant(Tensor::scalar(state.log_sigma2))).value().item();
}

double bernoulli_log_lik(int y, double f) {
  const double softplus = f > 0 ? f + std::log1p(std::exp(-f)) : std::log1p(std::exp(f));
  return y * f - softplus;
}

ElboEstimate elbo_fixed(const Tensor& V, std::span<const int> labels, const VariationalState& state,
                        std::span<const double> lengthscales, std::size_t B, double total_count, std::uint64_t seed,
                        double jitter) {
  check_state(state);
  ad::Tape tape;
  const ElboNoise noise = ElboNoise::draw(state.inducing_count(), V.rows(), B, seed);
  const ElboVars vars = elbo(tape.constant(V), labels, tape.constant(state.Z), tape.constant(alpha_column(state)),
                             tape.constant(Tensor::scalar(state.log_sigma2)), tape.constant(log_of(lengthscales)),
                             state.free_mean, noise, total_count, jitter);
  return summarize(vars);
}

Tensor kmeans(const Tensor& X, std::size_t k, std::uint64_t seed, std::size_t iterations) {
  if (X.rank() != 2 || X.rows() == 0) throw ShapeError("kmeans: need a non-empty matrix");
  if (k == 0) throw ContractError("kmeans: k must be positive");
  const std::size_t n = X.rows(), d = X.cols();
  Rng rng = make_rng(seed, Stream::kmeans);
  Tensor C({k, d});
  auto row_dist = [&](std::size_t i, const Tensor& centers, std::size_t c) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += (X(i, j) - centers(c, j)) * (X(i, j) - centers(c, j));
    return s;
  };

  if (n <= k) {
    std::vector<double> sd(d, 0.0), mean(d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) mean[j] += X(i, j) / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) sd[j] += (X(i, j) - mean[j]) * (X(i, j) - mean[j]) / static_cast<double>(n);
    std::normal_distribution<double> normal;
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    for (std::size_t c = 0; c < k; ++c) {
      const std::size_t src = c < n ? c : pick(rng);
      for (std::size_t j = 0; j < d; ++j) {
        C(c, j) = X(src, j);
        if (c >= n) C(c, j) += 1e-2 * (sd[j] > 0 ? std::sqrt(sd[j]) : 1.0) * normal(rng);
      }
    }
    return C;
  }

  // k-means++ seeding.
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  std::size_t first = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
  for (std::size_t j = 0; j < d; ++j) C(0, j) = X(first, j);
  for (std::size_t c = 1; c < k; ++c) {
    for (std::size_t i = 0; i < n; ++i) nearest[i] = std::min(nearest[i], row_dist(i, C, c - 1));
    std::discrete_distribution<std::size_t> pick(nearest.begin(), nearest.end());
    const std::size_t chosen = pick(rng);
    for (std::size_t j = 0; j < d; ++j) C(c, j) = X(chosen, j);
  }

  std::vector<std::size_t> assign(n, 0);
  for (std::size_t it = 0; it < iterations; ++it) {
    bool changed = it == 0;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      double best_d = row_dist(i, C, 0);
      for (std::size_t c = 1; c < k; ++c) {
        const double dist = row_dist(i, C, c);
        if (dist < best_d) best_d = dist, best = c;
      }
      if (assign[i] != best) changed = true;
      assign[i] = best;
    }
    if (!changed) break;
    Tensor sums({k, d});
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++counts[assign[i]];
      for (std::size_t j = 0; j < d; ++j) sums(assign[i], j) += X(i, j);
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) {
        // Reseed an empty cluster at the point farthest from its centroid.
        std::size_t far = 0;
        double far_d = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
          const double dist = row_dist(i, C, assign[i]);
          if (dist > far_d) far_d = dist, far = i;
        }
        for (std::size_t j = 0; j < d; ++j) C(c, j) = X(far, j);
        assign[far] = c;
        continue;
      }
      for (std::size_t j = 0; j < d; ++j) C(c, j) = sums(c, j) / static_cast<double>(counts[c]);
    }
  }
  return C;
}

ElboNoise ElboNoise::draw(std::size_t M, std::size_t n, std::size_t B, std::uint64_t seed) {
  if (B < 1) throw ContractError("ELBO needs at least one Monte Carlo sample");
  Rng rng = make_rng(seed, Stream::monte_carlo);
  ElboNoise noise;
  noise.u = standard_normal(rng, {M, B});
  noise.f = standard_normal(rng, {n, B});
  return noise;
}

Var variational_mean(Var Z, Var alpha, bool free_mean) { return free_mean ? alpha : ad::matmul(Z, alpha); }

Var sample_q_u(Var mean, Var log_sigma2, const Tensor& noise) {
  Var sd = ad::exp(ad::scale(log_sigma2, 0.5));
  return ad::add_col(ad::mul_scalar(mean.tape->constant(noise), sd), mean);
}

InducingPrior inducing_prior(Var Z, Var log_lengthscale, double jitter) {
  InducingPrior prior;
  prior.Zs = kernel::scale_inputs(Z, log_lengthscale);
  const kernel::GraphFactorization f = kernel::stable_cholesky(kernel::kernel_from_scaled(prior.Zs, prior.Zs), jitter);
  prior.lower = f.lower;
  prior.jitter = f.jitter;
  return prior;
}

ConditionalVars conditional(const InducingPrior& prior, Var V, Var log_lengthscale, Var U) {
  Var Kzv = kernel::kernel_from_scaled(prior.Zs, kernel::scale_inputs(V, log_lengthscale));
  Var A = ad::tri_solve(prior.lower, Kzv);
  Var W = ad::tri_solve(prior.lower, U);
  ConditionalVars out;
  out.mean = ad::matmul(ad::transpose(A), W);
  out.variance = ad::clamp_min(ad::add_scalar(-ad::transpose(ad::sum_rows(ad::square(A))), 1.0), 0.0);
  return out;
}

Var kl_q_p(const InducingPrior& prior, Var mean, Var log_sigma2) {
  ad::Tape& tape = *prior.lower.tape;
  const std::size_t M = prior.lower.value().rows();
  Var inv_lower = ad::tri_solve(prior.lower, tape.constant(Tensor::identity(M)));
  Var trace = ad::sum(ad::square(inv_lower));
  Var mahalanobis = ad::sum(ad::square(ad::tri_solve(prior.lower, mean)));
  Var log_det = ad::scale(ad::sum(ad::log(ad::diag(prior.lower))), 2.0);
  Var sigma2 = ad::exp(log_sigma2);
  const double m = static_cast<double>(M);
  Var total = ad::add(ad::add(ad::mul(sigma2, trace), mahalanobis), ad::add(log_det, ad::scale(log_sigma2, -m)));
  return ad::scale(ad::add_scalar(total, -m), 0.5);
}

Var bernoulli_log_lik(Var f, std::span<const int> labels) {
  const Tensor& fv = f.value();
  if (labels.size() != fv.rows()) throw ShapeError("bernoulli_log_lik: label count differs from row count");
  Tensor y({fv.rows(), 1});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw DataError("labels must be 0 or 1");
    y[i] = labels[i];
  }
  return ad::sub(ad::mul_col(f, f.tape->constant(std::move(y))), ad::softplus(f));
}

ElboVars elbo(Var V, std::span<const int> labels, Var Z, Var alpha, Var log_sigma2, Var log_lengthscale,
              bool free_mean, const ElboNoise& noise, double total_count, double jitter) {
  const std::size_t n = V.value().rows(), M = Z.value().rows(), B = noise.u.cols();
  if (n == 0) throw ContractError("ELBO needs a non-empty batch");
  if (noise.u.rows() != M || noise.f.rows() != n || noise.f.cols() != B) {
    throw ShapeError("ELBO noise shapes do not match the batch and inducing count");
  }
  const InducingPrior prior = inducing_prior(Z, log_lengthscale, jitter);
  Var mean = variational_mean(Z, alpha, free_mean);
  Var U = sample_q_u(mean, log_sigma2, noise.u);
  const ConditionalVars c = conditional(prior, V, log_lengthscale, U);
  Var sd = ad::sqrt(ad::clamp_min(c.variance, 1e-12));
  Var F = ad::add(c.mean, ad::mul_col(V.tape->constant(noise.f), sd));

  ElboVars out;
  out.per_sample = ad::scale(ad::sum_rows(bernoulli_log_lik(F, labels)), total_count / static_cast<double>(n));
  out.likelihood = ad::scale(ad::sum(out.per_sample), 1.0 / static_cast<double>(B));
  out.kl = kl_q_p(prior, mean, log_sigma2);
  out.value = ad::sub(out.likelihood, out.kl);
  return out;
}

ElboEstimate summarize(const ElboVars& vars) {
  ElboEstimate e;
  e.value = vars.value.value().item();
  e.likelihood_term = vars.likelihood.value().item();
  e.kl_term = vars.kl.value().item();
  const Tensor& per = vars.per_sample.value();
  e.n_samples = per.size();
  if (per.size() > 1) {
    double ss = 0.0;
    for (double x : per.data()) ss += (x - e.likelihood_term) * (x - e.likelihood_term);
    e.standard_error = std::sqrt(ss / static_cast<double>(per.size() - 1) / static_cast<double>(per.size()));
  }
  return e;
}

}  // namespace unite::svgp
