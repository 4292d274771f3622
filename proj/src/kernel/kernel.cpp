#include "unite/kernel/kernel.hpp"

#include <cmath>

#include "unite/autodiff/linalg.hpp"
#include "unite/error.hpp"

namespace unite::kernel {

using ad::Tensor;
using ad::Var;

double rbf(std::span<const double> v, std::span<const double> w, std::span<const double> lengthscales) {
  if (v.size() != w.size() || v.size() != lengthscales.size()) {
    throw ShapeError("rbf: dimension mismatch (" + std::to_string(v.size()) + ", " + std::to_string(w.size()) + ", " +
                     std::to_string(lengthscales.size()) + ")");
  }
  double s = 0.0;
  for (std::size_t k = 0; k < v.size(); ++k) {
    const double d = (v[k] - w[k]) / lengthscales[k];
    s += d * d;
  }
  return std::exp(-0.5 * s);
}

Tensor kernel_matrix(const Tensor& V, const Tensor& W, std::span<const double> lengthscales) {
  if (V.size() == 0 || W.size() == 0) throw ShapeError("kernel_matrix: empty input");
  if (V.cols() != W.cols()) throw ShapeError("kernel_matrix: V and W differ in dimension");
  const std::size_t n = V.rows(), m = W.rows(), d = V.cols();
  Tensor K({n, m});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j)
      K(i, j) = rbf(std::span(V.data().data() + i * d, d), std::span(W.data().data() + j * d, d), lengthscales);
  return K;
}

Tensor add_jitter(const Tensor& K, double jitter) {
  if (K.rows() != K.cols()) throw ShapeError("add_jitter: matrix is not square");
  if (!(jitter >= 0.0)) throw ContractError("add_jitter: jitter must be non-negative");
  Tensor out = K;
  for (std::size_t i = 0; i < K.rows(); ++i) out(i, i) += jitter;
  return out;
}

Factorization stable_cholesky(const Tensor& K, double initial) {
  for (double jitter = initial; jitter <= kMaxJitter * (1 + 1e-12); jitter *= 2.0) {
    try {
      return {ad::cholesky_lower(add_jitter(K, jitter)), jitter};
    } catch (const NotPositiveDefinite&) {
    }
    if (jitter == 0.0) jitter = kDefaultJitter / 2.0;
  }
  throw NumericalError("irrecoverably singular kernel");
}

Var scale_inputs(Var X, Var log_lengthscale) { return ad::mul_row(X, ad::exp(-log_lengthscale)); }

Var kernel_from_scaled(Var Vs, Var Ws) { return ad::exp(ad::scale(ad::sqdist(Vs, Ws), -0.5)); }

Var kernel_matrix(Var V, Var W, Var log_lengthscale) {
  return kernel_from_scaled(scale_inputs(V, log_lengthscale), scale_inputs(W, log_lengthscale));
}

GraphFactorization stable_cholesky(Var K, double initial) {
  const std::size_t n = K.value().rows();
  for (double jitter = initial; jitter <= kMaxJitter * (1 + 1e-12); jitter *= 2.0) {
    try {
      Tensor diagonal = Tensor::identity(n);
      for (double& x : diagonal.data()) x *= jitter;
      Var jittered = ad::add(K, K.tape->constant(std::move(diagonal)));
      return {ad::cholesky(jittered), jitter};
    } catch (const NotPositiveDefinite&) {
    }
    if (jitter == 0.0) jitter = kDefaultJitter / 2.0;
  }
  throw NumericalError("irrecoverably singular kernel");
}

}  // namespace unite::kernel
