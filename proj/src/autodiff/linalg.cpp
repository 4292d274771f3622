#include "unite/autodiff/linalg.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "unite/error.hpp"

namespace unite::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void require_square(const Tensor& a, const char* what) {
  if (a.rank() != 2 || a.rows() != a.cols()) {
    throw ShapeError(std::string(what) + ": expected a square matrix, got " + shape_string(a.shape()));
  }
}

}  // namespace

double max_asymmetry(const Tensor& a) {
  require_square(a, "max_asymmetry");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < i; ++j) worst = std::max(worst, std::abs(a(i, j) - a(j, i)));
  return worst;
}

Tensor cholesky_lower(const Tensor& a, bool check_symmetry) {
  require_square(a, "cholesky");
  const std::size_t n = a.rows();
  if (check_symmetry) {
    double scale = 1.0;
    for (double v : a.data()) scale = std::max(scale, std::abs(v));
    if (max_asymmetry(a) > 1e-8 * scale) throw NumericalError("cholesky: matrix is not symmetric");
  }

  Tensor l({n, n});
  for (std::size_t j = 0; j < n; ++j) {
    double d = a(j, j);
    for (std::size_t k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
    if (!(d > 0.0) || !std::isfinite(d)) throw NotPositiveDefinite(j);
    const double ljj = std::sqrt(d);
    l(j, j) = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = 0.5 * (a(i, j) + a(j, i));
      for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      l(i, j) = s / ljj;
    }
  }
  return l;
}

Tensor cholesky_solve(const Tensor& k, const Tensor& b) {
  const Tensor l = cholesky_lower(k);
  if (b.rank() != 2 || b.rows() != k.rows()) {
    throw ShapeError("cholesky_solve: rhs " + shape_string(b.shape()) + " incompatible with " + shape_string(k.shape()));
  }
  Eigen::Map<const RowMat> L(l.data().data(), static_cast<Eigen::Index>(l.rows()), static_cast<Eigen::Index>(l.cols()));
  Eigen::Map<const RowMat> B(b.data().data(), static_cast<Eigen::Index>(b.rows()), static_cast<Eigen::Index>(b.cols()));
  RowMat y = L.triangularView<Eigen::Lower>().solve(B);
  Tensor x(b.shape());
  Eigen::Map<RowMat>(x.data().data(), y.rows(), y.cols()) = L.transpose().triangularView<Eigen::Upper>().solve(y);
  return x;
}

}  // namespace unite::ad
