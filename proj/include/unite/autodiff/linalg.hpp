#pragma once

#include "unite/autodiff/tensor.hpp"

// Value-level dense linear algebra shared by the graph primitives and the
// kernel/GP code.
namespace unite::ad {

/// Largest |a_ij - a_ji|.
double max_asymmetry(const Tensor& a);

/// Lower Cholesky factor of a symmetric positive-definite matrix. Reads the
/// symmetric part (a + a^T) / 2. Throws NotPositiveDefinite carrying the
/// zero-based pivot at which factorization broke down, or NumericalError when
/// check_symmetry is set and the input is asymmetric beyond 1e-8 (relative
/// to its largest entry).
Tensor cholesky_lower(const Tensor& a, bool check_symmetry = true);

/// X with K X = B for SPD K, via two triangular solves.
Tensor cholesky_solve(const Tensor& k, const Tensor& b);

}  // namespace unite::ad
