#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "unite/autodiff/tape.hpp"

// Differentiable primitives. Every function records one node on the tape of
// its operands and throws ShapeError naming the node when operand shapes
// break the primitive's contract.
namespace unite::ad {

// Linear algebra
Var matmul(Var a, Var b);
Var transpose(Var a);

// Elementwise, identical shapes
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);

// Broadcasting: row is [1, cols] (or rank 1), column is [rows, 1].
Var add_row(Var a, Var row);
Var mul_row(Var a, Var row);
Var add_col(Var a, Var col);
Var mul_col(Var a, Var col);

Var scale(Var a, double factor);
Var add_scalar(Var a, double offset);
/// a * s for a rank-0 Var s.
Var mul_scalar(Var a, Var s);

Var concat_cols(const std::vector<Var>& parts);

// Elementwise nonlinearities
Var exp(Var a);
Var log(Var a);
Var sqrt(Var a);
Var square(Var a);
Var sigmoid(Var a);
Var softplus(Var a);
Var relu(Var a);
Var clamp_min(Var a, double lower);

// Row-wise normalisations
Var softmax_rows(Var a);
Var layer_norm_rows(Var a, double eps = 1e-10);

/// Multi-head scaled dot-product attention over a batch of sequences stacked
/// row-wise: q, k, v are [n_seq * seq_len, model_dim]. Heads split the model
/// dimension into contiguous slices. Keys with key_mask == 0 receive zero
/// attention weight; every sequence needs at least one unmasked key.
Var attention(Var q, Var k, Var v, std::size_t seq_len, std::size_t n_heads, std::span<const unsigned char> key_mask);

/// Rows of table selected by ids, [ids.size(), table.cols()].
Var gather_rows(Var table, std::span<const std::size_t> ids);

/// out[s] = sum_t weights[s * seq_len + t] * x[s * seq_len + t]; x is
/// [n_seq * seq_len, d], result [n_seq, d].
Var pool_segments(Var x, std::span<const double> weights, std::size_t seq_len);

/// Lower Cholesky factor of the symmetric part of a. Throws
/// NotPositiveDefinite with the failing pivot.
Var cholesky(Var a);

enum class Side { lower, lower_transposed };
/// Solves L x = b (Side::lower) or L^T x = b (Side::lower_transposed) for
/// lower-triangular L.
Var tri_solve(Var lower, Var b, Side side = Side::lower);

// Reductions
Var sum(Var a);
Var mean(Var a);
/// Column sums, [1, cols].
Var sum_rows(Var a);
/// Diagonal of a square matrix as [1, n].
Var diag(Var a);

/// Pairwise squared Euclidean distances between rows, [a.rows, b.rows].
Var sqdist(Var a, Var b);

/// Mean softmax cross-entropy of logits [n, classes] against class labels.
Var cross_entropy(Var logits, std::span<const int> labels);

Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator*(Var a, Var b);
Var operator*(Var a, double s);
Var operator*(double s, Var a);
Var operator-(Var a);

}  // namespace unite::ad
