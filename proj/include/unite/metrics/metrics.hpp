#pragma once

#include <cstddef>
#include <span>

namespace unite::metrics {

struct Confusion {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
};

Confusion confusion(std::span<const int> labels, std::span<const int> predictions);

/// Harmonic mean of precision and recall; 0 when both are 0.
double f1(std::span<const int> labels, std::span<const int> predictions);
/// (p_o - p_e) / (1 - p_e); 0 when p_e = 1.
double cohens_kappa(std::span<const int> labels, std::span<const int> predictions);
/// Step sum of Prec(k) * dRec(k) over distinct descending score thresholds.
double pr_auc(std::span<const int> labels, std::span<const double> scores);

struct EvalResult {
  double f1 = 0.0;
  double kappa = 0.0;
  double pr_auc = 0.0;
  std::size_t positives = 0;
  std::size_t negatives = 0;
};

EvalResult evaluate(std::span<const int> labels, std::span<const int> predictions, std::span<const double> scores);

struct TTest {
  double t = 0.0;
  double p_one_sided = 1.0;  ///< P(T >= t) under n - 1 degrees of freedom
};

/// One-sample t-test of the mean difference against 0. Throws ContractError
/// "degenerate differences" when the sample standard deviation is 0.
TTest paired_t_test(std::span<const double> diffs);

}  // namespace unite::metrics
