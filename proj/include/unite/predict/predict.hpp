#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "unite/model/model.hpp"

namespace unite::predict {

struct PredictiveDistribution {
  std::string patient_id;
  double mean = 0.5;      ///< Monte Carlo mean of sigmoid(f*)
  double variance = 0.0;  ///< population variance of the sigmoid(f*) samples
  int label = 1;          ///< mean >= 0.5
  std::size_t n_samples = 0;
};

/// Moments of a set of probability samples.
PredictiveDistribution moments(std::span<const double> probabilities);

/// B draws of u ~ q(u) and f* | u per patient. Each patient's draws come from
/// a stream derived from (seed, patient_id), so results do not depend on
/// which other patients are predicted alongside.
std::vector<PredictiveDistribution> predict(const model::Model& model, const data::Cohort& cohort,
                                            std::span<const std::size_t> rows, std::size_t B, std::uint64_t seed);

/// Indices (ascending) kept after dropping the floor(q N) most uncertain
/// predictions; ties rank by patient_id ascending. Throws ContractError
/// "empty retained set" for q >= 1.
std::vector<std::size_t> uncertainty_filter(const std::vector<PredictiveDistribution>& predictions,
                                            double remove_fraction);

struct CovarianceExport {
  std::vector<std::string> patient_ids;
  ad::Tensor matrix;                   ///< kernel over the patients, input order
  std::vector<int> assignment;         ///< cluster 0 or 1 per patient
  std::vector<std::size_t> ordering;   ///< patients sorted by cluster, then spectral coordinate
  double separation = 0.0;             ///< leading eigenvalue after removing the trivial component
  bool degenerate = false;             ///< no usable second cluster
};

/// Spectral bipartition of a symmetric non-negative similarity matrix: sign
/// of the leading eigenvector of D^-1/2 K D^-1/2 once its trivial
/// eigenvector D^1/2 1 is deflated.
CovarianceExport bipartition(const ad::Tensor& K, std::vector<std::string> patient_ids);

/// Kernel over the fused latents of the patients, then bipartition.
CovarianceExport covariance_bicluster(const model::Model& model, const data::Cohort& cohort,
                                      std::span<const std::size_t> rows);

/// Best-permutation agreement of a 2-cluster assignment with binary labels.
double cluster_agreement(std::span<const int> assignment, std::span<const int> labels);

/// patient_id,risk_mean,uncertainty,label_pred
void write_predictions(const std::vector<PredictiveDistribution>& predictions, const std::filesystem::path& path);
/// <stem>.csv holds the reordered matrix, <stem>.json the ordering and clusters.
void write_covariance_export(const CovarianceExport& exported, const std::filesystem::path& csv_path,
                             const std::filesystem::path& json_path);

}  // namespace unite::predict
