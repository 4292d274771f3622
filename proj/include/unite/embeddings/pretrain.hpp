#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "unite/embeddings/embeddings.hpp"
#include "unite/train/adam.hpp"

namespace unite::embeddings {

struct PretrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 256;
  train::AdamConfig adam;
  double clip_norm = 10.0;
  std::uint64_t seed = 0;
};

struct PretrainReport {
  std::vector<double> epoch_loss;  ///< mean minibatch cross-entropy per epoch
  double train_accuracy = 0.0;
};

/// Minimizes the cross-entropy of the linear head over the embedding
/// networks and the head. Only parameters named by network_parameter_names
/// and the head move.
PretrainReport pretrain(ad::ParameterSet& params, const EmbeddingConfig& config, const data::Cohort& cohort,
                        const Standardizer& scaler, std::span<const std::size_t> rows, const PretrainConfig& options);

/// Mean cross-entropy of the head over the given patients.
ad::Var pretrain_loss(ad::Scope& scope, const EmbeddingConfig& config, const Batch& batch);

/// Fraction of patients whose argmax head logit equals the label.
double head_accuracy(const ad::ParameterSet& params, const EmbeddingConfig& config, const Batch& batch);

}  // namespace unite::embeddings
