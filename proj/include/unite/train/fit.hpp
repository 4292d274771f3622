#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "unite/embeddings/pretrain.hpp"
#include "unite/model/model.hpp"
#include "unite/train/adam.hpp"

namespace unite::train {

struct TrainConfig {
  std::size_t batch_size = 256;
  AdamConfig adam;
  std::size_t max_epochs = 50;
  std::size_t patience = 5;
  std::size_t B_train = 8;
  std::size_t B_eval = 512;
  std::size_t pretrain_epochs = 10;
  /// Epochs fitting q(u) and the lengthscales to frozen latents before joint
  /// training.
  std::size_t warmup_epochs = 20;
  std::uint64_t seed = 0;
  double clip_norm = 10.0;
  /// Relative gain in smoothed validation ELBO that counts as improvement.
  double min_improvement = 1e-4;
  /// Window of the validation-ELBO moving average.
  std::size_t smoothing = 3;

  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double elbo = 0.0;      ///< mean of the per-batch full-data ELBO estimates
  double val_elbo = 0.0;
  double val_f1 = 0.0;
  double val_kappa = 0.0;
  double val_prauc = 0.0;
  double seconds = 0.0;
};

struct TrainReport {
  embeddings::PretrainReport pretrain;
  std::vector<EpochRecord> epochs;
  std::string stop_reason;
  std::size_t best_epoch = 0;
};

/// Everything needed to continue an interrupted run exactly.
struct TrainingState {
  bool prepared = false;  ///< scaling fit, pre-training and inducing init done
  std::size_t epoch = 0;
  std::size_t step = 0;
  AdamMoments moments;
  std::vector<EpochRecord> history;
  std::vector<double> val_elbo;
  double best_score = 0.0;
  std::size_t best_epoch = 0;
  std::size_t since_best = 0;
  ad::ParameterSet best;
  /// Parameters after the last completed epoch.
  ad::ParameterSet current;
  double initial_elbo = 0.0;
  /// "converged" or "diverged"; empty while the run may continue.
  std::string stop_reason;

  bool finished() const noexcept { return !stop_reason.empty(); }
};

nlohmann::json state_to_json(const TrainingState& state);
TrainingState state_from_json(const nlohmann::json& j);

/// Pre-training, then minibatch ascent of the ELBO over every trainable
/// parameter except the pre-training head. Stops when the smoothed
/// validation ELBO has not improved for `patience` epochs or at max_epochs,
/// leaving the best-validation parameters in the model. Continues from
/// `state` when it records earlier epochs.
TrainReport fit(model::Model& model, const data::Cohort& cohort, const TrainConfig& config, TrainingState& state);
TrainReport fit(model::Model& model, const data::Cohort& cohort, const TrainConfig& config);

/// JSON lines: epoch, elbo, val_f1, val_kappa, val_prauc, seconds.
std::string training_log(const std::vector<EpochRecord>& epochs);

}  // namespace unite::train
