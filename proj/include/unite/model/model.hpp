#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>

#include "json.hpp"
#include "unite/embeddings/embeddings.hpp"
#include "unite/svgp/svgp.hpp"

// The deep-kernel classifier: embedding networks feeding an ARD-RBF sparse
// variational GP. Parameter names:
//   ehr.* demo.* loc.* fuse.*   embedding networks and fusion
//   head.*                      pre-training classifier
//   kernel.log_lengthscale      [1, D]
//   svgp.z [M, D], svgp.alpha [D or M, 1], svgp.log_sigma2 (scalar)
namespace unite::model {

struct ModelConfig {
  embeddings::EmbeddingConfig embedding;
  std::size_t inducing = 200;
  bool free_mean = false;
  double jitter = kernel::kDefaultJitter;
  double initial_lengthscale = 1.0;
  double initial_sigma2 = 1.0;

  void validate() const;
};

struct Model {
  ModelConfig config;
  ad::ParameterSet params;
  embeddings::Standardizer scaler;
  bool trained = false;

  svgp::VariationalState variational_state() const;
  std::vector<double> lengthscales() const;
};

Model init_model(const ModelConfig& config, std::uint64_t seed);

/// Fused latent rows for a batch, recorded on the scope's tape.
ad::Var latent(ad::Scope& scope, const Model& model, const embeddings::Batch& batch);
/// Plain evaluation of the fused latents.
ad::Tensor latent_values(const Model& model, const embeddings::Batch& batch);

/// Sets the inducing locations to k-means centroids of the latents of up to
/// `subsample` patients drawn from rows.
void initialize_inducing(Model& model, const data::Cohort& cohort, std::span<const std::size_t> rows,
                         std::uint64_t seed, std::size_t subsample = 2000);

/// Starts q(u) at the pre-trained classifier: its mean matches the head's
/// logit difference at the inducing points, by least squares when the mean
/// is Z alpha.
void initialize_variational_mean(Model& model);

/// The full differentiable ELBO over embeddings, kernel and variational
/// parameters for one batch.
svgp::ElboVars elbo_graph(ad::Scope& scope, const Model& model, const embeddings::Batch& batch,
                          const svgp::ElboNoise& noise, double total_count);

svgp::ElboEstimate elbo_batch(const Model& model, const embeddings::Batch& batch, std::size_t B, double total_count,
                              std::uint64_t seed);

// Checkpoints: JSON with a format-version field and named tensors.
inline constexpr int kCheckpointVersion = 1;

nlohmann::json config_to_json(const ModelConfig& config);
ModelConfig config_from_json(const nlohmann::json& j);
nlohmann::json model_to_json(const Model& model);
Model model_from_json(const nlohmann::json& j);
nlohmann::json parameters_to_json(const ad::ParameterSet& params);
ad::ParameterSet parameters_from_json(const nlohmann::json& j);
nlohmann::json tensor_to_json(const ad::Tensor& t);
ad::Tensor tensor_from_json(const nlohmann::json& j);

/// `extra` is stored verbatim under "training" when not null.
void save_checkpoint(const Model& model, const std::filesystem::path& path, const nlohmann::json& extra = nullptr);

struct Checkpoint {
  Model model;
  nlohmann::json training;
};

Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace unite::model
