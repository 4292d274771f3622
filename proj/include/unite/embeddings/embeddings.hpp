#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "unite/autodiff/graph.hpp"
#include "unite/autodiff/ops.hpp"
#include "unite/data/cohort.hpp"

namespace unite::embeddings {

struct TransformerConfig {
  std::size_t n_blocks = 2;
  std::size_t n_heads = 8;
  std::size_t model_dim = 128;
  std::size_t feedforward_dim = 256;
  std::size_t max_len = 200;
};

struct EmbeddingConfig {
  std::size_t vocab_size = 0;
  TransformerConfig transformer;
  std::size_t ehr_dim = 128;  ///< h^d
  std::size_t tabular_hidden = 16;
  std::size_t tabular_dim = 2;  ///< h^s and h^g
  std::size_t demographics_dim = data::kDemographicsDim;
  std::size_t location_dim = 34;
  std::size_t fused_dim = 16;
  bool use_demographics = true;
  bool use_location = true;

  /// Width of the concatenated fusion output before the final projection.
  std::size_t concat_dim() const noexcept { return ehr_dim + 2 * tabular_dim; }
  /// Throws ConfigError on an unusable configuration.
  void validate() const;
};

/// Column-wise standardization of the tabular inputs, fit on training rows.
struct Standardizer {
  std::vector<double> demographics_mean, demographics_scale;
  std::vector<double> location_mean, location_scale;

  static Standardizer fit(const data::Cohort& cohort, std::span<const std::size_t> rows);
  bool empty() const noexcept { return demographics_mean.empty(); }
  friend bool operator==(const Standardizer&, const Standardizer&) = default;
};

/// Model-ready view of a set of patients.
struct Batch {
  std::size_t size = 0;
  std::size_t seq_len = 0;
  std::vector<std::size_t> tokens;          ///< size * seq_len
  std::vector<unsigned char> key_mask;      ///< 1 on content positions
  std::vector<double> pool_weights;         ///< 1/length on content positions
  ad::Tensor demographics;                  ///< [size, demographics_dim], standardized
  ad::Tensor location;                      ///< [size, location_dim], standardized
  std::vector<int> labels;
  std::vector<std::string> patient_ids;
};

Batch make_batch(const data::Cohort& cohort, std::span<const std::size_t> rows, const Standardizer& scaler);

/// Registers every embedding, fusion and pre-training head parameter.
/// Towers disabled by an ablation flag are registered frozen.
void init_parameters(ad::ParameterSet& params, const EmbeddingConfig& config, std::uint64_t seed);

/// Names of the parameters owned by the embedding networks and fusion.
std::vector<std::string> network_parameter_names(const ad::ParameterSet& params);

/// Sinusoidal position encoding, [seq_len, dim].
ad::Tensor positional_encoding(std::size_t seq_len, std::size_t dim);

/// Transformer tower: [batch.size, ehr_dim]. Throws DataError
/// "no content tokens" for an all-padding sequence.
ad::Var embed_ehr(ad::Scope& scope, const EmbeddingConfig& config, const Batch& batch);

/// Two fully connected layers with a ReLU between, weights under prefix.
ad::Var embed_tabular(ad::Scope& scope, const std::string& prefix, ad::Var x);

/// (h^d * W_d) ++ (h^s * W_s) ++ (h^g * W_g), rows are patients.
ad::Var fuse(ad::Var hd, ad::Var hs, ad::Var hg, ad::Var wd, ad::Var ws, ad::Var wg);

/// The full embedding path: towers, fusion and projection to fused_dim.
ad::Var fused_latent(ad::Scope& scope, const EmbeddingConfig& config, const Batch& batch);

/// Linear classification head on the fused latent, [n, 2] logits.
ad::Var head_logits(ad::Scope& scope, ad::Var latent);

}  // namespace unite::embeddings
