#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "unite/data/split.hpp"
#include "unite/data/synthetic.hpp"
#include "unite/model/model.hpp"
#include "unite/train/fit.hpp"

namespace unite::cli {

/// Every knob of a run, read from a plain-text `key = value` file. Lines
/// starting with '#' and blank lines are ignored.
struct RunConfig {
  std::uint64_t seed = 0;
  std::string data_dir = "data";

  // Cohort generation.
  std::size_t n_patients = 1562;
  std::size_t vocab_size = 500;
  std::size_t n_locations = 500;
  double positive_rate = 0.3;
  data::SignalSpec signal;

  // Splits.
  double train_fraction = 0.64;
  double validation_fraction = 0.16;
  double test_fraction = 0.20;

  // Model.
  std::size_t max_len = 200;
  std::size_t code_embed_dim = 128;
  std::size_t transformer_depth = 2;
  std::size_t heads = 8;
  std::size_t feedforward_dim = 256;
  std::size_t ehr_dim = 128;
  std::size_t tabular_hidden = 16;
  std::size_t tabular_embed_dim = 2;
  std::size_t fused_dim = 16;
  std::size_t inducing = 200;
  bool free_mean = false;
  double jitter = kernel::kDefaultJitter;
  double initial_lengthscale = 1.0;
  double initial_sigma2 = 1.0;
  bool use_demographics = true;
  bool use_location = true;

  // Training.
  train::TrainConfig train;

  // Inference.
  std::size_t B_predict = 512;
  std::vector<double> filter_fractions{0.0, 0.2, 0.5, 0.8};
  std::size_t n_sample = 200;

  /// Throws ConfigError naming the offending key.
  void set(const std::string& key, const std::string& value);
  std::vector<std::string> keys() const;
  std::string get(const std::string& key) const;

  /// Applies --ablate {location, demographics, both}; "location+demographics"
  /// is accepted for both.
  void ablate(const std::string& what);

  data::SplitRatios split_ratios() const;
  /// Model configuration for a cohort with the given vocabulary and location width.
  model::ModelConfig model_config(std::size_t vocab_size, std::size_t location_dim) const;
  train::TrainConfig train_config() const;

  /// Sorted `key = value` lines; parses back to an identical configuration.
  std::string resolved() const;
};

RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace unite::cli
