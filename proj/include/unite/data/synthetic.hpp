#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "unite/data/cohort.hpp"

namespace unite::data {

/// Coefficients of the planted labelling rule. A clean patient is positive
/// with probability
///   sigmoid(risk_weight * std(risk count) + location_weight * z_signal
///           + age_weight * std(age) + intercept + N(0, noise_sd^2))
/// where z_signal is the standard-normal latent behind the designated location
/// statistic of the patient's zip and the intercept is solved so the expected positive
/// fraction equals the requested rate. A noise_fraction of patients are
/// instead placed on the decision boundary (clean logit near zero) and
/// labelled by a fair coin. The remaining location statistics correlate with
/// z_signal at location_correlation; non-risk codes are Zipf distributed with
/// exponent code_skew (0 is uniform).
struct SignalSpec {
  double risk_weight = 10.0;
  double location_weight = 10.0;
  double age_weight = 2.5;
  double noise_sd = 0.3;
  double noise_fraction = 0.0;
  std::size_t risk_codes = 10;
  std::size_t max_risk_count = 8;
  std::size_t min_codes = 16;
  std::size_t max_codes = 16;
  std::size_t location_features = 34;
  std::size_t signal_feature = 0;
  double location_correlation = 0.9;
  double code_skew = 1.5;
};

struct PlantedTruth {
  double logit = 0.0;
  bool label_noise = false;
};

struct SyntheticCohort {
  Cohort cohort;
  std::vector<PlantedTruth> truth;
  double intercept = 0.0;
};

/// Deterministic under seed. Requires 0 < positive_rate < 1, vocab_size > 10.
SyntheticCohort generate_synthetic(std::size_t n_patients, std::size_t vocab_size, std::size_t n_locations,
                                   double positive_rate, std::uint64_t seed, const SignalSpec& spec,
                                   std::size_t max_len);

/// planted.csv sidecar: patient_id,label_noise,logit.
void write_planted_truth(const SyntheticCohort& synthetic, const std::filesystem::path& path);

}  // namespace unite::data
