#include "unite/data/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include "unite/data/text_io.hpp"
#include "unite/error.hpp"
#include "unite/random.hpp"

namespace unite::data {

namespace {

double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

std::string numbered(const char* prefix, std::size_t width, std::size_t k) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s%0*zu", prefix, static_cast<int>(width), k);
  return buf;
}

// Intercept b with mean_i sigmoid(base_i + b) == target, by bisection.
double solve_intercept(const std::vector<double>& base, double target) {
  if (base.empty()) return std::log(target / (1.0 - target));
  double lo = -60.0, hi = 60.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    double m = 0.0;
    for (double x : base) m += sigmoid(x + mid);
    m /= static_cast<double>(base.size());
    (m < target ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

struct Draft {
  std::size_t length = 0;
  std::size_t risk_count = 0;
  std::size_t zip = 0;
  int age = 0;
  bool female = false;
  double logit_noise = 0.0;
};

}  // namespace

SyntheticCohort generate_synthetic(std::size_t n_patients, std::size_t vocab_size, std::size_t n_locations,
                                   double positive_rate, std::uint64_t seed, const SignalSpec& spec,
                                   std::size_t max_len) {
  if (!(positive_rate > 0.0 && positive_rate < 1.0)) throw ConfigError("positive_rate must lie in (0, 1)");
  if (vocab_size <= 10) throw ConfigError("vocab_size must exceed 10");
  if (n_patients == 0 || n_locations == 0) throw ConfigError("need at least one patient and one location");
  if (spec.min_codes == 0 || spec.max_codes < spec.min_codes) throw ConfigError("invalid code-count range");
  if (spec.location_features == 0 || spec.signal_feature >= spec.location_features) {
    throw ConfigError("signal_feature must index a location feature");
  }
  if (!(spec.noise_fraction >= 0.0 && spec.noise_fraction < 1.0)) throw ConfigError("noise_fraction must lie in [0, 1)");
  if (!(std::abs(spec.location_correlation) <= 1.0)) throw ConfigError("location_correlation must lie in [-1, 1]");
  if (!(spec.code_skew >= 0.0)) throw ConfigError("code_skew must be non-negative");
  const double clean_target = (positive_rate - 0.5 * spec.noise_fraction) / (1.0 - spec.noise_fraction);
  if (!(clean_target > 0.0 && clean_target < 1.0)) throw ConfigError("positive_rate incompatible with noise_fraction");

  Rng rng = make_rng(seed, Stream::generate);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto uniform_int = [&rng](std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  };

  SyntheticCohort out;
  Cohort& cohort = out.cohort;
  cohort.max_len = max_len;
  const std::size_t n_codes = vocab_size - kFirstCodeId;
  for (std::size_t k = 0; k < n_codes; ++k) cohort.vocab.add(numbered("C", 4, k));
  const std::size_t n_risk = std::clamp<std::size_t>(spec.risk_codes, 1, n_codes / 4);
  const std::size_t max_risk = std::min(spec.max_risk_count, spec.min_codes);

  // Location statistics: rate-like values driven by a standard-normal latent
  // per (zip, feature). The signal latent enters the labelling rule; the
  // other latents share location_correlation with it.
  const std::size_t n_feat = spec.location_features;
  for (std::size_t f = 0; f < n_feat; ++f) cohort.location_feature_names.push_back(numbered("stat_", 2, f + 1));
  std::vector<double> signal_latent(n_locations);
  const double rho = spec.location_correlation, rho_c = std::sqrt(1.0 - rho * rho);
  for (std::size_t z = 0; z < n_locations; ++z) {
    std::vector<double> values(n_feat);
    signal_latent[z] = normal(rng);
    for (std::size_t f = 0; f < n_feat; ++f) {
      const double latent = f == spec.signal_feature ? signal_latent[z] : rho * signal_latent[z] + rho_c * normal(rng);
      const double base = 0.02 + 0.5 * static_cast<double>(f + 1) / static_cast<double>(n_feat);
      values[f] = base * (1.0 + 0.25 * latent);
    }
    cohort.location_table.emplace(numbered("Z", 5, z), std::move(values));
  }

  const double risk_mean = 0.5 * static_cast<double>(max_risk);
  const double risk_sd = std::sqrt((std::pow(max_risk + 1.0, 2) - 1.0) / 12.0);
  const double age_mean = 54.0, age_sd = std::sqrt((73.0 * 73.0 - 1.0) / 12.0);
  auto clean_logit = [&](const Draft& d) {
    const double risk = risk_sd > 0 ? (static_cast<double>(d.risk_count) - risk_mean) / risk_sd : 0.0;
    return spec.risk_weight * risk + spec.location_weight * signal_latent[d.zip] +
           spec.age_weight * (d.age - age_mean) / age_sd;
  };

  std::vector<Draft> drafts(n_patients);
  for (Draft& d : drafts) {
    d.length = uniform_int(spec.min_codes, spec.max_codes);
    d.risk_count = uniform_int(0, max_risk);
    d.zip = uniform_int(0, n_locations - 1);
    d.age = static_cast<int>(uniform_int(18, 90));
    d.female = uniform_int(0, 1) == 1;
    d.logit_noise = spec.noise_sd * normal(rng);
  }

  std::vector<std::size_t> order(n_patients);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_noise = static_cast<std::size_t>(std::floor(spec.noise_fraction * static_cast<double>(n_patients) + 0.5));
  std::vector<bool> is_noise(n_patients, false);
  for (std::size_t k = 0; k < n_noise; ++k) is_noise[order[k]] = true;

  std::vector<double> clean_base;
  for (std::size_t i = 0; i < n_patients; ++i)
    if (!is_noise[i]) clean_base.push_back(clean_logit(drafts[i]) + drafts[i].logit_noise);
  out.intercept = solve_intercept(clean_base, clean_target);

  // Boundary placement for label-noise patients: pick the risk count that
  // brings the clean logit closest to zero, redrawing zip and age when the
  // remaining terms leave it far from the boundary.
  for (std::size_t i = 0; i < n_patients; ++i) {
    if (!is_noise[i]) continue;
    Draft& d = drafts[i];
    for (int attempt = 0; attempt < 100; ++attempt) {
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k <= max_risk; ++k) {
        d.risk_count = k;
        best = std::min(best, std::abs(clean_logit(d) + out.intercept));
      }
      for (std::size_t k = 0; k <= max_risk; ++k) {
        d.risk_count = k;
        if (std::abs(clean_logit(d) + out.intercept) == best) break;
      }
      if (best < 0.75) break;
      d.zip = uniform_int(0, n_locations - 1);
      d.age = static_cast<int>(uniform_int(18, 90));
    }
  }

  const std::size_t id_width = std::max<std::size_t>(6, std::to_string(n_patients).size());
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  // Non-risk codes follow a Zipf law of exponent code_skew.
  std::vector<double> code_weights;
  for (std::size_t k = n_risk; k < n_codes; ++k)
    code_weights.push_back(std::pow(static_cast<double>(k - n_risk + 1), -spec.code_skew));
  std::discrete_distribution<std::size_t> noise_code(code_weights.begin(), code_weights.end());
  for (std::size_t i = 0; i < n_patients; ++i) {
    const Draft& d = drafts[i];
    std::vector<std::string> codes(d.length);
    std::vector<std::size_t> positions(d.length);
    std::iota(positions.begin(), positions.end(), 0);
    std::shuffle(positions.begin(), positions.end(), rng);
    std::vector<bool> risky(d.length, false);
    for (std::size_t k = 0; k < d.risk_count; ++k) risky[positions[k]] = true;
    for (std::size_t t = 0; t < d.length; ++t) {
      const std::size_t code = risky[t] ? uniform_int(0, n_risk - 1) : n_risk + noise_code(rng);
      codes[t] = cohort.vocab.code_of(kFirstCodeId + code);
    }

    PlantedTruth truth;
    truth.label_noise = is_noise[i];
    truth.logit = is_noise[i] ? 0.0 : clean_logit(d) + d.logit_noise + out.intercept;
    const double p = is_noise[i] ? 0.5 : sigmoid(truth.logit);

    MedicalCodeSequence seq;
    seq.patient_id = numbered("P", id_width, i);
    seq.tokens = tokenize(codes, cohort.vocab, max_len);
    seq.length = content_length(codes.size(), max_len);
    seq.label = unit(rng) < p ? 1 : 0;

    TabularFeatures tab;
    tab.patient_id = seq.patient_id;
    tab.record = {static_cast<double>(d.age), d.female ? "F" : "M", numbered("Z", 5, d.zip)};
    tab.demographics = encode_demographics(tab.record);
    tab.location = cohort.location_table.at(tab.record.zip);

    cohort.sequences.push_back(std::move(seq));
    cohort.features.push_back(std::move(tab));
    out.truth.push_back(truth);
  }
  cohort.splits.assign(n_patients, Split::train);
  return out;
}

void write_planted_truth(const SyntheticCohort& synthetic, const std::filesystem::path& path) {
  std::string text = "patient_id,label_noise,logit\n";
  for (std::size_t i = 0; i < synthetic.truth.size(); ++i) {
    text += synthetic.cohort.sequences[i].patient_id + "," + (synthetic.truth[i].label_noise ? "1" : "0") + "," +
            format_double(synthetic.truth[i].logit) + "\n";
  }
  write_text(path, text);
}

}  // namespace unite::data
