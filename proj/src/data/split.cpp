#include "unite/data/split.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "unite/error.hpp"
#include "unite/random.hpp"

namespace unite::data {

std::vector<std::size_t> apportion(std::size_t total, const std::vector<double>& weights) {
  const double wsum = std::accumulate(weights.begin(), weights.end(), 0.0);
  std::vector<std::size_t> counts(weights.size(), 0);
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t k = 0; k < weights.size(); ++k) {
    const double quota = wsum > 0 ? static_cast<double>(total) * weights[k] / wsum : 0.0;
    counts[k] = static_cast<std::size_t>(std::floor(quota));
    assigned += counts[k];
    remainders.emplace_back(quota - std::floor(quota), k);
  }
  // Largest remainder first; ties go to the earlier part.
  std::stable_sort(remainders.begin(), remainders.end(), [](auto& a, auto& b) { return a.first > b.first; });
  for (std::size_t r = 0; assigned < total && r < remainders.size(); ++r, ++assigned) ++counts[remainders[r].second];
  return counts;
}

Cohort split(Cohort cohort, const SplitRatios& ratios, std::uint64_t seed) {
  const std::vector<double> w{ratios.train, ratios.validation, ratios.test};
  for (double r : w)
    if (!(r >= 0.0)) throw ConfigError("split ratios must be non-negative");
  if (std::abs(w[0] + w[1] + w[2] - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1");

  const std::size_t n = cohort.size();
  const std::vector<std::size_t> sizes = apportion(n, w);
  for (std::size_t k = 0; k < 3; ++k) {
    if (sizes[k] == 0) {
      throw ConfigError(std::string("split '") + split_name(static_cast<Split>(k)) + "' would receive 0 patients");
    }
  }

  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < n; ++i) (cohort.sequences[i].label ? pos : neg).push_back(i);
  Rng rng = make_rng(seed, Stream::split);
  std::shuffle(pos.begin(), pos.end(), rng);
  std::shuffle(neg.begin(), neg.end(), rng);

  std::vector<double> size_weights(sizes.begin(), sizes.end());
  const std::vector<std::size_t> pos_counts = apportion(pos.size(), size_weights);

  cohort.splits.assign(n, Split::train);
  std::size_t p = 0, q = 0;
  for (std::size_t k = 0; k < 3; ++k) {
    const std::size_t n_pos = std::min(pos_counts[k], sizes[k]);
    for (std::size_t c = 0; c < n_pos; ++c) cohort.splits[pos[p++]] = static_cast<Split>(k);
    for (std::size_t c = n_pos; c < sizes[k]; ++c) cohort.splits[neg[q++]] = static_cast<Split>(k);
  }
  return cohort;
}

}  // namespace unite::data
