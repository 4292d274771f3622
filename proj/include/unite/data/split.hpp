#pragma once

#include <array>
#include <cstdint>

#include "unite/data/cohort.hpp"

namespace unite::data {

struct SplitRatios {
  double train = 0.64;
  double validation = 0.16;
  double test = 0.20;
};

/// Label-stratified random assignment. Split sizes follow the ratios by
/// largest remainder; positives are apportioned to each split in proportion
/// to its size, so every split's positive rate is within 1/size of the
/// cohort's. Throws ConfigError when ratios do not sum to 1 or a split would
/// be empty.
Cohort split(Cohort cohort, const SplitRatios& ratios, std::uint64_t seed);

/// Largest-remainder apportionment of total into parts proportional to weights.
std::vector<std::size_t> apportion(std::size_t total, const std::vector<double>& weights);

}  // namespace unite::data
