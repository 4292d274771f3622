#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "unite/autodiff/tensor.hpp"

namespace unite {

using Rng = std::mt19937_64;

/// Independent substreams of one run seed.
enum class Stream : std::uint64_t {
  init = 1,
  shuffle = 2,
  monte_carlo = 3,
  split = 4,
  generate = 5,
  predict = 6,
  kmeans = 7,
  validation = 8,
  warmup = 9,
};

std::uint64_t splitmix64(std::uint64_t x);
/// 64-bit FNV-1a.
std::uint64_t hash_string(std::string_view s);
std::uint64_t derive_seed(std::uint64_t seed, Stream stream, std::uint64_t index = 0);
Rng make_rng(std::uint64_t seed, Stream stream, std::uint64_t index = 0);

ad::Tensor standard_normal(Rng& rng, ad::Tensor::Shape shape);

}  // namespace unite
