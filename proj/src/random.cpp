#include "unite/random.hpp"

namespace unite {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t hash_string(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t derive_seed(std::uint64_t seed, Stream stream, std::uint64_t index) {
  return splitmix64(splitmix64(splitmix64(seed) ^ static_cast<std::uint64_t>(stream)) ^ index);
}

Rng make_rng(std::uint64_t seed, Stream stream, std::uint64_t index) {
  return Rng(derive_seed(seed, stream, index));
}

ad::Tensor standard_normal(Rng& rng, ad::Tensor::Shape shape) {
  ad::Tensor t(std::move(shape));
  std::normal_distribution<double> normal(0.0, 1.0);
  for (double& x : t.data()) x = normal(rng);
  return t;
}

}  // namespace unite
