#pragma once

#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

namespace qecascade {

// Portable randomness. std::mt19937_64's output sequence is fixed by the
// standard, but the std:: distributions are not, so bounded draws and the
// shuffle are spelled out here to keep seeded results identical everywhere.

/// Derives independent stream seeds from a root seed (SplitMix64 finalizer).
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Uniform integer in [0, bound] by rejection sampling on the top bits.
inline std::uint64_t uniform_index(std::mt19937_64& rng, std::uint64_t bound) {
  if (bound == 0) return 0;
  const std::uint64_t range = bound + 1;
  if (range == 0) return rng();  // bound == UINT64_MAX
  const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % range + 1) % range;
  std::uint64_t x;
  do {
    x = rng();
  } while (x > limit);
  return x % range;
}

/// Fisher-Yates shuffle of 0..n-1, swapping from the back.
inline std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    auto j = static_cast<std::size_t>(uniform_index(rng, i - 1));
    std::swap(perm[i - 1], perm[j]);
  }
  return perm;
}

}  // namespace qecascade
