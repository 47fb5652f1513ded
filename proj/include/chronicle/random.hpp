#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace chronicle {

/// Uniform double in [0, 1) from the top 53 bits.
inline double unit_uniform(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// SplitMix64 finaliser; derives independent stream seeds from (seed, index).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Index drawn with probability proportional to `w`.
inline std::size_t sample_index(const std::vector<double>& w, std::mt19937_64& rng) {
  double total = 0.0;
  for (double x : w) total += x;
  const double u = unit_uniform(rng) * total;
  double acc = 0.0;
  std::size_t last = 0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (w[i] <= 0.0) continue;
    acc += w[i];
    last = i;
    if (u < acc) return i;
  }
  return last;
}

/// Integer in [0, n).
inline std::size_t uniform_index(std::size_t n, std::mt19937_64& rng) {
  return static_cast<std::size_t>(unit_uniform(rng) * static_cast<double>(n));
}

/// Number of failures before the first success, success probability p.
inline std::int64_t geometric(double p, std::mt19937_64& rng) {
  if (p >= 1.0) return 0;
  const double u = 1.0 - unit_uniform(rng);  // (0, 1]
  return static_cast<std::int64_t>(std::floor(std::log(u) / std::log1p(-p)));
}

template <class T>
void shuffle(std::vector<T>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::swap(v[i - 1], v[static_cast<std::size_t>(rng() % i)]);
  }
}

}  // namespace chronicle
