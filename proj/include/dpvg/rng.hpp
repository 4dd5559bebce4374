#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace dpvg {

// Seed derivation and sampling helpers. std::mt19937_64 is fully specified by
// the standard, but the standard *distributions* are not, so every draw used
// for reproducible artifacts goes through the helpers below instead.

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Stable seed stream: fold a master seed with stream tags (round index,
// problem index, channel id, ...) one at a time.
inline std::uint64_t derive_seed(std::uint64_t master,
                                 std::initializer_list<std::uint64_t> tags) {
  std::uint64_t s = splitmix64(master);
  for (std::uint64_t t : tags) s = splitmix64(s ^ (t + 0x9e3779b97f4a7c15ULL));
  return s;
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 bits of precision.
  double next_double() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  // Uniform integer in [0, n). Rejection sampling keeps it exactly uniform.
  std::uint64_t next_below(std::uint64_t n) {
    if (n <= 1) return 0;
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  bool next_bool() { return (engine_() & 1ULL) != 0; }

  // Index draw from an (unnormalized) weight vector by CDF inversion.
  std::size_t next_weighted(std::span<const double> weights) {
    double total = 0.0;
    for (double w : weights) total += w;
    double u = next_double() * total;
    double acc = 0.0;
    for (std::size_t i = 0; i + 1 < weights.size(); ++i) {
      acc += weights[i];
      if (u < acc) return i;
    }
    return weights.empty() ? 0 : weights.size() - 1;
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace dpvg
