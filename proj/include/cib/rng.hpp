#pragma once

#include <cstdint>
#include <vector>

namespace cib {

// SplitMix64. Used everywhere a seeded stream is needed so that results are
// reproducible across platforms and standard-library versions (std::mt19937
// distributions are not portable).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1).
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // Uniform integer in [0, n).
  int next_below(int n) { return static_cast<int>(next_u64() % static_cast<std::uint64_t>(n)); }

  // Random probability vector of length k with entries bounded away from zero
  // by floor/(1 + k*floor) after normalization.
  std::vector<double> simplex_point(int k, double floor_mass = 0.0) {
    std::vector<double> v(k);
    double total = 0.0;
    for (int i = 0; i < k; ++i) {
      v[i] = floor_mass + next_double();
      total += v[i];
    }
    for (int i = 0; i < k; ++i) v[i] /= total;
    return v;
  }

  // Derive an independent stream, e.g. per (t, cell) so scheduling order does
  // not affect results.
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
    Rng r(seed ^ (a * 0x9e3779b97f4a7c15ULL) ^ (b * 0xd1b54a32d192ed03ULL));
    r.next_u64();
    return r.next_u64();
  }

 private:
  std::uint64_t state_;
};

}  // namespace cib
