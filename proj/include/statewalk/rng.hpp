#pragma once
// Seeded randomness with documented substream derivation.
//
// Every consumer owns an independent stream derived from the master seed and a
// list of 64-bit tags  (domain tag, then indices such as split id, instance
// index, sample index).  Derivation: h <- splitmix64(seed), then for each tag
// h <- splitmix64(h ^ tag); the final h seeds a std::mt19937_64, whose output
// sequence is fixed by the C++ standard, so all draws are reproducible across
// platforms.  Distribution transforms below are hand-rolled for the same
// reason: the standard library's distribution objects are implementation
// defined and would break cross-platform determinism.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace statewalk {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Domain tags; first tag of every derived stream.
namespace streams {
constexpr std::uint64_t kTables = 1;     // envgen table construction
constexpr std::uint64_t kInstance = 2;   // one problem instance (split, idx)
constexpr std::uint64_t kInit = 3;       // parameter initialization
constexpr std::uint64_t kShuffle = 4;    // pretraining permutation (epoch)
constexpr std::uint64_t kRollout = 5;    // RL rollouts (step, prompt, rollout)
constexpr std::uint64_t kSweep = 6;      // eval sweeps (seed, problem, temp, sample)
constexpr std::uint64_t kTree = 7;       // tree-report rollouts (problem, rollout)
}  // namespace streams

class Rng {
 public:
  explicit Rng(std::uint64_t key) : eng_(key) {}

  template <typename... Tags>
  static Rng derive(std::uint64_t seed, Tags... tags) {
    std::uint64_t h = splitmix64(seed);
    ((h = splitmix64(h ^ static_cast<std::uint64_t>(tags))), ...);
    return Rng(h);
  }

  std::uint64_t next_u64() { return eng_(); }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform on (0, 1]; safe under log().
  double uniform_pos() { return 1.0 - uniform(); }

  // Unbiased integer on [0, n) by rejection.
  std::int64_t uniform_int(std::int64_t n) {
    const std::uint64_t un = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = (UINT64_MAX / un) * un;
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return static_cast<std::int64_t>(x % un);
  }

  // Inclusive-range integer on [lo, hi].
  std::int64_t uniform_range(std::int64_t lo, std::int64_t hi) {
    return lo + uniform_int(hi - lo + 1);
  }

  // Standard normal via Box-Muller (cosine branch only; no hidden pair state).
  double normal() {
    const double u1 = uniform_pos();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  // Gamma(alpha, 1) via Marsaglia-Tsang squeeze; alpha < 1 uses the boost
  // Gamma(alpha) = Gamma(alpha+1) * U^(1/alpha).
  double gamma(double alpha) {
    if (alpha < 1.0) {
      const double g = gamma(alpha + 1.0);
      return g * std::pow(uniform_pos(), 1.0 / alpha);
    }
    const double d = alpha - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x, v;
      do {
        x = normal();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      const double u = uniform_pos();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
      if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
  }

  // Symmetric Dirichlet(alpha 1_n) via normalized Gamma draws.
  std::vector<double> dirichlet(double alpha, std::size_t n) {
    std::vector<double> row(n);
    double total = 0.0;
    for (auto& x : row) {
      x = gamma(alpha);
      total += x;
    }
    for (auto& x : row) x /= total;
    return row;
  }

  // Categorical draw by CDF walk over `probs` (assumed to sum to ~1).
  std::size_t categorical(const double* probs, std::size_t n) {
    const double u = uniform();
    double acc = 0.0;
    for (std::size_t i = 0; i + 1 < n; ++i) {
      acc += probs[i];
      if (u < acc) return i;
    }
    return n - 1;
  }

 private:
  std::mt19937_64 eng_;
};

}  // namespace statewalk
