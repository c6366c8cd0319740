#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>

namespace smoothrl {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Named sub-streams derived from a run seed. Every source of randomness in a
/// run draws from its own stream so that enabling or disabling one component
/// (e.g. the adversary) never shifts the draws seen by another.
enum class Stream : std::uint64_t {
  env_dynamics = 1,
  policy_init = 2,
  exploration = 3,
  adversary = 4,
  evaluation = 5,
  eval_env = 6,
  replay = 7,
};

/// Per-iteration (or per-evaluation-block) training statistics shared by the
/// trainers and the experiment harness.
struct IterationStats {
  int steps_collected = 0;
  double eval_mean = 0.0;
  double eval_std = 0.0;
  double mean_kl = 0.0;
  double reg_value = 0.0;
  double adv_divergence = 0.0;
  bool accepted = false;
};

/// SplitMix64 finalizer; used to decorrelate derived seeds.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag) {
  return mix64(mix64(base) ^ (0x632be59bd9b4e019ull * (tag + 1)));
}

inline std::uint64_t derive_seed(std::uint64_t base, Stream s) {
  return derive_seed(base, static_cast<std::uint64_t>(s));
}

/// Deterministic random stream. Distribution sampling is hand-rolled on top of
/// the mt19937_64 bit stream so that identical seeds give identical draws on
/// any platform, independent of the standard library's distribution code.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double next_double() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  /// Standard normal via Box-Muller (the sine branch is discarded).
  double normal() {
    const double u1 = 1.0 - next_double();  // (0, 1]
    const double u2 = next_double();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  Vec normal_vec(int n) {
    Vec v(n);
    for (int i = 0; i < n; ++i) v[i] = normal();
    return v;
  }

  Vec uniform_vec(int n, double lo, double hi) {
    Vec v(n);
    for (int i = 0; i < n; ++i) v[i] = uniform(lo, hi);
    return v;
  }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    // Rejection sampling keeps the draw exactly uniform.
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x = gen_();
    while (x >= limit) x = gen_();
    return x % n;
  }

 private:
  std::mt19937_64 gen_;
};

inline Vec clamp(const Vec& x, const Vec& lo, const Vec& hi) {
  return x.cwiseMax(lo).cwiseMin(hi);
}

/// Formats a double with 17 significant digits, enough for exact round-trip.
inline std::string format_full(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace smoothrl
