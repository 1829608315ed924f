#pragma once
// Shared scalar types, constants, and deterministic random-number utilities.
//
// All stochastic code in this library draws from Rng, a thin wrapper around
// std::mt19937_64 with hand-rolled uniform/Gaussian conversions.  The standard
// distributions are implementation-defined, so rolling the conversions keeps
// every sampled value bit-reproducible across toolchains, which the experiment
// layer relies on for byte-identical output under any worker count.

#include <cmath>
#include <complex>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace otfslink {

using cplx = std::complex<double>;

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kTwoPi = 2.0 * kPi;
inline constexpr double kSpeedOfLight = 299792458.0;  // m/s
inline constexpr double kBoltzmann = 1.380649e-23;    // J/K

/// Non-negative remainder of a modulo m (m > 0), valid for negative a.
inline int imod(long long a, int m) {
  long long r = a % m;
  return static_cast<int>(r < 0 ? r + m : r);
}

/// e^{j*phase}
inline cplx cis(double phase) { return {std::cos(phase), std::sin(phase)}; }

/// SplitMix64 step; used to derive well-separated child seeds from
/// (seed, index) pairs so parallel drops get independent streams.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Deterministic child-seed derivation: mixes a root seed with a stream index.
inline std::uint64_t derive_stream(std::uint64_t seed, std::uint64_t index) {
  return splitmix64(splitmix64(seed) ^ splitmix64(index * 0xA24BAED4963EE407ull + 0x9FB21C651E98DF25ull));
}

/// Deterministic RNG with portable draws (no std::*_distribution).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  /// Independent child stream for work item `index` under a root `seed`.
  static Rng substream(std::uint64_t seed, std::uint64_t index) {
    return Rng(derive_stream(seed, index));
  }

  /// Uniform in [0, 1) with 53-bit resolution.
  double uniform() { return static_cast<double>(state_() >> 11) * 0x1.0p-53; }

  /// Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in the closed range [lo, hi] via rejection-free scaling.
  int uniform_int(int lo, int hi) {
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<int>(state_() % span);  // span << 2^64: bias negligible and deterministic
  }

  /// Standard real Gaussian (Box-Muller; consumes two uniforms per pair).
  double gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double mag = std::sqrt(-2.0 * std::log(u1));
    spare_ = mag * std::sin(kTwoPi * u2);
    have_spare_ = true;
    return mag * std::cos(kTwoPi * u2);
  }

  /// Circularly-symmetric complex Gaussian CN(0, variance).
  cplx cgaussian(double variance) {
    const double s = std::sqrt(variance / 2.0);
    return {s * gaussian(), s * gaussian()};
  }

 private:
  std::mt19937_64 state_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

/// Linear-interpolated empirical quantile (same convention everywhere so the
/// CDF export and the summary statistics agree exactly).  `sorted` ascending,
/// p in [0, 1].
inline double quantile_sorted(const std::vector<double>& sorted, double p) {
  if (sorted.empty()) throw std::invalid_argument("quantile of empty sample");
  if (sorted.size() == 1) return sorted[0];
  const double pos = p * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(pos);
  if (lo + 1 >= sorted.size()) return sorted.back();
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] * (1.0 - frac) + sorted[lo + 1] * frac;
}

inline double db_to_linear(double db) { return std::pow(10.0, db / 10.0); }
inline double linear_to_db(double lin) { return 10.0 * std::log10(lin); }

}  // namespace otfslink
