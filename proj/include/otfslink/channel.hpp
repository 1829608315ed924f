#pragma once
// Doubly-dispersive channel sampling and the effective delay-Doppler channel.
//
// A channel between one AP-user pair is a set of L propagation paths.  Path i
// carries a delay tap l_i = round(tau_i * M * delta_f) in [0, M-1], a Doppler
// tap k_i + kappa_i with integer part k_i in [-k_max, k_max] and fractional
// part kappa_i in (-0.5, 0.5), and an independent complex Gaussian gain
// h_i ~ CN(0, beta_i).  The effective MN x MN channel matrix is the weighted
// sum of per-path unitary delay-Doppler operators,
//      H = sum_i h_i * T(l_i, k_i, kappa_i),
// kept in lazy sum-of-unitaries form so applying H to a vector costs L
// structured operator applications instead of a dense matrix product.
//
// Doppler sampling modes:
//   * uniform_index: k_i uniform integer on [-k_max, k_max]; kappa_i uniform
//     on (-0.5, 0.5) when fractional Doppler is enabled, else 0.
//   * jakes: nu_i = nu_max * cos(theta), theta ~ U[-pi, pi]; the normalized
//     shift nu_i*N*T is split into nearest-integer + fractional parts (the
//     integer part saturates at +-k_max, which can only bind when
//     frac(nu_max*N*T) >= 1/2).

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "otfslink/common.hpp"
#include "otfslink/dd_operator.hpp"

namespace otfslink {

enum class DopplerMode { uniform_index, jakes };

struct ChannelProfile {
  std::string name;
  std::vector<double> tap_delays_us;  // length L; max element = tau_max_us
  double tau_max_us = 0.0;
  DopplerMode doppler_mode = DopplerMode::uniform_index;
  int k_max = 0;
  double nu_max_hz = 0.0;  // used by jakes mode
  bool frac_doppler = false;

  int paths() const { return static_cast<int>(tap_delays_us.size()); }
};

/// 9-tap extended vehicular profile A (standard published tap delays).
inline ChannelProfile eva_profile() {
  ChannelProfile p;
  p.name = "eva";
  p.tap_delays_us = {0.0, 0.030, 0.150, 0.310, 0.370, 0.710, 1.090, 1.730, 2.510};
  p.tau_max_us = 2.510;
  return p;
}

/// 6-tap extended vehicular profile B with 10 us delay spread (standard
/// published tap delays, overridable from configuration).
inline ChannelProfile evb_profile() {
  ChannelProfile p;
  p.name = "evb";
  p.tap_delays_us = {0.0, 0.150, 4.450, 6.450, 8.550, 10.0};
  p.tau_max_us = 10.0;
  return p;
}

/// Maximum Doppler shift and integer Doppler budget for a mobile at
/// `speed_kmph` and carrier `f_c_hz`, on an N x (1/delta_f) frame:
/// nu_max = v * f_c / c, k_max = floor(nu_max * N * T) with T = 1/delta_f.
inline std::pair<double, int> doppler_from_speed(double speed_kmph, double f_c_hz,
                                                 int n_doppler, double delta_f_hz) {
  if (speed_kmph < 0.0 || f_c_hz <= 0.0 || n_doppler < 1 || delta_f_hz <= 0.0)
    throw std::invalid_argument("doppler_from_speed: invalid inputs");
  const double nu_max = (speed_kmph / 3.6) * f_c_hz / kSpeedOfLight;
  const int k_max = static_cast<int>(std::floor(nu_max * n_doppler / delta_f_hz));
  return {nu_max, k_max};
}

/// Delay tap index for a path delay in microseconds: round(tau * M * delta_f).
inline int quantize_delay(double tau_us, int m_delay, double delta_f_hz) {
  return static_cast<int>(std::llround(tau_us * 1e-6 * m_delay * delta_f_hz));
}

struct PathTap {
  int delay_tap = 0;        // in [0, M-1]
  int doppler_tap = 0;      // in [-k_max, k_max]
  double frac = 0.0;        // in (-0.5, 0.5)
  double beta = 0.0;        // per-path gain variance, > 0
};

/// Draw the L path taps of one AP-user link.  Delay taps come from the
/// quantized profile delays; Doppler taps follow the profile's mode; `betas`
/// supplies the per-path variances (length L).
inline std::vector<PathTap> sample_paths(const ChannelProfile& profile, DDDims dims,
                                         double delta_f_hz, const std::vector<double>& betas,
                                         Rng& rng) {
  const int num_paths = profile.paths();
  if (num_paths < 1) throw std::invalid_argument("sample_paths: profile has no taps");
  if (static_cast<int>(betas.size()) != num_paths)
    throw std::invalid_argument("sample_paths: betas length must equal path count");
  const int l_max = quantize_delay(profile.tau_max_us, dims.M, delta_f_hz);
  if (l_max >= dims.M)
    throw std::invalid_argument(
        "sample_paths: delay spread exceeds the frame (l_max >= M); increase M or delta_f");

  std::vector<PathTap> taps(num_paths);
  for (int i = 0; i < num_paths; ++i) {
    PathTap& tap = taps[i];
    tap.delay_tap = quantize_delay(profile.tap_delays_us[i], dims.M, delta_f_hz);
    tap.beta = betas[i];
    switch (profile.doppler_mode) {
      case DopplerMode::uniform_index:
        tap.doppler_tap = rng.uniform_int(-profile.k_max, profile.k_max);
        tap.frac = profile.frac_doppler ? rng.uniform(-0.4999, 0.4999) : 0.0;
        break;
      case DopplerMode::jakes: {
        const double theta = rng.uniform(-kPi, kPi);
        const double shift = profile.nu_max_hz * std::cos(theta) * dims.N / delta_f_hz;
        int k = static_cast<int>(std::llround(shift));
        if (k > profile.k_max) k = profile.k_max;
        if (k < -profile.k_max) k = -profile.k_max;
        tap.doppler_tap = k;
        if (profile.frac_doppler) {
          double frac = shift - k;
          frac = std::min(0.4999, std::max(-0.4999, frac));
          tap.frac = frac;
        } else {
          tap.frac = 0.0;
        }
        break;
      }
    }
  }
  return taps;
}

struct ChannelRealization {
  std::vector<PathTap> taps;
  std::vector<cplx> gains;  // h_i ~ CN(0, beta_i), independent
};

/// Independent complex Gaussian path gains with the taps' variances.
inline ChannelRealization realize_gains(const std::vector<PathTap>& taps, Rng& rng) {
  if (taps.empty()) throw std::invalid_argument("realize_gains: no taps");
  ChannelRealization real;
  real.taps = taps;
  real.gains.reserve(taps.size());
  for (const PathTap& tap : taps) real.gains.push_back(rng.cgaussian(tap.beta));
  return real;
}

/// Lazy sum-of-unitaries form of H = sum_i h_i T_i.
struct EffectiveChannel {
  DDDims dims;
  std::vector<cplx> gains;
  std::vector<DDOperator> ops;

  int paths() const { return static_cast<int>(ops.size()); }
};

inline EffectiveChannel effective_channel(const ChannelRealization& real, DDDims dims) {
  if (real.taps.size() != real.gains.size())
    throw std::invalid_argument("effective_channel: taps/gains size mismatch");
  EffectiveChannel chan;
  chan.dims = dims;
  chan.gains = real.gains;
  chan.ops.reserve(real.taps.size());
  for (const PathTap& tap : real.taps)
    chan.ops.push_back(build_dd_operator(tap.delay_tap, tap.doppler_tap, tap.frac, dims));
  return chan;
}

/// y = H x via per-path structured operator applications.
inline std::vector<cplx> apply_channel(const EffectiveChannel& chan, const std::vector<cplx>& x) {
  if (static_cast<int>(x.size()) != chan.dims.size())
    throw std::invalid_argument("apply_channel: input length mismatch");
  std::vector<cplx> y(x.size(), cplx(0.0, 0.0));
  for (int i = 0; i < chan.paths(); ++i) {
    const std::vector<cplx> t = otfslink::apply(chan.ops[i], x);
    for (std::size_t u = 0; u < y.size(); ++u) y[u] += chan.gains[i] * t[u];
  }
  return y;
}

/// y = H^H x (adjoint action).
inline std::vector<cplx> apply_channel_adjoint(const EffectiveChannel& chan,
                                               const std::vector<cplx>& x) {
  if (static_cast<int>(x.size()) != chan.dims.size())
    throw std::invalid_argument("apply_channel_adjoint: input length mismatch");
  std::vector<cplx> y(x.size(), cplx(0.0, 0.0));
  for (int i = 0; i < chan.paths(); ++i) {
    const std::vector<cplx> t = otfslink::apply_adjoint(chan.ops[i], x);
    for (std::size_t u = 0; u < y.size(); ++u) y[u] += std::conj(chan.gains[i]) * t[u];
  }
  return y;
}

/// Dense MN x MN matrix of the effective channel (small dims only).
inline Eigen::MatrixXcd materialize_channel(const EffectiveChannel& chan) {
  const int n = chan.dims.size();
  Eigen::MatrixXcd h = Eigen::MatrixXcd::Zero(n, n);
  for (int i = 0; i < chan.paths(); ++i)
    h += chan.gains[i] * materialize(chan.ops[i]);
  return h;
}

}  // namespace otfslink
