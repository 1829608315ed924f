// Tests for channel profiles, Doppler budgets, path sampling, gain
// realization, and the lazy effective delay-Doppler channel.

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <complex>
#include <vector>

#include <Eigen/Dense>

#include "otfslink/channel.hpp"

using namespace otfslink;

namespace {

std::vector<double> uniform_betas(int num_paths, double total = 1.0) {
  return std::vector<double>(num_paths, total / num_paths);
}

}  // namespace

TEST_CASE("built-in profiles carry the standard tap sets") {
  const ChannelProfile eva = eva_profile();
  REQUIRE(eva.paths() == 9);
  REQUIRE(eva.tap_delays_us.front() == 0.0);
  REQUIRE(eva.tau_max_us == Catch::Approx(2.510));
  REQUIRE(eva.tap_delays_us.back() == Catch::Approx(eva.tau_max_us));

  const ChannelProfile evb = evb_profile();
  REQUIRE(evb.paths() == 6);
  REQUIRE(evb.tau_max_us == Catch::Approx(10.0));
  REQUIRE(evb.tap_delays_us.back() == Catch::Approx(10.0));
}

TEST_CASE("Doppler budget from mobile speed") {
  const auto [nu_max, k_max] = doppler_from_speed(300.0, 4e9, 128, 15e3);
  REQUIRE(std::abs(nu_max - 1111.0) < 1.0);  // v*f_c/c at 300 km/h, 4 GHz
  REQUIRE(k_max == 9);

  const auto [nu_zero, k_zero] = doppler_from_speed(0.0, 4e9, 128, 15e3);
  REQUIRE(nu_zero == 0.0);
  REQUIRE(k_zero == 0);

  REQUIRE_THROWS_AS(doppler_from_speed(10.0, -1.0, 8, 15e3), std::invalid_argument);
}

TEST_CASE("delay quantization rounds to the lattice") {
  // 512 x 15 kHz grid: 2.51 us lands on tap 19.
  REQUIRE(quantize_delay(2.510, 512, 15e3) == 19);
  REQUIRE(quantize_delay(0.0, 512, 15e3) == 0);
  // Coarse grid collapses nearby taps onto shared delay bins.
  REQUIRE(quantize_delay(0.030, 32, 15e3) == 0);
  REQUIRE(quantize_delay(2.510, 32, 15e3) == 1);
}

TEST_CASE("path sampling respects the profile") {
  const DDDims dims{32, 16};

  SECTION("uniform integer Doppler mode") {
    ChannelProfile prof = eva_profile();
    prof.k_max = 3;
    prof.frac_doppler = false;
    Rng rng(31u);
    std::vector<int> hist(7, 0);
    for (int trial = 0; trial < 500; ++trial) {
      const auto taps = sample_paths(prof, dims, 15e3, uniform_betas(prof.paths()), rng);
      REQUIRE(static_cast<int>(taps.size()) == 9);
      for (const PathTap& tap : taps) {
        REQUIRE(tap.delay_tap >= 0);
        REQUIRE(tap.delay_tap < dims.M);
        REQUIRE(tap.doppler_tap >= -3);
        REQUIRE(tap.doppler_tap <= 3);
        REQUIRE(tap.frac == 0.0);
        REQUIRE(tap.beta == Catch::Approx(1.0 / 9.0));
        ++hist[tap.doppler_tap + 3];
      }
      // The largest quantized delay is the profile's delay spread.
      int l_max = 0;
      for (const PathTap& tap : taps) l_max = std::max(l_max, tap.delay_tap);
      REQUIRE(l_max == quantize_delay(prof.tau_max_us, dims.M, 15e3));
    }
    for (int count : hist) REQUIRE(count > 0);  // every index drawn at least once
  }

  SECTION("fractional Doppler draws stay in the open unit interval") {
    ChannelProfile prof = eva_profile();
    prof.k_max = 2;
    prof.frac_doppler = true;
    Rng rng(77u);
    bool saw_nonzero = false;
    for (int trial = 0; trial < 200; ++trial) {
      const auto taps = sample_paths(prof, dims, 15e3, uniform_betas(prof.paths()), rng);
      for (const PathTap& tap : taps) {
        REQUIRE(std::abs(tap.frac) < 0.5);
        saw_nonzero = saw_nonzero || tap.frac != 0.0;
      }
    }
    REQUIRE(saw_nonzero);
  }

  SECTION("jakes mode produces bounded, symmetric normalized shifts") {
    ChannelProfile prof = eva_profile();
    prof.doppler_mode = DopplerMode::jakes;
    prof.nu_max_hz = 1111.88;
    prof.frac_doppler = true;
    const DDDims jdims{32, 128};
    prof.k_max = doppler_from_speed(300.0, 4e9, jdims.N, 15e3).second;
    REQUIRE(prof.k_max == 9);
    Rng rng(13u);
    double sum_shift = 0.0;
    int count = 0;
    const double shift_max = prof.nu_max_hz * jdims.N / 15e3;
    for (int trial = 0; trial < 300; ++trial) {
      const auto taps = sample_paths(prof, jdims, 15e3, uniform_betas(prof.paths()), rng);
      for (const PathTap& tap : taps) {
        REQUIRE(std::abs(tap.doppler_tap) <= prof.k_max);
        REQUIRE(std::abs(tap.frac) < 0.5);
        const double shift = tap.doppler_tap + tap.frac;
        REQUIRE(std::abs(shift) <= shift_max + 1e-9);
        sum_shift += shift;
        ++count;
      }
    }
    // cos(theta) is symmetric about zero: mean normalized shift ~ 0 within
    // 3 standard errors (std of nu*N*T is shift_max/sqrt(2)).
    const double se = (shift_max / std::sqrt(2.0)) / std::sqrt(static_cast<double>(count));
    REQUIRE(std::abs(sum_shift / count) < 3.0 * se);
  }

  SECTION("delay spread exceeding the frame is rejected") {
    ChannelProfile prof;
    prof.name = "too-long";
    prof.tap_delays_us = {0.0, 100.0};
    prof.tau_max_us = 100.0;
    Rng rng(1u);
    REQUIRE_THROWS_AS(sample_paths(prof, DDDims{4, 3}, 15e3, uniform_betas(2), rng),
                      std::invalid_argument);
  }
}

TEST_CASE("gain realization matches the per-path variances") {
  std::vector<PathTap> taps(2);
  taps[0] = {0, 0, 0.0, 0.8};
  taps[1] = {1, 1, 0.0, 0.2};

  Rng rng(404u);
  const int trials = 100000;
  double p0 = 0.0, p1 = 0.0;
  cplx cross(0.0, 0.0);
  for (int t = 0; t < trials; ++t) {
    const ChannelRealization real = realize_gains(taps, rng);
    p0 += std::norm(real.gains[0]);
    p1 += std::norm(real.gains[1]);
    cross += real.gains[0] * std::conj(real.gains[1]);
  }
  p0 /= trials;
  p1 /= trials;
  cross /= static_cast<double>(trials);
  // |h|^2 is exponential with mean beta, so its std is beta.
  REQUIRE(std::abs(p0 - 0.8) < 3.0 * 0.8 / std::sqrt(static_cast<double>(trials)));
  REQUIRE(std::abs(p1 - 0.2) < 3.0 * 0.2 / std::sqrt(static_cast<double>(trials)));
  const double se_cross = std::sqrt(0.8 * 0.2 / trials);
  REQUIRE(std::abs(cross.real()) < 3.0 * se_cross);
  REQUIRE(std::abs(cross.imag()) < 3.0 * se_cross);

  std::vector<PathTap> degenerate(1);
  degenerate[0] = {0, 0, 0.0, 0.0};
  const ChannelRealization zero = realize_gains(degenerate, rng);
  REQUIRE(zero.gains[0] == cplx(0.0, 0.0));
}

TEST_CASE("effective channel equals the dense sum of scaled operators") {
  const DDDims dims{4, 3};
  Rng rng(555u);

  SECTION("single unit tap with zero shifts acts as identity") {
    ChannelRealization real;
    real.taps = {{0, 0, 0.0, 1.0}};
    real.gains = {cplx(1.0, 0.0)};
    const EffectiveChannel chan = effective_channel(real, dims);
    std::vector<cplx> x(dims.size());
    for (auto& v : x) v = rng.cgaussian(1.0);
    const auto y = apply_channel(chan, x);
    for (int u = 0; u < dims.size(); ++u)
      REQUIRE(std::abs(y[u] - x[u]) < 1e-12);
  }

  SECTION("structured application matches the dense matrix") {
    std::vector<PathTap> taps(2);
    taps[0] = {1, 1, 0.25, 0.7};
    taps[1] = {2, -1, -0.3, 0.3};
    for (int rep = 0; rep < 5; ++rep) {
      const ChannelRealization real = realize_gains(taps, rng);
      const EffectiveChannel chan = effective_channel(real, dims);
      const Eigen::MatrixXcd dense = materialize_channel(chan);
      Eigen::VectorXcd x(dims.size());
      for (int u = 0; u < dims.size(); ++u) x(u) = rng.cgaussian(1.0);
      const Eigen::VectorXcd want = dense * x;
      const Eigen::VectorXcd want_adj = dense.adjoint() * x;

      std::vector<cplx> xv(x.data(), x.data() + x.size());
      const auto got = apply_channel(chan, xv);
      const auto got_adj = apply_channel_adjoint(chan, xv);
      for (int u = 0; u < dims.size(); ++u) {
        REQUIRE(std::abs(got[u] - want(u)) < 1e-10);
        REQUIRE(std::abs(got_adj[u] - want_adj(u)) < 1e-10);
      }
    }
  }

  SECTION("application is linear") {
    std::vector<PathTap> taps(2);
    taps[0] = {1, 0, 0.0, 0.5};
    taps[1] = {3, 2, 0.1, 0.5};
    const ChannelRealization real = realize_gains(taps, rng);
    const EffectiveChannel chan = effective_channel(real, dims);
    std::vector<cplx> x(dims.size()), y(dims.size());
    for (auto& v : x) v = rng.cgaussian(1.0);
    for (auto& v : y) v = rng.cgaussian(1.0);
    const cplx a(0.3, -1.1), b(-0.7, 0.2);
    std::vector<cplx> mix(dims.size());
    for (int u = 0; u < dims.size(); ++u) mix[u] = a * x[u] + b * y[u];
    const auto lhs = apply_channel(chan, mix);
    const auto fx = apply_channel(chan, x);
    const auto fy = apply_channel(chan, y);
    for (int u = 0; u < dims.size(); ++u)
      REQUIRE(std::abs(lhs[u] - (a * fx[u] + b * fy[u])) < 1e-12);
  }

  SECTION("mean squared Frobenius norm is MN times the variance sum") {
    std::vector<PathTap> taps(2);
    taps[0] = {1, 1, 0.0, 0.6};
    taps[1] = {2, -1, 0.0, 0.4};
    const double want = dims.size() * 1.0;
    const int trials = 3000;
    double sum = 0.0, sumsq = 0.0;
    for (int t = 0; t < trials; ++t) {
      const ChannelRealization real = realize_gains(taps, rng);
      const EffectiveChannel chan = effective_channel(real, dims);
      const double fro2 = materialize_channel(chan).squaredNorm();
      sum += fro2;
      sumsq += fro2 * fro2;
    }
    const double mean = sum / trials;
    const double var = sumsq / trials - mean * mean;
    const double se = std::sqrt(var / trials);
    REQUIRE(std::abs(mean - want) < 3.0 * se);
  }
}
