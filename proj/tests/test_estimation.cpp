// Tests for embedded-pilot and superimposed-pilot gain estimation: guard
// bookkeeping, interference variances, MMSE coefficients, the full-frame SP
// estimator, and the Monte-Carlo oracles for their statistical contracts.

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <complex>
#include <vector>

#include <Eigen/Dense>

#include "otfslink/estimation.hpp"

using namespace otfslink;

TEST_CASE("pilot-region bookkeeping") {
  EpConfig cfg;
  cfg.k_max = 1;
  cfg.l_max = 5;
  cfg.guard_extra = 0;
  REQUIRE(cfg.n_guard() == 55);  // (2*5+1)*(4*1+1)

  const DDDims dims{32, 16};
  REQUIRE(ep_user_capacity(dims, cfg.n_guard()) == 9);  // floor(512/55)

  const auto anchors = ep_pilot_positions(dims, cfg, 9);
  REQUIRE(anchors.size() == 9);
  // Anchors start disjoint linear blocks of n_guard samples each.
  for (int q = 0; q < 9; ++q) {
    const int u = anchors[q].first * dims.M + anchors[q].second;
    REQUIRE(u == q * 55);
  }
  REQUIRE_THROWS_AS(ep_pilot_positions(dims, cfg, 10), std::invalid_argument);

  const auto [pilot, data] = ep_power_split(0.2, 0.25);
  REQUIRE(pilot == Catch::Approx(0.05));
  REQUIRE(data == Catch::Approx(0.15));
  REQUIRE_THROWS_AS(ep_power_split(1.0, 1.5), std::invalid_argument);
}

TEST_CASE("own-user leakage variance") {
  EpConfig cfg;
  cfg.data_power = 1.0;

  SECTION("narrow guard on a short Doppler axis") {
    cfg.k_max = 0;
    cfg.guard_extra = 0;
    REQUIRE(ep_interference_i1_var(cfg, 1.0, 1.0, DDDims{4, 4}) ==
            Catch::Approx(3.0 / 16.0).epsilon(1e-14));
  }

  SECTION("full guard removes the leakage entirely") {
    cfg.k_max = 1;
    cfg.guard_extra = 0;  // width 5 == N
    REQUIRE(ep_interference_i1_var(cfg, 1.0, 1.0, DDDims{4, 5}) == 0.0);
  }

  SECTION("mid-size frame") {
    cfg.k_max = 2;
    cfg.guard_extra = 0;
    cfg.data_power = 0.5;
    REQUIRE(ep_interference_i1_var(cfg, 1.0, 2.0, DDDims{8, 20}) ==
            Catch::Approx(0.0275).epsilon(1e-14));
  }

  SECTION("guard wider than the Doppler axis is rejected") {
    cfg.k_max = 2;
    REQUIRE_THROWS_AS(ep_interference_i1_var(cfg, 1.0, 1.0, DDDims{4, 8}),
                      std::invalid_argument);
  }
}

TEST_CASE("other-user leakage variance") {
  REQUIRE(ep_interference_i2_var({}, DDDims{8, 10}) == 0.0);

  std::vector<UserLink> one_other{{1.0, 1.0, 0.0, 1.0}};
  REQUIRE(ep_interference_i2_var(one_other, DDDims{8, 10}) == Catch::Approx(0.1));
  REQUIRE(ep_interference_i2_var(one_other, DDDims{8, 20}) == Catch::Approx(0.05));

  std::vector<UserLink> two_others{{0.5, 2.0, 0.0, 1.5}, {1.0, 1.0, 0.0, 0.5}};
  REQUIRE(ep_interference_i2_var(two_others, DDDims{8, 10}) ==
          Catch::Approx((0.5 * 2.0 * 1.5 + 0.5) / 10.0));
}

TEST_CASE("embedded-pilot MMSE coefficients") {
  const DDDims dims{8, 20};

  SECTION("single-user single-path reference point") {
    EpConfig cfg;
    cfg.k_max = 2;
    cfg.guard_extra = 0;
    cfg.pilot_power = 10.0;
    cfg.data_power = 1.0;
    const EstimateQuality quality = ep_mmse_coeff(cfg, {1.0}, 1.0, 0.0, dims);
    // I1 = (20-9)/400 = 0.0275; c = sqrt(10)/(10+0.0275+1); gamma = 10/11.0275.
    REQUIRE(quality.c[0] == Catch::Approx(std::sqrt(10.0) / 11.0275).epsilon(1e-12));
    REQUIRE(quality.gamma[0] == Catch::Approx(10.0 / 11.0275).epsilon(1e-12));
  }

  SECTION("perfect-estimation limit and degenerate prior") {
    EpConfig cfg;
    cfg.k_max = 2;
    cfg.pilot_power = 1e12;
    cfg.data_power = 1.0;
    const EstimateQuality high = ep_mmse_coeff(cfg, {0.7, 0.0}, 1.0, 0.3, dims);
    REQUIRE(high.gamma[0] == Catch::Approx(0.7).epsilon(1e-9));
    REQUIRE(high.gamma[1] == 0.0);
    REQUIRE(high.c[1] == 0.0);
  }

  SECTION("bounds and monotonicity in pilot power") {
    Rng rng(909u);
    for (int rep = 0; rep < 50; ++rep) {
      EpConfig cfg;
      cfg.k_max = 2;
      cfg.guard_extra = rng.uniform_int(0, 1);
      cfg.data_power = rng.uniform(0.0, 5.0);
      const double eta = rng.uniform(0.1, 1.0);
      const double i2 = rng.uniform(0.0, 2.0);
      const std::vector<double> betas{rng.uniform(0.01, 2.0), rng.uniform(0.01, 2.0)};
      double prev0 = 0.0;
      for (double rho_pil : {0.1, 1.0, 10.0, 100.0, 1000.0}) {
        cfg.pilot_power = rho_pil;
        const EstimateQuality q = ep_mmse_coeff(cfg, betas, eta, i2, dims);
        for (std::size_t i = 0; i < betas.size(); ++i) {
          REQUIRE(q.gamma[i] > 0.0);
          REQUIRE(q.gamma[i] <= betas[i] + 1e-15);
          REQUIRE(q.c[i] > 0.0);
        }
        REQUIRE(q.gamma[0] >= prev0);
        prev0 = q.gamma[0];
      }
    }
  }
}

TEST_CASE("embedded-pilot estimator statistics") {
  const DDDims dims{8, 20};
  EpConfig cfg;
  cfg.k_max = 2;
  cfg.guard_extra = 0;
  cfg.pilot_power = 10.0;
  cfg.data_power = 1.0;
  const double eta = 1.0;
  const std::vector<double> betas{0.6, 0.4};
  double beta_sum = 1.0;
  const double i1 = ep_interference_i1_var(cfg, eta, beta_sum, dims);
  const double i2 = ep_interference_i2_var({{1.0, 1.0, 0.0, 0.8}}, dims);
  const EstimateQuality quality = ep_mmse_coeff(cfg, betas, eta, i2, dims);

  SECTION("noise-free interference-free observation recovers the scaled gain") {
    EpConfig clean = cfg;
    Rng rng(3u);
    std::vector<cplx> gains{cplx(0.3, -0.2), cplx(-0.1, 0.5)};
    const auto obs = ep_simulate_observation(gains, clean, eta, 0.0, 0.0, rng, 0.0);
    const auto est = ep_estimate(obs, quality);
    const double pilot_gain = std::sqrt(cfg.pilot_power * eta);
    for (int i = 0; i < 2; ++i)
      REQUIRE(std::abs(est[i] - quality.c[i] * pilot_gain * gains[i]) < 1e-14);
  }

  SECTION("Monte-Carlo estimate variance, orthogonality, and MSE") {
    const int trials = 10000;
    Rng rng(71u);
    std::vector<double> p_est(2, 0.0), p_est_sq(2, 0.0);
    std::vector<cplx> ortho(2, cplx(0.0, 0.0));
    std::vector<double> ortho_sq(2, 0.0);
    double mse = 0.0, mse_sq = 0.0;
    for (int t = 0; t < trials; ++t) {
      std::vector<cplx> gains(2);
      for (int i = 0; i < 2; ++i) gains[i] = rng.cgaussian(betas[i]);
      const auto obs = ep_simulate_observation(gains, cfg, eta, i1, i2, rng);
      const auto est = ep_estimate(obs, quality);
      double err = 0.0;
      for (int i = 0; i < 2; ++i) {
        const double pw = std::norm(est[i]);
        p_est[i] += pw;
        p_est_sq[i] += pw * pw;
        const cplx o = (gains[i] - est[i]) * std::conj(est[i]);
        ortho[i] += o;
        ortho_sq[i] += std::norm(o);
        err += std::norm(gains[i] - est[i]);
      }
      mse += err;
      mse_sq += err * err;
    }
    for (int i = 0; i < 2; ++i) {
      const double mean = p_est[i] / trials;
      const double se = std::sqrt((p_est_sq[i] / trials - mean * mean) / trials);
      REQUIRE(std::abs(mean - quality.gamma[i]) < 3.0 * se);

      const cplx omean = ortho[i] / static_cast<double>(trials);
      const double ose = std::sqrt((ortho_sq[i] / trials - std::norm(omean)) / trials);
      REQUIRE(std::abs(omean) < 3.0 * ose);
    }
    const double mse_mean = mse / trials;
    const double mse_se = std::sqrt((mse_sq / trials - mse_mean * mse_mean) / trials);
    const double mse_want = mse_closed_form(betas, quality.gamma);
    REQUIRE(std::abs(mse_mean - mse_want) < 3.0 * mse_se);
  }
}

namespace {

// Superimposed-pilot frame simulator for one receiving AP and K users:
// y = Xi_psi(target) h_target + w_tilde, with
// w_tilde = own data echo + other users' (pilot + data) echoes + unit noise.
struct SpFrame {
  Eigen::VectorXcd y;
  Eigen::MatrixXcd xi_target;      // equivalent pilot matrix of the target
  Eigen::VectorXcd h_target;       // true gains of the target
  Eigen::VectorXcd w_tilde;        // everything except the target pilot echo
};

SpFrame simulate_sp_frame(const std::vector<std::vector<DDOperator>>& ops,
                          const std::vector<std::vector<double>>& betas,
                          const std::vector<UserLink>& users, int target, DDDims dims,
                          Rng& rng) {
  const int n = dims.size();
  Eigen::VectorXcd noise(n);
  for (int u = 0; u < n; ++u) noise(u) = rng.cgaussian(1.0);

  SpFrame frame;
  frame.w_tilde = noise;
  for (int q = 0; q < static_cast<int>(ops.size()); ++q) {
    std::vector<cplx> psi(n), xd(n);
    for (int u = 0; u < n; ++u) {
      psi[u] = rng.cgaussian(users[q].pilot_power);
      xd[u] = rng.cgaussian(users[q].data_power);
    }
    Eigen::VectorXcd h(static_cast<int>(ops[q].size()));
    for (int i = 0; i < h.size(); ++i) h(i) = rng.cgaussian(betas[q][i]);

    const Eigen::MatrixXcd xi_psi = sp_equivalent_pilot_matrix(ops[q], users[q].eta, psi);
    const Eigen::MatrixXcd xi_d = sp_equivalent_pilot_matrix(ops[q], users[q].eta, xd);
    if (q == target) {
      frame.xi_target = xi_psi;
      frame.h_target = h;
      frame.w_tilde += xi_d * h;  // own data rides on the same channel
    } else {
      frame.w_tilde += (xi_psi + xi_d) * h;
    }
  }
  frame.y = frame.xi_target * frame.h_target + frame.w_tilde;
  return frame;
}

}  // namespace

TEST_CASE("superimposed-pilot noise covariance scalar") {
  // Single user, pilot only: the scalar is the noise floor.
  std::vector<UserLink> solo{{1.0, 0.0, 1.0, 1.0}};
  REQUIRE(sp_noise_covariance(solo, 0) == Catch::Approx(1.0));

  // Two users, unit powers and unit variance sums: 2 (data) + 1 (pilot) + 1.
  std::vector<UserLink> pair{{1.0, 1.0, 1.0, 1.0}, {1.0, 1.0, 1.0, 1.0}};
  REQUIRE(sp_noise_covariance(pair, 0) == Catch::Approx(4.0));
  REQUIRE_THROWS_AS(sp_noise_covariance(pair, 2), std::invalid_argument);
}

TEST_CASE("interference-plus-noise covariance matches the frame simulator") {
  const DDDims dims{4, 3};
  const int n = dims.size();
  Rng rng(2718u);

  // Two users, two paths each.
  std::vector<std::vector<DDOperator>> ops(2);
  ops[0] = {build_dd_operator(0, 1, 0.2, dims), build_dd_operator(2, -1, -0.1, dims)};
  ops[1] = {build_dd_operator(1, 0, 0.3, dims), build_dd_operator(3, 1, 0.0, dims)};
  std::vector<std::vector<double>> betas{{0.6, 0.4}, {0.3, 0.2}};
  std::vector<UserLink> users{{1.0, 0.8, 1.2, 1.0}, {0.7, 0.5, 0.9, 0.5}};

  const double want = sp_noise_covariance(users, 0);

  const int trials = 10000;
  Eigen::MatrixXcd cov = Eigen::MatrixXcd::Zero(n, n);
  std::vector<double> diag_sq(n, 0.0);
  for (int t = 0; t < trials; ++t) {
    const SpFrame frame = simulate_sp_frame(ops, betas, users, 0, dims, rng);
    cov += frame.w_tilde * frame.w_tilde.adjoint();
    for (int u = 0; u < n; ++u) {
      const double p = std::norm(frame.w_tilde(u));
      diag_sq[u] += p * p;
    }
  }
  cov /= static_cast<double>(trials);

  for (int u = 0; u < n; ++u) {
    const double mean = cov(u, u).real();
    const double se = std::sqrt((diag_sq[u] / trials - mean * mean) / trials);
    REQUIRE(std::abs(mean - want) < 3.0 * se);
  }
  // Off-diagonals vanish in expectation; the entry scale is want/sqrt(trials).
  const double off_tol = 4.0 * want / std::sqrt(static_cast<double>(trials));
  for (int u = 0; u < n; ++u)
    for (int v = 0; v < n; ++v)
      if (u != v) REQUIRE(std::abs(cov(u, v)) < off_tol);
}

TEST_CASE("superimposed-pilot estimator") {
  const DDDims dims{8, 4};
  Rng rng(1414u);

  SECTION("zero observation maps to zero") {
    std::vector<DDOperator> ops{build_dd_operator(1, 1, 0.1, dims)};
    std::vector<cplx> psi(dims.size());
    for (auto& v : psi) v = rng.cgaussian(1.0);
    const Eigen::MatrixXcd xi = sp_equivalent_pilot_matrix(ops, 1.0, psi);
    const Eigen::VectorXcd est =
        sp_estimate(Eigen::VectorXcd::Zero(dims.size()), xi, 2.0, {0.5});
    REQUIRE(est.cwiseAbs().maxCoeff() == 0.0);
  }

  SECTION("scalar case reduces to the textbook MMSE filter") {
    const DDDims unit{1, 1};
    std::vector<DDOperator> ops{build_dd_operator(0, 0, 0.0, unit)};
    const cplx x(0.8, -0.6);
    const Eigen::MatrixXcd xi = sp_equivalent_pilot_matrix(ops, 1.0, {x});
    const double beta = 0.7, cw = 1.3;
    const cplx y(0.4, 1.1);
    Eigen::VectorXcd obs(1);
    obs(0) = y;
    const Eigen::VectorXcd est = sp_estimate(obs, xi, cw, {beta});
    const cplx want = beta * std::conj(x) * y / (std::norm(x) * beta + cw);
    REQUIRE(std::abs(est(0) - want) < 1e-12);
  }

  SECTION("regularized normal equations agree with the covariance form") {
    std::vector<DDOperator> ops{build_dd_operator(0, 1, 0.2, dims),
                                build_dd_operator(2, -1, 0.0, dims),
                                build_dd_operator(5, 0, -0.3, dims)};
    std::vector<cplx> psi(dims.size());
    for (auto& v : psi) v = rng.cgaussian(2.0);
    const Eigen::MatrixXcd xi = sp_equivalent_pilot_matrix(ops, 0.8, psi);
    const std::vector<double> betas{0.5, 0.3, 0.2};
    const double cw = 2.5;
    Eigen::VectorXcd y(dims.size());
    for (int u = 0; u < dims.size(); ++u) y(u) = rng.cgaussian(1.0);

    const Eigen::VectorXcd got = sp_estimate(y, xi, cw, betas);

    Eigen::MatrixXcd c_h = Eigen::MatrixXcd::Zero(3, 3);
    for (int i = 0; i < 3; ++i) c_h(i, i) = betas[i];
    const Eigen::MatrixXcd gram =
        xi * c_h * xi.adjoint() + cw * Eigen::MatrixXcd::Identity(dims.size(), dims.size());
    const Eigen::VectorXcd want = c_h * xi.adjoint() * gram.ldlt().solve(y);
    REQUIRE((got - want).cwiseAbs().maxCoeff() < 1e-10);
  }

  SECTION("estimate second moment matches the conditional covariance identity") {
    std::vector<DDOperator> ops{build_dd_operator(1, 1, 0.15, dims),
                                build_dd_operator(3, -1, -0.25, dims)};
    std::vector<cplx> psi(dims.size());
    for (auto& v : psi) v = rng.cgaussian(1.5);
    const double eta = 0.9, cw = 1.8;
    const std::vector<double> betas{0.7, 0.4};
    const Eigen::MatrixXcd xi = sp_equivalent_pilot_matrix(ops, eta, psi);

    // Deterministic prediction for this fixed pilot draw.
    Eigen::MatrixXcd c_h = Eigen::MatrixXcd::Zero(2, 2);
    c_h(0, 0) = betas[0];
    c_h(1, 1) = betas[1];
    const Eigen::MatrixXcd gram =
        xi * c_h * xi.adjoint() + cw * Eigen::MatrixXcd::Identity(dims.size(), dims.size());
    const Eigen::MatrixXcd second = c_h * xi.adjoint() * gram.ldlt().solve(xi * c_h);

    const int trials = 5000;
    std::vector<double> acc(2, 0.0), acc_sq(2, 0.0);
    for (int t = 0; t < trials; ++t) {
      Eigen::VectorXcd h(2);
      h(0) = rng.cgaussian(betas[0]);
      h(1) = rng.cgaussian(betas[1]);
      Eigen::VectorXcd w(dims.size());
      for (int u = 0; u < dims.size(); ++u) w(u) = rng.cgaussian(cw);
      const Eigen::VectorXcd est = sp_estimate(xi * h + w, xi, cw, betas);
      for (int i = 0; i < 2; ++i) {
        const double p = std::norm(est(i));
        acc[i] += p;
        acc_sq[i] += p * p;
      }
    }
    for (int i = 0; i < 2; ++i) {
      const double mean = acc[i] / trials;
      const double se = std::sqrt((acc_sq[i] / trials - mean * mean) / trials);
      REQUIRE(std::abs(mean - second(i, i).real()) < 3.0 * se);
    }
  }

  SECTION("ill-conditioned systems are rejected with a diagnostic") {
    std::vector<DDOperator> ops{build_dd_operator(1, 0, 0.0, dims),
                                build_dd_operator(1, 0, 0.0, dims)};  // identical columns
    std::vector<cplx> psi(dims.size());
    for (auto& v : psi) v = rng.cgaussian(1.0);
    const Eigen::MatrixXcd xi = sp_equivalent_pilot_matrix(ops, 1.0, psi);
    Eigen::VectorXcd y = Eigen::VectorXcd::Ones(dims.size());
    REQUIRE_THROWS_AS(sp_estimate(y, xi, 1.0, {1e20, 1e20}), std::runtime_error);
    REQUIRE_THROWS_AS(sp_estimate(y, xi, -1.0, {1.0, 1.0}), std::invalid_argument);
  }
}

TEST_CASE("superimposed-pilot closed-form quality") {
  SECTION("two-user unit reference point") {
    std::vector<UserLink> users{{1.0, 1.0, 1.0, 1.0}, {1.0, 1.0, 1.0, 1.0}};
    const auto gamma = sp_gamma_closed_form({1.0}, users, 0);
    REQUIRE(gamma[0] == Catch::Approx(0.2).epsilon(1e-14));  // 1/(1+1+2+1)
  }

  SECTION("interference-free high-power limit approaches the prior") {
    std::vector<UserLink> users{{1.0, 0.0, 1e12, 0.5}};
    const auto gamma = sp_gamma_closed_form({0.5}, users, 0);
    REQUIRE(gamma[0] == Catch::Approx(0.5).epsilon(1e-9));
  }

  SECTION("embedded pilots dominate superimposed pilots at matched powers") {
    Rng rng(33u);
    const DDDims dims{8, 20};
    for (int rep = 0; rep < 100; ++rep) {
      EpConfig cfg;
      cfg.k_max = 2;
      cfg.guard_extra = 0;
      cfg.pilot_power = rng.uniform(0.5, 50.0);
      cfg.data_power = rng.uniform(0.1, 5.0);
      const double eta = rng.uniform(0.2, 1.0);
      const double beta0 = rng.uniform(0.05, 2.0);
      const double beta1 = rng.uniform(0.05, 2.0);
      std::vector<UserLink> users{
          {eta, cfg.data_power, cfg.pilot_power, beta0 + beta1},
          {rng.uniform(0.2, 1.0), cfg.data_power, cfg.pilot_power, rng.uniform(0.1, 2.0)}};
      const double i2 = ep_interference_i2_var({users[1]}, dims);
      const EstimateQuality ep = ep_mmse_coeff(cfg, {beta0, beta1}, eta, i2, dims);
      const auto sp = sp_gamma_closed_form({beta0, beta1}, users, 0);
      for (int i = 0; i < 2; ++i) REQUIRE(ep.gamma[i] >= sp[i] - 1e-12);
    }
  }
}

TEST_CASE("empirical mean squared error") {
  std::vector<std::vector<cplx>> truth{{cplx(1.0, 0.0), cplx(0.0, 1.0)}},
      same{{cplx(1.0, 0.0), cplx(0.0, 1.0)}};
  REQUIRE(estimation_mse(truth, same) == 0.0);

  // Zero estimator: MSE converges to the prior variance sum.
  Rng rng(512u);
  const std::vector<double> betas{0.5, 0.25};
  const int trials = 20000;
  std::vector<std::vector<cplx>> h(trials), zero(trials);
  for (int t = 0; t < trials; ++t) {
    h[t] = {rng.cgaussian(betas[0]), rng.cgaussian(betas[1])};
    zero[t] = {cplx(0.0, 0.0), cplx(0.0, 0.0)};
  }
  const double mse = estimation_mse(h, zero);
  // Var of ||h||^2 = sum beta_i^2; standard error over trials.
  const double se = std::sqrt((betas[0] * betas[0] + betas[1] * betas[1]) / trials);
  REQUIRE(std::abs(mse - 0.75) < 3.0 * se);

  REQUIRE(mse_closed_form({1.0, 0.5}, {0.4, 0.1}) == Catch::Approx(1.0));
  REQUIRE_THROWS_AS(estimation_mse({}, {}), std::invalid_argument);
}
