#pragma once
// Monte-Carlo link-level simulators.  Three families:
//
//  1. Matched-gains component simulators: draw per-path estimate/error gains
//     with the modeled variances, form the effective precoded/combined
//     matrices, and measure the per-row SINR decomposition (desired
//     coefficient, same-row beam split, inter-row leakage, cross-user power,
//     combiner noise gain) that the closed-form tables predict.
//  2. A downlink transmit-power probe that draws payload symbols and checks
//     the per-AP average radiated power against the budget.
//  3. Dense cooperative receivers: per-AP MR / local-MMSE combining with
//     simple central averaging (level 2) or optimal large-scale fading
//     decoding (level 3), and the downlink MMSE-SIC bound with stochastic
//     CSI.  All are log-det expressions over Monte-Carlo moment estimates
//     and are restricted to small lattices by a dense-size cap.

#include <cmath>
#include <complex>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "otfslink/channel.hpp"
#include "otfslink/common.hpp"
#include "otfslink/dd_operator.hpp"
#include "otfslink/se_closed_form.hpp"

namespace otfslink {

/// Empirical SINRs are capped here when interference and noise vanish.
inline constexpr double kSinrCap = 1e20;

struct ComponentEstimate {
  double value = 0.0;
  double std_error = 0.0;
};

namespace detail {

inline ComponentEstimate mean_and_error(const std::vector<double>& xs) {
  const double n = static_cast<double>(xs.size());
  double mean = 0;
  for (double x : xs) mean += x;
  mean /= n;
  double var = 0;
  for (double x : xs) var += (x - mean) * (x - mean);
  var /= (n - 1.0);
  return ComponentEstimate{mean, std::sqrt(var / n)};
}

/// Per-path gain draw of one link: estimate with the modeled variance and an
/// independent error on top, so that truth = estimate + error.
struct GainDraw {
  std::vector<cplx> est;
  std::vector<cplx> truth;
};

struct LinkGainModel {
  std::vector<double> gamma;
  std::vector<double> err;

  explicit LinkGainModel(const LinkSEInput& link) {
    for (std::size_t i = 0; i < link.gamma.size(); ++i) {
      gamma.push_back(link.gamma[i]);
      err.push_back(std::max(0.0, link.taps[i].beta - link.gamma[i]));
    }
  }

  GainDraw draw(Rng& rng) const {
    GainDraw d;
    d.est.resize(gamma.size());
    d.truth.resize(gamma.size());
    for (std::size_t i = 0; i < gamma.size(); ++i) {
      d.est[i] = rng.cgaussian(gamma[i]);
      d.truth[i] = d.est[i] + rng.cgaussian(err[i]);
    }
    return d;
  }
};

inline Eigen::MatrixXcd dense_tap(const PathTap& tap, DDDims dims) {
  return materialize(build_dd_operator(tap.delay_tap, tap.doppler_tap, tap.frac, dims));
}

inline void check_mc_args(const SEInputs& in, int row, int trials) {
  if (row < 0 || row >= in.dims.size())
    throw std::invalid_argument("component simulator: row out of range");
  if (trials < 2) throw std::invalid_argument("component simulator: need at least 2 trials");
}

inline std::string trials_warning(int trials) {
  return trials < 100 ? "component estimates from fewer than 100 trials are unreliable" : "";
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Matched-gains component simulators
// ---------------------------------------------------------------------------

struct DlComponentSim {
  ComponentEstimate ds;          // mean desired coefficient (real part)
  ComponentEstimate beam_split;  // variance of the desired coefficient
  ComponentEstimate leakage;     // own-user inter-row power at the probed row
  ComponentEstimate cross_user;  // other-user power at the probed row
  double sinr = 0.0;             // assembled empirical SINR at the probed row
  int row = 0;
  int trials = 0;
  std::string warning;
};

/// Measure the downlink SINR decomposition of user q at one lattice row by
/// Monte Carlo over the matched-gains model.  The effective precoded matrix
/// is A_qq' = sum_p sqrt(eta_pq') H_pq Hhat_pq'^H, built per trial from the
/// drawn gains through precomputed tap-product rows.
inline DlComponentSim simulate_downlink_components(const SEInputs& in, const DlPowerConfig& power,
                                                   int q, int row, int trials, Rng& rng) {
  detail::validate_se_inputs(in, q);
  detail::check_mc_args(in, row, trials);
  const int num_aps = in.num_aps();
  const int num_users = in.num_users();
  if (static_cast<int>(power.eta.size()) != num_aps)
    throw std::invalid_argument("simulate_downlink_components: eta row count != AP count");
  const int mn = in.dims.size();

  // rows[p][q2](i, j) = row `row` of T^{pq}_i * T^{pq2}_j^H, scaled by
  // sqrt(eta_pq2): the target user's true channel against user q2's estimate.
  std::vector<std::vector<std::vector<Eigen::RowVectorXcd>>> rows(
      static_cast<std::size_t>(num_aps));
  std::vector<detail::LinkGainModel> target_model;
  std::vector<std::vector<detail::LinkGainModel>> other_model(static_cast<std::size_t>(num_aps));
  for (int p = 0; p < num_aps; ++p) {
    const auto& target = in.links[static_cast<std::size_t>(p)][static_cast<std::size_t>(q)];
    target_model.emplace_back(target);
    std::vector<Eigen::MatrixXcd> t_target;
    for (const auto& tap : target.taps) t_target.push_back(detail::dense_tap(tap, in.dims));
    rows[static_cast<std::size_t>(p)].resize(static_cast<std::size_t>(num_users));
    for (int q2 = 0; q2 < num_users; ++q2) {
      const auto& other = in.links[static_cast<std::size_t>(p)][static_cast<std::size_t>(q2)];
      if (q2 != q) other_model[static_cast<std::size_t>(p)].emplace_back(other);
      const double scale = std::sqrt(power.eta[static_cast<std::size_t>(p)][static_cast<std::size_t>(q2)]);
      auto& cell = rows[static_cast<std::size_t>(p)][static_cast<std::size_t>(q2)];
      for (int i = 0; i < target.paths(); ++i) {
        const Eigen::RowVectorXcd lead = t_target[static_cast<std::size_t>(i)].row(row);
        for (int j = 0; j < other.paths(); ++j) {
          const Eigen::MatrixXcd tj = detail::dense_tap(other.taps[static_cast<std::size_t>(j)], in.dims);
          cell.push_back(scale * (lead * tj.adjoint()));
        }
      }
    }
  }

  std::vector<cplx> a_t(static_cast<std::size_t>(trials));
  std::vector<double> isi_t(static_cast<std::size_t>(trials));
  std::vector<double> cross_t(static_cast<std::size_t>(trials));
  Eigen::RowVectorXcd own_row(mn);
  std::vector<Eigen::RowVectorXcd> cross_rows(static_cast<std::size_t>(num_users),
                                              Eigen::RowVectorXcd(mn));

  for (int t = 0; t < trials; ++t) {
    own_row.setZero();
    for (auto& cr : cross_rows) cr.setZero();
    // Draw the target link jointly (estimate + truth) per AP, interferer
    // links estimate-only, in a fixed order.  Cross-user rows accumulate
    // coherently across APs before their power is taken.
    for (int p = 0; p < num_aps; ++p) {
      const auto draw = target_model[static_cast<std::size_t>(p)].draw(rng);
      const auto& cell_own = rows[static_cast<std::size_t>(p)][static_cast<std::size_t>(q)];
      const int paths = static_cast<int>(draw.est.size());
      for (int i = 0; i < paths; ++i)
        for (int j = 0; j < paths; ++j)
          own_row.noalias() += draw.truth[static_cast<std::size_t>(i)] *
                               std::conj(draw.est[static_cast<std::size_t>(j)]) *
                               cell_own[static_cast<std::size_t>(i * paths + j)];
      int slot = 0;
      for (int q2 = 0; q2 < num_users; ++q2) {
        if (q2 == q) continue;
        const auto est = other_model[static_cast<std::size_t>(p)][static_cast<std::size_t>(slot++)].draw(rng);
        const auto& cell = rows[static_cast<std::size_t>(p)][static_cast<std::size_t>(q2)];
        const int other_paths = static_cast<int>(est.est.size());
        auto& target_row = cross_rows[static_cast<std::size_t>(q2)];
        for (int i = 0; i < paths; ++i)
          for (int j = 0; j < other_paths; ++j)
            target_row.noalias() += draw.truth[static_cast<std::size_t>(i)] *
                                    std::conj(est.est[static_cast<std::size_t>(j)]) *
                                    cell[static_cast<std::size_t>(i * other_paths + j)];
      }
    }
    double cross = 0;
    for (int q2 = 0; q2 < num_users; ++q2)
      if (q2 != q) cross += cross_rows[static_cast<std::size_t>(q2)].squaredNorm();
    a_t[static_cast<std::size_t>(t)] = own_row(row);
    isi_t[static_cast<std::size_t>(t)] = own_row.squaredNorm() - std::norm(own_row(row));
    cross_t[static_cast<std::size_t>(t)] = cross;
  }

  std::vector<double> ds_t(static_cast<std::size_t>(trials));
  cplx a_mean = 0;
  for (const auto& a : a_t) a_mean += a;
  a_mean /= static_cast<double>(trials);
  std::vector<double> bu_t(static_cast<std::size_t>(trials));
  for (int t = 0; t < trials; ++t) {
    ds_t[static_cast<std::size_t>(t)] = a_t[static_cast<std::size_t>(t)].real();
    bu_t[static_cast<std::size_t>(t)] = std::norm(a_t[static_cast<std::size_t>(t)] - a_mean);
  }

  DlComponentSim out;
  out.ds = detail::mean_and_error(ds_t);
  out.beam_split = detail::mean_and_error(bu_t);
  out.leakage = detail::mean_and_error(isi_t);
  out.cross_user = detail::mean_and_error(cross_t);
  out.row = row;
  out.trials = trials;
  out.warning = detail::trials_warning(trials);
  const double num = power.rho_d * out.ds.value * out.ds.value;
  const double den =
      power.rho_d * (out.beam_split.value + out.leakage.value + out.cross_user.value) + 1.0;
  out.sinr = (num == 0.0) ? 0.0 : std::min(num / den, kSinrCap);
  return out;
}

struct UlComponentSim {
  ComponentEstimate ds;
  ComponentEstimate beam_split;
  ComponentEstimate leakage;
  ComponentEstimate cross_user;  // includes the interferer transmit powers
  ComponentEstimate noise_gain;  // E |combiner row|^2
  double sinr = 0.0;
  int row = 0;
  int trials = 0;
  std::string warning;
};

/// Uplink mirror: the combined matrix is B_qq' = sum_p Hhat_pq^H H_pq', so
/// the pair products sit on the adjoint side and the estimate belongs to the
/// target user while the truth belongs to the transmitting user.
inline UlComponentSim simulate_uplink_components(const SEInputs& in, const UlPowerConfig& power,
                                                 int q, int row, int trials, Rng& rng) {
  detail::validate_se_inputs(in, q);
  detail::check_mc_args(in, row, trials);
  const int num_aps = in.num_aps();
  const int num_users = in.num_users();
  if (static_cast<int>(power.rho_dt.size()) != num_users ||
      static_cast<int>(power.eta.size()) != num_users)
    throw std::invalid_argument("simulate_uplink_components: power vectors must match user count");
  const int mn = in.dims.size();

  // rows[p][q2](i, j) = row of T^{pq}_i^H * T^{pq2}_j; combiner rows for the
  // noise gain are rows of T^{pq}_i^H itself.
  std::vector<std::vector<std::vector<Eigen::RowVectorXcd>>> rows(static_cast<std::size_t>(num_aps));
  std::vector<std::vector<Eigen::RowVectorXcd>> comb_rows(static_cast<std::size_t>(num_aps));
  std::vector<detail::LinkGainModel> target_model;
  std::vector<std::vector<detail::LinkGainModel>> other_model(static_cast<std::size_t>(num_aps));
  for (int p = 0; p < num_aps; ++p) {
    const auto& target = in.links[static_cast<std::size_t>(p)][static_cast<std::size_t>(q)];
    target_model.emplace_back(target);
    std::vector<Eigen::MatrixXcd> t_target;
    for (const auto& tap : target.taps) {
      t_target.push_back(detail::dense_tap(tap, in.dims));
      comb_rows[static_cast<std::size_t>(p)].push_back(t_target.back().adjoint().row(row));
    }
    rows[static_cast<std::size_t>(p)].resize(static_cast<std::size_t>(num_users));
    for (int q2 = 0; q2 < num_users; ++q2) {
      const auto& other = in.links[static_cast<std::size_t>(p)][static_cast<std::size_t>(q2)];
      if (q2 != q) other_model[static_cast<std::size_t>(p)].emplace_back(other);
      auto& cell = rows[static_cast<std::size_t>(p)][static_cast<std::size_t>(q2)];
      for (int i = 0; i < target.paths(); ++i) {
        const Eigen::RowVectorXcd lead = t_target[static_cast<std::size_t>(i)].adjoint().row(row);
        for (int j = 0; j < other.paths(); ++j) {
          const Eigen::MatrixXcd tj = detail::dense_tap(other.taps[static_cast<std::size_t>(j)], in.dims);
          cell.push_back(lead * tj);
        }
      }
    }
  }

  std::vector<cplx> a_t(static_cast<std::size_t>(trials));
  std::vector<double> isi_t(static_cast<std::size_t>(trials)),
      cross_t(static_cast<std::size_t>(trials)), noise_t(static_cast<std::size_t>(trials));
  Eigen::RowVectorXcd own_row(mn), comb_row(mn);
  std::vector<Eigen::RowVectorXcd> cross_rows(static_cast<std::size_t>(num_users),
                                              Eigen::RowVectorXcd(mn));

  for (int t = 0; t < trials; ++t) {
    own_row.setZero();
    for (auto& cr : cross_rows) cr.setZero();
    double noise = 0;
    for (int p = 0; p < num_aps; ++p) {
      const auto draw = target_model[static_cast<std::size_t>(p)].draw(rng);
      const int paths = static_cast<int>(draw.est.size());
      const auto& cell_own = rows[static_cast<std::size_t>(p)][static_cast<std::size_t>(q)];
      for (int i = 0; i < paths; ++i)
        for (int j = 0; j < paths; ++j)
          own_row.noalias() += std::conj(draw.est[static_cast<std::size_t>(i)]) *
                               draw.truth[static_cast<std::size_t>(j)] *
                               cell_own[static_cast<std::size_t>(i * paths + j)];
      // Per-AP noise is independent, so the combiner noise gains add in power.
      comb_row.setZero();
      for (int i = 0; i < paths; ++i)
        comb_row.noalias() += std::conj(draw.est[static_cast<std::size_t>(i)]) *
                              comb_rows[static_cast<std::size_t>(p)][static_cast<std::size_t>(i)];
      noise += comb_row.squaredNorm();
      int slot = 0;
      for (int q2 = 0; q2 < num_users; ++q2) {
        if (q2 == q) continue;
        const auto other = other_model[static_cast<std::size_t>(p)][static_cast<std::size_t>(slot++)].draw(rng);
        const auto& cell = rows[static_cast<std::size_t>(p)][static_cast<std::size_t>(q2)];
        const int other_paths = static_cast<int>(other.truth.size());
        auto& target_row = cross_rows[static_cast<std::size_t>(q2)];
        for (int i = 0; i < paths; ++i)
          for (int j = 0; j < other_paths; ++j)
            target_row.noalias() += std::conj(draw.est[static_cast<std::size_t>(i)]) *
                                    other.truth[static_cast<std::size_t>(j)] *
                                    cell[static_cast<std::size_t>(i * other_paths + j)];
      }
    }
    double cross = 0;
    for (int q2 = 0; q2 < num_users; ++q2)
      if (q2 != q)
        cross += power.rho_dt[static_cast<std::size_t>(q2)] * power.eta[static_cast<std::size_t>(q2)] *
                 cross_rows[static_cast<std::size_t>(q2)].squaredNorm();
    a_t[static_cast<std::size_t>(t)] = own_row(row);
    isi_t[static_cast<std::size_t>(t)] = own_row.squaredNorm() - std::norm(own_row(row));
    cross_t[static_cast<std::size_t>(t)] = cross;
    noise_t[static_cast<std::size_t>(t)] = noise;
  }

  cplx a_mean = 0;
  for (const auto& a : a_t) a_mean += a;
  a_mean /= static_cast<double>(trials);
  std::vector<double> ds_t(static_cast<std::size_t>(trials)), bu_t(static_cast<std::size_t>(trials));
  for (int t = 0; t < trials; ++t) {
    ds_t[static_cast<std::size_t>(t)] = a_t[static_cast<std::size_t>(t)].real();
    bu_t[static_cast<std::size_t>(t)] = std::norm(a_t[static_cast<std::size_t>(t)] - a_mean);
  }

  UlComponentSim out;
  out.ds = detail::mean_and_error(ds_t);
  out.beam_split = detail::mean_and_error(bu_t);
  out.leakage = detail::mean_and_error(isi_t);
  out.cross_user = detail::mean_and_error(cross_t);
  out.noise_gain = detail::mean_and_error(noise_t);
  out.row = row;
  out.trials = trials;
  out.warning = detail::trials_warning(trials);
  const double self = power.rho_dt[static_cast<std::size_t>(q)] * power.eta[static_cast<std::size_t>(q)];
  const double num = self * out.ds.value * out.ds.value;
  const double den = self * (out.beam_split.value + out.leakage.value) + out.cross_user.value +
                     out.noise_gain.value;
  out.sinr = (num == 0.0) ? 0.0 : std::min(num / den, kSinrCap);
  return out;
}

// ---------------------------------------------------------------------------
// Downlink transmit-power probe
// ---------------------------------------------------------------------------

/// Per-AP average radiated power per lattice sample, E||x_p||^2 / MN, with
/// x_p = sqrt(rho_d) sum_q sqrt(eta_pq) Hhat_pq^H s_q over unit-power payload
/// symbols.  Under the full-power control rule this equals rho_d.
inline std::vector<double> simulate_downlink_power(const SEInputs& in, const DlPowerConfig& power,
                                                   int trials, Rng& rng) {
  detail::validate_se_inputs(in, 0);
  if (trials < 1) throw std::invalid_argument("simulate_downlink_power: need trials >= 1");
  const int num_aps = in.num_aps();
  const int num_users = in.num_users();
  if (static_cast<int>(power.eta.size()) != num_aps)
    throw std::invalid_argument("simulate_downlink_power: eta row count != AP count");
  const int mn = in.dims.size();

  std::vector<std::vector<std::vector<DDOperator>>> ops(static_cast<std::size_t>(num_aps));
  std::vector<std::vector<detail::LinkGainModel>> models(static_cast<std::size_t>(num_aps));
  for (int p = 0; p < num_aps; ++p)
    for (int q = 0; q < num_users; ++q) {
      const auto& link = in.links[static_cast<std::size_t>(p)][static_cast<std::size_t>(q)];
      models[static_cast<std::size_t>(p)].emplace_back(link);
      std::vector<DDOperator> link_ops;
      for (const auto& tap : link.taps)
        link_ops.push_back(build_dd_operator(tap.delay_tap, tap.doppler_tap, tap.frac, in.dims));
      ops[static_cast<std::size_t>(p)].push_back(std::move(link_ops));
    }

  std::vector<double> acc(static_cast<std::size_t>(num_aps), 0.0);
  std::vector<std::vector<cplx>> symbols(static_cast<std::size_t>(num_users));
  std::vector<cplx> x(static_cast<std::size_t>(mn));
  for (int t = 0; t < trials; ++t) {
    for (auto& s : symbols) {
      s.resize(static_cast<std::size_t>(mn));
      for (auto& v : s) v = rng.cgaussian(1.0);
    }
    for (int p = 0; p < num_aps; ++p) {
      std::fill(x.begin(), x.end(), cplx{0, 0});
      for (int q = 0; q < num_users; ++q) {
        const auto draw = models[static_cast<std::size_t>(p)][static_cast<std::size_t>(q)].draw(rng);
        const double w = std::sqrt(power.rho_d *
                                   power.eta[static_cast<std::size_t>(p)][static_cast<std::size_t>(q)]);
        for (std::size_t i = 0; i < draw.est.size(); ++i) {
          const auto filtered = otfslink::apply_adjoint(
              ops[static_cast<std::size_t>(p)][static_cast<std::size_t>(q)][i], symbols[static_cast<std::size_t>(q)]);
          const cplx g = w * std::conj(draw.est[i]);
          for (int r = 0; r < mn; ++r) x[static_cast<std::size_t>(r)] += g * filtered[static_cast<std::size_t>(r)];
        }
      }
      double e = 0;
      for (const auto& v : x) e += std::norm(v);
      acc[static_cast<std::size_t>(p)] += e / mn;
    }
  }
  for (auto& v : acc) v /= trials;
  return acc;
}

// ---------------------------------------------------------------------------
// Local MMSE combining and cooperative uplink processing
// ---------------------------------------------------------------------------

enum class CombinerKind { mr, lmmse };

/// Local MMSE combining matrix at one AP:
///   V = (sum_q' (Hhat_q' Hhat_q'^H + C_q') + noise_var I)^{-1} Hhat_target,
/// where C_q' = error_cov_scale[q'] * I is the channel-error covariance.
/// Channel estimates are expected pre-scaled by their transmit amplitudes.
inline Eigen::MatrixXcd lmmse_combiner(const std::vector<Eigen::MatrixXcd>& est_channels,
                                       const std::vector<double>& error_cov_scale,
                                       double noise_var, int target) {
  if (est_channels.empty() || est_channels.size() != error_cov_scale.size())
    throw std::invalid_argument("lmmse_combiner: estimates/covariances size mismatch");
  if (target < 0 || target >= static_cast<int>(est_channels.size()))
    throw std::invalid_argument("lmmse_combiner: target out of range");
  const Eigen::Index mn = est_channels.front().rows();
  Eigen::MatrixXcd gram = Eigen::MatrixXcd::Zero(mn, mn);
  double diag = noise_var;
  for (std::size_t q = 0; q < est_channels.size(); ++q) {
    if (est_channels[q].rows() != mn || est_channels[q].cols() != mn)
      throw std::invalid_argument("lmmse_combiner: estimate dimension mismatch");
    gram.noalias() += est_channels[q] * est_channels[q].adjoint();
    diag += error_cov_scale[q];
  }
  gram += diag * Eigen::MatrixXcd::Identity(mn, mn);
  gram = 0.5 * (gram + gram.adjoint().eval());

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(gram, Eigen::EigenvaluesOnly);
  const double lo = es.eigenvalues().minCoeff();
  const double hi = es.eigenvalues().maxCoeff();
  if (!(lo > 0.0) || hi / lo > 1e12)
    throw std::runtime_error("lmmse_combiner: ill-conditioned system (cond = " +
                             std::to_string(lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity()) +
                             ")");
  return gram.llt().solve(est_channels[static_cast<std::size_t>(target)]);
}

namespace detail {

inline Eigen::LLT<Eigen::MatrixXcd> robust_llt(const Eigen::MatrixXcd& psi, const char* what) {
  Eigen::MatrixXcd sym = 0.5 * (psi + psi.adjoint());
  const Eigen::Index n = sym.rows();
  const double scale = std::max(sym.diagonal().real().maxCoeff(), 1e-300);
  double jitter = 0.0;
  for (int attempt = 0; attempt < 8; ++attempt) {
    Eigen::LLT<Eigen::MatrixXcd> llt(sym + jitter * Eigen::MatrixXcd::Identity(n, n));
    if (llt.info() == Eigen::Success) return llt;
    jitter = jitter == 0.0 ? 1e-12 * scale : 10.0 * jitter;
  }
  throw std::runtime_error(std::string(what) +
                           ": moment covariance not positive definite; increase trials");
}

/// log2 det(I + D^H Psi^{-1} D) via Cholesky factors.
inline double logdet2_capacity(const Eigen::MatrixXcd& d, const Eigen::MatrixXcd& psi,
                               const char* what) {
  const auto llt = robust_llt(psi, what);
  Eigen::MatrixXcd m =
      Eigen::MatrixXcd::Identity(d.cols(), d.cols()) + d.adjoint() * llt.solve(d);
  m = 0.5 * (m + m.adjoint().eval());
  Eigen::LLT<Eigen::MatrixXcd> mllt(m);
  if (mllt.info() != Eigen::Success)
    throw std::runtime_error(std::string(what) + ": capacity matrix not positive definite");
  double acc = 0.0;
  const auto& l = mllt.matrixLLT();
  for (Eigen::Index i = 0; i < l.rows(); ++i) acc += std::log2(l(i, i).real());
  return 2.0 * acc;
}

}  // namespace detail

/// Monte-Carlo moment estimates for the cooperative uplink receivers of one
/// target user.  Reduced moments (block sums over APs) always present; the
/// stacked moments needed by level-3 decoding only when requested.
struct UplinkMoments {
  DDDims dims{1, 1};
  int num_aps = 0;
  int num_users = 0;
  int target = 0;
  int trials = 0;
  double noise_var = 1.0;
  // Level-2 (simple central averaging) moments.
  Eigen::MatrixXcd d2;                 // E{sum_p V_p^H G_p,target}
  std::vector<Eigen::MatrixXcd> w2;    // per user: E{W W^H}, W = sum_p V_p^H G_p,user
  Eigen::MatrixXcd s2;                 // sum_p E{V_p^H V_p}
  // Level-3 (LSFD) stacked moments.
  bool stacked = false;
  Eigen::MatrixXcd d_stack;            // E{D_target}, (Ma MN) x MN
  std::vector<Eigen::MatrixXcd> second;  // per user: E{D D^H}, (Ma MN)^2
  std::vector<Eigen::MatrixXcd> s_blocks;  // per AP: E{V_p^H V_p}
};

namespace detail {

/// Dense per-path operator matrices of every link, indexed [ap][user][path].
using TapBank = std::vector<std::vector<std::vector<Eigen::MatrixXcd>>>;

inline TapBank dd_tap_bank(const SEInputs& in) {
  TapBank taps(static_cast<std::size_t>(in.num_aps()));
  for (int p = 0; p < in.num_aps(); ++p) {
    auto& row = taps[static_cast<std::size_t>(p)];
    row.resize(static_cast<std::size_t>(in.num_users()));
    for (int q2 = 0; q2 < in.num_users(); ++q2)
      for (const auto& tap : in.links[static_cast<std::size_t>(p)][static_cast<std::size_t>(q2)].taps)
        row[static_cast<std::size_t>(q2)].push_back(dense_tap(tap, in.dims));
  }
  return taps;
}

/// Shared trial loop behind the moment estimators: per trial, draw all link
/// gains, build the power-scaled dense channels from the supplied tap bank,
/// design the per-AP combiner from local estimates only, and accumulate the
/// first and second moments of the combined effective matrices.  block_dims
/// names the per-symbol block the taps act on (the full DD lattice here, one
/// multicarrier symbol for the OFDM baseline).
inline UplinkMoments accumulate_uplink_moments(const SEInputs& in, const UlPowerConfig& power,
                                               CombinerKind kind, int q, int trials, Rng& rng,
                                               bool include_stacked, int dense_cap,
                                               DDDims block_dims, const TapBank& taps) {
  detail::validate_se_inputs(in, q);
  if (trials < 2) throw std::invalid_argument("estimate_uplink_moments: need at least 2 trials");
  const int num_aps = in.num_aps();
  const int num_users = in.num_users();
  if (static_cast<int>(power.rho_dt.size()) != num_users ||
      static_cast<int>(power.eta.size()) != num_users)
    throw std::invalid_argument("estimate_uplink_moments: power vectors must match user count");
  const int mn = block_dims.size();
  if (include_stacked && num_aps * mn > dense_cap)
    throw std::invalid_argument(
        "estimate_uplink_moments: stacked processing needs num_aps * block size <= " +
        std::to_string(dense_cap) + " (got " + std::to_string(num_aps * mn) + ")");

  // Per-link amplitude scales and gain models.
  std::vector<std::vector<detail::LinkGainModel>> models(static_cast<std::size_t>(num_aps));
  std::vector<double> amp(static_cast<std::size_t>(num_users));
  for (int q2 = 0; q2 < num_users; ++q2)
    amp[static_cast<std::size_t>(q2)] = std::sqrt(power.rho_dt[static_cast<std::size_t>(q2)] *
                                                  power.eta[static_cast<std::size_t>(q2)]);
  for (int p = 0; p < num_aps; ++p)
    for (int q2 = 0; q2 < num_users; ++q2)
      models[static_cast<std::size_t>(p)].emplace_back(
          in.links[static_cast<std::size_t>(p)][static_cast<std::size_t>(q2)]);

  UplinkMoments m;
  m.dims = block_dims;
  m.num_aps = num_aps;
  m.num_users = num_users;
  m.target = q;
  m.trials = trials;
  m.noise_var = 1.0;
  m.d2 = Eigen::MatrixXcd::Zero(mn, mn);
  m.s2 = Eigen::MatrixXcd::Zero(mn, mn);
  m.w2.assign(static_cast<std::size_t>(num_users), Eigen::MatrixXcd::Zero(mn, mn));
  m.stacked = include_stacked;
  if (include_stacked) {
    m.d_stack = Eigen::MatrixXcd::Zero(static_cast<Eigen::Index>(num_aps) * mn, mn);
    m.second.assign(static_cast<std::size_t>(num_users),
                    Eigen::MatrixXcd::Zero(static_cast<Eigen::Index>(num_aps) * mn,
                                           static_cast<Eigen::Index>(num_aps) * mn));
    m.s_blocks.assign(static_cast<std::size_t>(num_aps), Eigen::MatrixXcd::Zero(mn, mn));
  }

  std::vector<Eigen::MatrixXcd> est(static_cast<std::size_t>(num_users)),
      truth(static_cast<std::size_t>(num_users));
  std::vector<Eigen::MatrixXcd> w(static_cast<std::size_t>(num_users));
  Eigen::MatrixXcd stacked_d;
  std::vector<Eigen::MatrixXcd> stacked_all;
  if (include_stacked)
    stacked_all.assign(static_cast<std::size_t>(num_users),
                       Eigen::MatrixXcd::Zero(static_cast<Eigen::Index>(num_aps) * mn, mn));

  for (int t = 0; t < trials; ++t) {
    for (auto& wm : w) wm = Eigen::MatrixXcd::Zero(mn, mn);
    for (int p = 0; p < num_aps; ++p) {
      // Power-scaled dense channel and estimate of every user at this AP.
      std::vector<double> cov(static_cast<std::size_t>(num_users), 0.0);
      for (int q2 = 0; q2 < num_users; ++q2) {
        const auto draw = models[static_cast<std::size_t>(p)][static_cast<std::size_t>(q2)].draw(rng);
        Eigen::MatrixXcd e = Eigen::MatrixXcd::Zero(mn, mn);
        Eigen::MatrixXcd h = Eigen::MatrixXcd::Zero(mn, mn);
        const auto& link_taps = taps[static_cast<std::size_t>(p)][static_cast<std::size_t>(q2)];
        for (std::size_t i = 0; i < link_taps.size(); ++i) {
          e.noalias() += draw.est[i] * link_taps[i];
          h.noalias() += draw.truth[i] * link_taps[i];
        }
        const double a = amp[static_cast<std::size_t>(q2)];
        est[static_cast<std::size_t>(q2)] = a * e;
        truth[static_cast<std::size_t>(q2)] = a * h;
        double err_sum = 0;
        for (double v : models[static_cast<std::size_t>(p)][static_cast<std::size_t>(q2)].err) err_sum += v;
        cov[static_cast<std::size_t>(q2)] = a * a * err_sum;
      }
      const Eigen::MatrixXcd v = kind == CombinerKind::mr
                                     ? est[static_cast<std::size_t>(q)]
                                     : lmmse_combiner(est, cov, m.noise_var, q);
      m.s2.noalias() += v.adjoint() * v;
      for (int q2 = 0; q2 < num_users; ++q2) {
        const Eigen::MatrixXcd block = v.adjoint() * truth[static_cast<std::size_t>(q2)];
        w[static_cast<std::size_t>(q2)].noalias() += block;
        if (include_stacked)
          stacked_all[static_cast<std::size_t>(q2)].middleRows(static_cast<Eigen::Index>(p) * mn, mn) = block;
      }
      if (include_stacked) m.s_blocks[static_cast<std::size_t>(p)].noalias() += v.adjoint() * v;
    }
    m.d2.noalias() += w[static_cast<std::size_t>(q)];
    for (int q2 = 0; q2 < num_users; ++q2)
      m.w2[static_cast<std::size_t>(q2)].noalias() +=
          w[static_cast<std::size_t>(q2)] * w[static_cast<std::size_t>(q2)].adjoint();
    if (include_stacked) {
      m.d_stack.noalias() += stacked_all[static_cast<std::size_t>(q)];
      for (int q2 = 0; q2 < num_users; ++q2)
        m.second[static_cast<std::size_t>(q2)].noalias() +=
            stacked_all[static_cast<std::size_t>(q2)] * stacked_all[static_cast<std::size_t>(q2)].adjoint();
    }
  }

  const double inv = 1.0 / trials;
  m.d2 *= inv;
  m.s2 *= inv;
  for (auto& mat : m.w2) mat *= inv;
  if (include_stacked) {
    m.d_stack *= inv;
    for (auto& mat : m.second) mat *= inv;
    for (auto& mat : m.s_blocks) mat *= inv;
  }
  return m;
}

}  // namespace detail

/// Estimate the receiver moments of user q by Monte Carlo over the
/// delay-Doppler effective channels.
inline UplinkMoments estimate_uplink_moments(const SEInputs& in, const UlPowerConfig& power,
                                             CombinerKind kind, int q, int trials, Rng& rng,
                                             bool include_stacked = false, int dense_cap = 1024) {
  detail::validate_se_inputs(in, q);
  return detail::accumulate_uplink_moments(in, power, kind, q, trials, rng, include_stacked,
                                           dense_cap, in.dims, detail::dd_tap_bank(in));
}

/// Level 2 — local processing with simple central averaging: the CPU takes
/// the plain average of the per-AP local estimates, so the effective channel
/// is D = E{sum_p V_p^H G_p,q} and the interference covariance carries all
/// cross-AP coupling.
inline double uplink_se_level2(const UplinkMoments& m, double omega) {
  Eigen::MatrixXcd psi = -m.d2 * m.d2.adjoint() + m.noise_var * m.s2;
  for (const auto& wm : m.w2) psi += wm;
  return omega * detail::logdet2_capacity(m.d2, psi, "uplink_se_level2") / m.dims.size();
}

/// Level 3 — local processing with optimal large-scale fading decoding: the
/// CPU weights the stacked local estimates by
/// A = (sum_user E{D D^H} + noise_var S)^{-1} E{D_target} before detection.
inline double uplink_se_level3(const UplinkMoments& m, double omega) {
  if (!m.stacked)
    throw std::invalid_argument("uplink_se_level3: moments were estimated without stacked data");
  const int mn = m.dims.size();
  const Eigen::Index big = static_cast<Eigen::Index>(m.num_aps) * mn;
  Eigen::MatrixXcd s = Eigen::MatrixXcd::Zero(big, big);
  for (int p = 0; p < m.num_aps; ++p)
    s.block(static_cast<Eigen::Index>(p) * mn, static_cast<Eigen::Index>(p) * mn, mn, mn) =
        m.s_blocks[static_cast<std::size_t>(p)];
  Eigen::MatrixXcd gram = m.noise_var * s;
  for (const auto& sec : m.second) gram += sec;
  const auto llt = detail::robust_llt(gram, "uplink_se_level3");
  const Eigen::MatrixXcd a = llt.solve(m.d_stack);

  const Eigen::MatrixXcd d3 = a.adjoint() * m.d_stack;
  Eigen::MatrixXcd psi = -d3 * d3.adjoint() + m.noise_var * (a.adjoint() * s * a);
  for (const auto& sec : m.second) psi += a.adjoint() * sec * a;
  return omega * detail::logdet2_capacity(d3, psi, "uplink_se_level3") / m.dims.size();
}

/// Convenience wrappers that estimate moments and evaluate in one call.
inline double uplink_se_level2(const SEInputs& in, const UlPowerConfig& power, CombinerKind kind,
                               int q, double omega, int trials, Rng& rng) {
  return uplink_se_level2(estimate_uplink_moments(in, power, kind, q, trials, rng), omega);
}

inline double uplink_se_level3(const SEInputs& in, const UlPowerConfig& power, CombinerKind kind,
                               int q, double omega, int trials, Rng& rng, int dense_cap = 1024) {
  return uplink_se_level3(
      estimate_uplink_moments(in, power, kind, q, trials, rng, /*include_stacked=*/true, dense_cap),
      omega);
}

// ---------------------------------------------------------------------------
// Downlink MMSE-SIC bound with stochastic CSI at the user
// ---------------------------------------------------------------------------

struct DlBoundMoments {
  DDDims dims{1, 1};
  double rho_d = 0.0;
  int trials = 0;
  Eigen::MatrixXcd d_mean;      // E{D_qq}
  Eigen::MatrixXcd second_sum;  // sum over all users of E{D_qq' D_qq'^H}
};

/// Moments of the downlink effective matrices D_qq' = sum_p sqrt(eta_pq')
/// H_pq Hhat_pq'^H seen by user q.
inline DlBoundMoments estimate_downlink_bound_moments(const SEInputs& in,
                                                      const DlPowerConfig& power, int q,
                                                      int trials, Rng& rng) {
  detail::validate_se_inputs(in, q);
  if (trials < 2)
    throw std::invalid_argument("estimate_downlink_bound_moments: need at least 2 trials");
  const int num_aps = in.num_aps();
  const int num_users = in.num_users();
  if (static_cast<int>(power.eta.size()) != num_aps)
    throw std::invalid_argument("estimate_downlink_bound_moments: eta row count != AP count");
  const int mn = in.dims.size();

  std::vector<std::vector<std::vector<Eigen::MatrixXcd>>> taps(static_cast<std::size_t>(num_aps));
  std::vector<std::vector<detail::LinkGainModel>> models(static_cast<std::size_t>(num_aps));
  for (int p = 0; p < num_aps; ++p)
    for (int q2 = 0; q2 < num_users; ++q2) {
      const auto& link = in.links[static_cast<std::size_t>(p)][static_cast<std::size_t>(q2)];
      models[static_cast<std::size_t>(p)].emplace_back(link);
      std::vector<Eigen::MatrixXcd> link_taps;
      for (const auto& tap : link.taps) link_taps.push_back(detail::dense_tap(tap, in.dims));
      taps[static_cast<std::size_t>(p)].push_back(std::move(link_taps));
    }

  DlBoundMoments m;
  m.dims = in.dims;
  m.rho_d = power.rho_d;
  m.trials = trials;
  m.d_mean = Eigen::MatrixXcd::Zero(mn, mn);
  m.second_sum = Eigen::MatrixXcd::Zero(mn, mn);

  std::vector<Eigen::MatrixXcd> d(static_cast<std::size_t>(num_users));
  for (int t = 0; t < trials; ++t) {
    for (auto& mat : d) mat = Eigen::MatrixXcd::Zero(mn, mn);
    for (int p = 0; p < num_aps; ++p) {
      // Target user's true channel at this AP.
      const auto target_draw = models[static_cast<std::size_t>(p)][static_cast<std::size_t>(q)].draw(rng);
      Eigen::MatrixXcd h = Eigen::MatrixXcd::Zero(mn, mn);
      const auto& target_taps = taps[static_cast<std::size_t>(p)][static_cast<std::size_t>(q)];
      for (std::size_t i = 0; i < target_taps.size(); ++i)
        h.noalias() += target_draw.truth[i] * target_taps[i];
      for (int q2 = 0; q2 < num_users; ++q2) {
        Eigen::MatrixXcd ehat = Eigen::MatrixXcd::Zero(mn, mn);
        const auto& other_taps = taps[static_cast<std::size_t>(p)][static_cast<std::size_t>(q2)];
        if (q2 == q) {
          for (std::size_t i = 0; i < other_taps.size(); ++i)
            ehat.noalias() += target_draw.est[i] * other_taps[i];
        } else {
          const auto draw = models[static_cast<std::size_t>(p)][static_cast<std::size_t>(q2)].draw(rng);
          for (std::size_t i = 0; i < other_taps.size(); ++i)
            ehat.noalias() += draw.est[i] * other_taps[i];
        }
        const double scale =
            std::sqrt(power.eta[static_cast<std::size_t>(p)][static_cast<std::size_t>(q2)]);
        d[static_cast<std::size_t>(q2)].noalias() += scale * (h * ehat.adjoint());
      }
    }
    m.d_mean.noalias() += d[static_cast<std::size_t>(q)];
    for (int q2 = 0; q2 < num_users; ++q2)
      m.second_sum.noalias() += d[static_cast<std::size_t>(q2)] * d[static_cast<std::size_t>(q2)].adjoint();
  }
  m.d_mean /= trials;
  m.second_sum /= trials;
  return m;
}

/// Achievable downlink SE of a per-user MMSE-SIC detector that only knows the
/// mean effective channel:
///   (omega / MN) log2 det(I + rho_d Dbar^H Psi^{-1} Dbar),
///   Psi = I + rho_d sum_{q'} E{D_qq' D_qq'^H} - rho_d Dbar Dbar^H.
/// The fluctuation covariance sums over every user including the target, so
/// Psi stays positive definite.
inline double downlink_se_mmse_sic_bound(const DlBoundMoments& m, double omega) {
  if (m.rho_d == 0.0) return 0.0;
  const int mn = m.dims.size();
  const Eigen::MatrixXcd psi = Eigen::MatrixXcd::Identity(mn, mn) + m.rho_d * m.second_sum -
                               m.rho_d * m.d_mean * m.d_mean.adjoint();
  const Eigen::MatrixXcd d = std::sqrt(m.rho_d) * m.d_mean;
  return omega * detail::logdet2_capacity(d, psi, "downlink_se_mmse_sic_bound") / mn;
}

inline double downlink_se_mmse_sic_bound(const SEInputs& in, const DlPowerConfig& power, int q,
                                         double omega, int trials, Rng& rng) {
  return downlink_se_mmse_sic_bound(estimate_downlink_bound_moments(in, power, q, trials, rng),
                                    omega);
}

}  // namespace otfslink
