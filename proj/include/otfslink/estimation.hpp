#pragma once
// Channel-gain estimation for the uplink training phase.
//
// Two schemes are implemented, both assuming the per-path delay/Doppler
// indices are already known and only the complex gains are estimated.
//
// Embedded pilot (EP): each user places one impulse pilot inside a dedicated
// pilot+guard region of N_guard = (2*l_max+1)*(4*k_max+4*k_hat+1) lattice
// points; other users may transmit data over that region.  The per-path gain
// is estimated by scaling the single received pilot-region sample:
//    h_hat_i = c_i * y_i,
//    c_i     = sqrt(rho_pil*eta)*beta_i
//              / (rho_pil*eta*beta_i + I1 + I2 + 1),
// where I1 is the own-user data leakage through the fractional-Doppler
// sidelobes, I2 the other-user data leakage, and powers are noise-normalized
// (rho = P/sigma^2, so the additive noise term is 1).  The estimate variance
// is gamma_i = sqrt(rho_pil*eta)*beta_i*c_i.
//
// Superimposed pilot (SP): a full-frame pilot sequence psi (i.i.d. entries of
// power rho_pil) is added on top of the data.  With the equivalent pilot
// matrix Xi = sqrt(eta)*[T_1 psi, ..., T_L psi], the gain vector estimate is
//    h_hat = (Xi^H C_w^-1 Xi + C_h^-1)^-1 Xi^H C_w^-1 y,
// where C_w = c_w*I collects every user's data, the other users' pilots, and
// noise:  c_w = sum_q eta_q rho_dt_q sum_i beta_pq,i
//             + sum_{q' != q} eta_q' rho_pil_q' sum_i beta_pq',i + 1.
// The closed-form per-path quality used by the SE expressions is
//    gamma_i = rho_pil*eta*beta_i^2
//              / (rho_pil*eta*beta_i + other-user pilot sum
//                 + all-user data sum + 1).
//
// All powers in this header are noise-normalized unless noted otherwise.

#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "otfslink/channel.hpp"
#include "otfslink/common.hpp"
#include "otfslink/dd_operator.hpp"

namespace otfslink {

// ---------------------------------------------------------------------------
// Embedded-pilot bookkeeping
// ---------------------------------------------------------------------------

struct EpConfig {
  int k_max = 0;        // integer Doppler budget of the deployment
  int l_max = 0;        // delay-tap budget of the deployment
  int guard_extra = 0;  // additional Doppler guard half-width (fractional spread)
  double pilot_power = 0.0;  // noise-normalized pilot symbol power
  double data_power = 0.0;   // noise-normalized data symbol power

  /// Lattice points consumed by one user's pilot + guard region.
  int n_guard() const { return (2 * l_max + 1) * (4 * k_max + 4 * guard_extra + 1); }
};

/// Pilot/data power split from a per-symbol budget: the pilot symbol gets
/// alpha_che * p_max, data symbols get (1 - alpha_che) * p_max.
inline std::pair<double, double> ep_power_split(double p_max, double alpha_che) {
  if (alpha_che < 0.0 || alpha_che > 1.0)
    throw std::invalid_argument("ep_power_split: alpha_che must lie in [0, 1]");
  return {alpha_che * p_max, (1.0 - alpha_che) * p_max};
}

/// Maximum number of users whose disjoint pilot+guard regions fit the frame.
inline int ep_user_capacity(DDDims dims, int n_guard) {
  if (n_guard < 1) throw std::invalid_argument("ep_user_capacity: n_guard must be >= 1");
  return dims.size() / n_guard;
}

/// Default pilot anchor per user: regions packed back to back in row-major
/// linearized frame order (disjoint index blocks of size n_guard), anchor
/// (k_q, l_q) at the block start.
inline std::vector<std::pair<int, int>> ep_pilot_positions(DDDims dims, const EpConfig& cfg,
                                                           int num_users) {
  const int n_guard = cfg.n_guard();
  const int capacity = ep_user_capacity(dims, n_guard);
  if (num_users > capacity)
    throw std::invalid_argument("ep_pilot_positions: pilot+guard regions exceed the frame");
  std::vector<std::pair<int, int>> anchors;
  anchors.reserve(num_users);
  for (int q = 0; q < num_users; ++q) {
    const int u = q * n_guard;
    anchors.emplace_back(u / dims.M, u % dims.M);  // (Doppler row, delay column)
  }
  return anchors;
}

// ---------------------------------------------------------------------------
// EP interference variances and MMSE coefficients
// ---------------------------------------------------------------------------

/// One user's contribution as seen by a receiving AP: uplink power-control
/// coefficient, noise-normalized powers, and the link's total variance
/// sum_i beta_pq,i.
struct UserLink {
  double eta = 1.0;
  double data_power = 0.0;
  double pilot_power = 0.0;
  double beta_sum = 0.0;
};

/// Own-user fractional-Doppler data leakage into the pilot sample:
/// data_power * eta * (N - 4 k_max - 4 k_hat - 1)/N^2 * sum_i beta_i.
inline double ep_interference_i1_var(const EpConfig& cfg, double eta, double beta_sum,
                                     DDDims dims) {
  const int guard_width = 4 * cfg.k_max + 4 * cfg.guard_extra + 1;
  if (guard_width > dims.N)
    throw std::invalid_argument("ep_interference_i1_var: Doppler guard exceeds the axis");
  const double frac = static_cast<double>(dims.N - guard_width) / (static_cast<double>(dims.N) * dims.N);
  return cfg.data_power * eta * frac * beta_sum;
}

/// Other users' data leakage into the pilot sample:
/// (1/N) * sum_{q' != q} eta_q' * data_power_q' * beta_sum_q'.
inline double ep_interference_i2_var(const std::vector<UserLink>& others, DDDims dims) {
  double acc = 0.0;
  for (const UserLink& u : others) acc += u.eta * u.data_power * u.beta_sum;
  return acc / dims.N;
}

struct EstimateQuality {
  enum class Scheme { ep, sp };
  Scheme scheme = Scheme::ep;
  std::vector<double> c;      // per-path observation scaling (EP)
  std::vector<double> gamma;  // per-path estimate variance

  double gamma_sum() const {
    double s = 0.0;
    for (double g : gamma) s += g;
    return s;
  }
};

/// Per-path MMSE scaling and estimate variance for the EP scheme.
/// `i2_var` is the other-user leakage (0 for a single user).
inline EstimateQuality ep_mmse_coeff(const EpConfig& cfg, const std::vector<double>& betas,
                                     double eta, double i2_var, DDDims dims) {
  double beta_sum = 0.0;
  for (double b : betas) beta_sum += b;
  const double i1_var = ep_interference_i1_var(cfg, eta, beta_sum, dims);
  const double pilot_gain = std::sqrt(cfg.pilot_power * eta);

  EstimateQuality quality;
  quality.scheme = EstimateQuality::Scheme::ep;
  quality.c.reserve(betas.size());
  quality.gamma.reserve(betas.size());
  for (double beta : betas) {
    const double denom = cfg.pilot_power * eta * beta + i1_var + i2_var + 1.0;
    const double c = pilot_gain * beta / denom;
    quality.c.push_back(c);
    quality.gamma.push_back(pilot_gain * beta * c);
  }
  return quality;
}

/// Scale the received pilot-region samples into per-path gain estimates.
inline std::vector<cplx> ep_estimate(const std::vector<cplx>& observations,
                                     const EstimateQuality& quality) {
  if (observations.size() != quality.c.size())
    throw std::invalid_argument("ep_estimate: one observation per path required");
  std::vector<cplx> est(observations.size());
  for (std::size_t i = 0; i < observations.size(); ++i)
    est[i] = quality.c[i] * observations[i];
  return est;
}

/// Received pilot-region sample per path: pilot echo + own-user leakage +
/// other-user leakage + unit noise, with the two leakage terms drawn as
/// moment-matched complex Gaussians of the closed-form variances.
inline std::vector<cplx> ep_simulate_observation(const std::vector<cplx>& gains,
                                                 const EpConfig& cfg, double eta,
                                                 double i1_var, double i2_var, Rng& rng,
                                                 double noise_var = 1.0) {
  const double pilot_gain = std::sqrt(cfg.pilot_power * eta);
  std::vector<cplx> obs(gains.size());
  for (std::size_t i = 0; i < gains.size(); ++i) {
    obs[i] = pilot_gain * gains[i] + rng.cgaussian(i1_var) + rng.cgaussian(i2_var) +
             rng.cgaussian(noise_var);
  }
  return obs;
}

// ---------------------------------------------------------------------------
// Superimposed-pilot estimation
// ---------------------------------------------------------------------------

/// Scalar s such that the interference-plus-noise covariance is s*I:
/// every user's data power plus the *other* users' pilot power, weighted by
/// the link variance sums, plus the noise floor.
inline double sp_noise_covariance(const std::vector<UserLink>& users, int target,
                                  double noise_power = 1.0) {
  if (target < 0 || target >= static_cast<int>(users.size()))
    throw std::invalid_argument("sp_noise_covariance: target index out of range");
  double acc = noise_power;
  for (int q = 0; q < static_cast<int>(users.size()); ++q) {
    acc += users[q].eta * users[q].data_power * users[q].beta_sum;
    if (q != target) acc += users[q].eta * users[q].pilot_power * users[q].beta_sum;
  }
  return acc;
}

/// Equivalent pilot matrix: column i = sqrt(eta) * T_i * psi.
inline Eigen::MatrixXcd sp_equivalent_pilot_matrix(const std::vector<DDOperator>& ops,
                                                   double eta, const std::vector<cplx>& psi) {
  if (ops.empty()) throw std::invalid_argument("sp_equivalent_pilot_matrix: no operators");
  const int n = ops.front().dims.size();
  if (static_cast<int>(psi.size()) != n)
    throw std::invalid_argument("sp_equivalent_pilot_matrix: pilot length mismatch");
  Eigen::MatrixXcd xi(n, static_cast<int>(ops.size()));
  const double root_eta = std::sqrt(eta);
  for (std::size_t i = 0; i < ops.size(); ++i) {
    const std::vector<cplx> col = otfslink::apply(ops[i], psi);
    for (int u = 0; u < n; ++u) xi(u, static_cast<int>(i)) = root_eta * col[u];
  }
  return xi;
}

/// Linear MMSE gain estimate from the full received frame:
/// h_hat = (Xi^H Xi / c_w + diag(1/beta))^-1 Xi^H y / c_w.
/// The solve is L x L; an ill-conditioned system raises an error carrying the
/// condition estimate.
inline Eigen::VectorXcd sp_estimate(const Eigen::VectorXcd& y, const Eigen::MatrixXcd& xi,
                                    double noise_cov_scalar, const std::vector<double>& betas) {
  const int num_paths = static_cast<int>(xi.cols());
  if (static_cast<int>(betas.size()) != num_paths)
    throw std::invalid_argument("sp_estimate: betas length must match pilot matrix columns");
  if (y.size() != xi.rows()) throw std::invalid_argument("sp_estimate: observation length mismatch");
  if (noise_cov_scalar <= 0.0)
    throw std::invalid_argument("sp_estimate: noise covariance must be positive");
  for (double b : betas)
    if (b <= 0.0) throw std::invalid_argument("sp_estimate: prior variances must be positive");

  Eigen::MatrixXcd a = xi.adjoint() * xi / noise_cov_scalar;
  for (int i = 0; i < num_paths; ++i) a(i, i) += 1.0 / betas[i];

  const Eigen::JacobiSVD<Eigen::MatrixXcd> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const double smax = svd.singularValues()(0);
  const double smin = svd.singularValues()(num_paths - 1);
  if (!(smin > 0.0) || smax / smin > 1e12)
    throw std::runtime_error("sp_estimate: normal equations ill-conditioned (cond ~ " +
                             std::to_string(smax / (smin > 0.0 ? smin : 1e-300)) + ")");
  return svd.solve((xi.adjoint() * y / noise_cov_scalar).eval());
}

/// Closed-form per-path estimate variance for the SP scheme (see header
/// comment).  `users[target]` supplies the target's eta and pilot power;
/// per-path priors come from `target_betas`.
inline std::vector<double> sp_gamma_closed_form(const std::vector<double>& target_betas,
                                                const std::vector<UserLink>& users, int target) {
  if (target < 0 || target >= static_cast<int>(users.size()))
    throw std::invalid_argument("sp_gamma_closed_form: target index out of range");
  const double eta = users[target].eta;
  const double rho_pil = users[target].pilot_power;
  double interference = 1.0;  // normalized noise
  for (int q = 0; q < static_cast<int>(users.size()); ++q) {
    interference += users[q].eta * users[q].data_power * users[q].beta_sum;
    if (q != target) interference += users[q].eta * users[q].pilot_power * users[q].beta_sum;
  }
  std::vector<double> gamma;
  gamma.reserve(target_betas.size());
  for (double beta : target_betas) {
    const double num = rho_pil * eta * beta * beta;
    const double den = rho_pil * eta * beta + interference;
    gamma.push_back(den > 0.0 ? num / den : 0.0);
  }
  return gamma;
}

// ---------------------------------------------------------------------------
// Quality invariants and MSE
// ---------------------------------------------------------------------------

/// Empirical mean of ||h - h_hat||^2 over trials.
inline double estimation_mse(const std::vector<std::vector<cplx>>& truth,
                             const std::vector<std::vector<cplx>>& estimates) {
  if (truth.size() != estimates.size() || truth.empty())
    throw std::invalid_argument("estimation_mse: need matching, non-empty trial lists");
  double acc = 0.0;
  for (std::size_t t = 0; t < truth.size(); ++t) {
    if (truth[t].size() != estimates[t].size())
      throw std::invalid_argument("estimation_mse: trial length mismatch");
    for (std::size_t i = 0; i < truth[t].size(); ++i) acc += std::norm(truth[t][i] - estimates[t][i]);
  }
  return acc / static_cast<double>(truth.size());
}

/// Closed-form MSE implied by an MMSE quality: sum_i (beta_i - gamma_i).
inline double mse_closed_form(const std::vector<double>& betas, const std::vector<double>& gammas) {
  if (betas.size() != gammas.size())
    throw std::invalid_argument("mse_closed_form: length mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < betas.size(); ++i) acc += betas[i] - gammas[i];
  return acc;
}

}  // namespace otfslink
