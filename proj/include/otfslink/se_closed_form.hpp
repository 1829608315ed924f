#pragma once
// Closed-form spectral-efficiency expressions for matched-filter precoding
// (downlink) and matched-filter combining (uplink) over delay-Doppler
// effective channels, plus the frame-overhead bookkeeping, the full-power
// downlink power-control rule, the large-array power-scaling limits, and the
// receiver noise-power model.
//
// Every per-user SE has the shape
//   SE_q = (omega / MN) * sum_r log2(1 + SINR_q(r)),
// where the per-row SINR decomposes into a coherent desired-signal term, an
// own-link beam-split term (paths of the desired link interfering with the
// same row), an own-link leakage term (paths spilling into other rows), a
// cross-user term, and noise.  The decomposition is exposed through
// SEComponentTable so Monte-Carlo experiments can check each term separately.

#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "otfslink/channel.hpp"
#include "otfslink/common.hpp"
#include "otfslink/dd_operator.hpp"

namespace otfslink {

// ---------------------------------------------------------------------------
// Frame bookkeeping and payload overheads
// ---------------------------------------------------------------------------

enum class EstimationScheme { embedded_pilot, superimposed_pilot };

/// One transmission frame: n_dl downlink payload symbols followed by n_ul
/// uplink symbols, each spanning m_delay lattice samples.
struct FramePlan {
  int m_delay = 0;
  int n_dl = 0;
  int n_ul = 0;
  int n_total() const { return n_dl + n_ul; }
};

struct OverheadFactors {
  double dl = 0.0;
  double ul = 0.0;
};

/// Fraction of frame resources carrying payload in each direction.  An
/// embedded pilot additionally consumes its guard region out of the uplink
/// share; a superimposed pilot rides on the data symbols and costs nothing.
inline OverheadFactors overhead_factors(const FramePlan& frame, EstimationScheme scheme,
                                        int n_guard) {
  if (frame.m_delay <= 0 || frame.n_dl < 0 || frame.n_ul < 0 || frame.n_total() <= 0)
    throw std::invalid_argument("overhead_factors: invalid frame plan");
  if (n_guard < 0) throw std::invalid_argument("overhead_factors: negative guard size");
  const double n_t = frame.n_total();
  OverheadFactors w;
  w.dl = 1.0 - frame.n_ul / n_t;
  if (scheme == EstimationScheme::embedded_pilot) {
    w.ul = 1.0 - (static_cast<double>(frame.m_delay) * frame.n_dl + n_guard) /
                     (static_cast<double>(frame.m_delay) * n_t);
  } else {
    w.ul = 1.0 - frame.n_dl / n_t;
  }
  if (w.ul < 0.0)
    throw std::invalid_argument("overhead_factors: pilot guard exceeds the uplink share");
  return w;
}

// ---------------------------------------------------------------------------
// Inputs
// ---------------------------------------------------------------------------

/// Statistics of one AP-user link entering the SE expressions: the path taps
/// (delay/Doppler placement and true variance beta) and the matching
/// estimate variances gamma, aligned index-for-index.
struct LinkSEInput {
  std::vector<PathTap> taps;
  std::vector<double> gamma;

  int paths() const { return static_cast<int>(taps.size()); }
  double beta_sum() const {
    double s = 0;
    for (const auto& t : taps) s += t.beta;
    return s;
  }
  double gamma_sum() const {
    double s = 0;
    for (double g : gamma) s += g;
    return s;
  }
};

/// All links of one network drop, indexed [ap][user].
struct SEInputs {
  DDDims dims{1, 1};
  std::vector<std::vector<LinkSEInput>> links;

  int num_aps() const { return static_cast<int>(links.size()); }
  int num_users() const { return links.empty() ? 0 : static_cast<int>(links.front().size()); }
};

namespace detail {

inline void validate_se_inputs(const SEInputs& in, int user) {
  const int num_aps = in.num_aps();
  if (num_aps == 0) throw std::invalid_argument("se inputs: no APs");
  const int num_users = in.num_users();
  if (user < 0 || user >= num_users) throw std::invalid_argument("se inputs: user out of range");
  for (const auto& row : in.links) {
    if (static_cast<int>(row.size()) != num_users)
      throw std::invalid_argument("se inputs: ragged link table");
    for (const auto& link : row) {
      if (link.taps.size() != link.gamma.size())
        throw std::invalid_argument("se inputs: taps/gamma size mismatch");
      for (std::size_t i = 0; i < link.gamma.size(); ++i) {
        if (link.gamma[i] < 0.0 || link.gamma[i] > link.taps[i].beta + 1e-12)
          throw std::invalid_argument("se inputs: estimate variance outside [0, beta]");
      }
    }
  }
}

}  // namespace detail

/// Downlink transmit powers: common normalized SNR rho_d and per-(AP, user)
/// power-control weights eta[p][q].
struct DlPowerConfig {
  double rho_d = 0.0;
  std::vector<std::vector<double>> eta;
};

/// Uplink transmit powers: per-user normalized data SNR and power-control
/// coefficient in [0, 1].
struct UlPowerConfig {
  std::vector<double> rho_dt;
  std::vector<double> eta;
};

// ---------------------------------------------------------------------------
// Full-power downlink power control
// ---------------------------------------------------------------------------

/// Per-AP transmit-power budget used by the full-power rule:
/// eta_pq = (sum_{q'} sum_i gamma_pq',i)^{-1}, identical across q, which
/// meets the per-AP constraint sum_q sum_i eta_pq gamma_pq,i <= 1 with
/// equality.
inline std::vector<std::vector<double>> dl_power_control_full(
    const std::vector<std::vector<std::vector<double>>>& gammas) {
  std::vector<std::vector<double>> eta(gammas.size());
  for (std::size_t p = 0; p < gammas.size(); ++p) {
    double total = 0;
    for (const auto& link : gammas[p])
      for (double g : link) total += g;
    if (total <= 0.0)
      throw std::invalid_argument("dl_power_control_full: zero estimate-variance sum at an AP");
    eta[p].assign(gammas[p].size(), 1.0 / total);
  }
  return eta;
}

inline std::vector<std::vector<double>> dl_power_control_full(const SEInputs& in) {
  std::vector<std::vector<std::vector<double>>> gammas(in.links.size());
  for (std::size_t p = 0; p < in.links.size(); ++p)
    for (const auto& link : in.links[p]) gammas[p].push_back(link.gamma);
  return dl_power_control_full(gammas);
}

/// Left-hand side of the per-AP power constraint at AP p:
/// sum_q sum_i eta_pq gamma_pq,i (must be <= 1).
inline double dl_power_constraint_sum(const SEInputs& in,
                                      const std::vector<std::vector<double>>& eta, int p) {
  double s = 0;
  for (int q = 0; q < in.num_users(); ++q) s += eta.at(p).at(q) * in.links.at(p).at(q).gamma_sum();
  return s;
}

// ---------------------------------------------------------------------------
// Per-row interference kernels
// ---------------------------------------------------------------------------

/// Which side of the matched filter the path-pair product sits on: the
/// precoder sees T_i T_j^H (transmit side), the combiner sees T_i^H T_j
/// (receive side).  The two coincide for integer Doppler taps.
enum class KernelSide { precode, combine };

/// Leakage bookkeeping convention.  `coherent` measures the squared coherent
/// sum of a row's off-diagonal entries; `incoherent` measures their total
/// energy (1 - chi, since every row of the pair product has unit norm).
/// They agree for integer Doppler taps.
enum class KappaForm { coherent, incoherent };

namespace detail {

/// chi/kappa evaluator for one ordered path pair.  Integer-Doppler pairs
/// collapse to row-independent constants: the product diagonal vanishes
/// unless the delays match and the Doppler gap is a multiple of N, in which
/// case the pair is fully coherent.
struct PairKernel {
  bool constant = true;
  double chi0 = 0.0;
  std::optional<ProductRowStats> stats;

  PairKernel(const PathTap& a, const PathTap& b, DDDims dims, KernelSide side) {
    if (a.frac == 0.0 && b.frac == 0.0) {
      const bool aligned =
          a.delay_tap == b.delay_tap && imod(a.doppler_tap - b.doppler_tap, dims.N) == 0;
      chi0 = aligned ? 1.0 : 0.0;
      return;
    }
    constant = false;
    const auto oa = build_dd_operator(a.delay_tap, a.doppler_tap, a.frac, dims);
    const auto ob = build_dd_operator(b.delay_tap, b.doppler_tap, b.frac, dims);
    stats.emplace(side == KernelSide::precode ? product_form(oa, ob)
                                              : adjoint_product_form(oa, ob));
  }

  double chi(int r) const { return constant ? chi0 : stats->chi(r); }
  double kappa(int r, KappaForm form) const {
    if (constant) return 1.0 - chi0;
    return form == KappaForm::coherent ? stats->kappa(r) : stats->kappa_incoherent(r);
  }
};

}  // namespace detail

// ---------------------------------------------------------------------------
// SINR component tables
// ---------------------------------------------------------------------------

/// Per-user SINR decomposition.  The per-row vectors hold one entry when the
/// SINR is row-independent (all pair kernels constant), MN entries otherwise.
///   SINR(r) = self_scale*ds^2 /
///             (self_scale*(beam_split(r) + leakage(r)) + cross_scale*cross_user + noise)
struct SEComponentTable {
  double ds = 0.0;                 // coherent desired-signal amplitude
  std::vector<double> beam_split;  // own-link same-row interference, per row
  std::vector<double> leakage;     // own-link inter-row interference, per row
  double cross_user = 0.0;         // other-user interference
  double noise = 1.0;              // denominator noise term
  double self_scale = 1.0;         // multiplies ds^2 and the own-link terms
  double cross_scale = 1.0;        // multiplies cross_user
  bool row_uniform = true;
  DDDims dims{1, 1};

  int rows() const { return row_uniform ? 1 : dims.size(); }

  double sinr_at(int idx) const {
    const double num = self_scale * ds * ds;
    if (num == 0.0) return 0.0;
    const double den = self_scale * (beam_split.at(static_cast<std::size_t>(idx)) +
                                     leakage.at(static_cast<std::size_t>(idx))) +
                       cross_scale * cross_user + noise;
    return num / den;
  }

  std::vector<double> sinr_rows() const {
    std::vector<double> out(static_cast<std::size_t>(dims.size()));
    for (int r = 0; r < dims.size(); ++r) out[static_cast<std::size_t>(r)] = sinr_at(row_uniform ? 0 : r);
    return out;
  }

  /// omega * (1/MN) * sum_r log2(1 + SINR(r)).
  double spectral_efficiency(double omega) const {
    if (row_uniform) return omega * std::log2(1.0 + sinr_at(0));
    double acc = 0;
    for (int r = 0; r < dims.size(); ++r) acc += std::log2(1.0 + sinr_at(r));
    return omega * acc / dims.size();
  }
};

namespace detail {

/// Accumulate the own-link pair terms of user q.  `weight(i, j)` supplies
/// the variance product attached to ordered pair (i, j).
template <typename WeightFn>
void accumulate_own_link(const SEInputs& in, int q, KernelSide side, KappaForm form,
                         const std::vector<double>& per_ap_scale, WeightFn weight,
                         SEComponentTable& table) {
  const int mn = in.dims.size();
  bool uniform = true;
  for (const auto& row : in.links)
    for (const auto& tap : row[static_cast<std::size_t>(q)].taps)
      if (tap.frac != 0.0) uniform = false;

  table.row_uniform = uniform;
  const int rows = uniform ? 1 : mn;
  table.beam_split.assign(static_cast<std::size_t>(rows), 0.0);
  table.leakage.assign(static_cast<std::size_t>(rows), 0.0);

  for (int p = 0; p < in.num_aps(); ++p) {
    const auto& link = in.links[static_cast<std::size_t>(p)][static_cast<std::size_t>(q)];
    const double scale = per_ap_scale[static_cast<std::size_t>(p)];
    if (scale == 0.0) continue;
    double matched = 0;  // sum_i beta_i gamma_i: the i = j diagonal pairs
    for (int i = 0; i < link.paths(); ++i)
      matched += link.taps[static_cast<std::size_t>(i)].beta * link.gamma[static_cast<std::size_t>(i)];
    for (int r = 0; r < rows; ++r) table.beam_split[static_cast<std::size_t>(r)] += scale * matched;

    for (int i = 0; i < link.paths(); ++i) {
      for (int j = 0; j < link.paths(); ++j) {
        if (i == j) continue;
        const double w = scale * weight(link, i, j);
        if (w == 0.0) continue;
        const detail::PairKernel kernel(link.taps[static_cast<std::size_t>(i)],
                                        link.taps[static_cast<std::size_t>(j)], in.dims, side);
        for (int r = 0; r < rows; ++r) {
          table.beam_split[static_cast<std::size_t>(r)] += w * kernel.chi(r);
          table.leakage[static_cast<std::size_t>(r)] += w * kernel.kappa(r, form);
        }
      }
    }
  }
}

}  // namespace detail

/// Downlink SINR components of user q under matched-filter precoding with
/// estimate-variance-weighted conjugate beams:
///   ds            = sum_p sqrt(eta_pq) sum_i gamma_pq,i
///   beam_split(r) = sum_p eta_pq [sum_i beta_i gamma_i
///                                 + sum_{i != j} beta_i gamma_j chi^{ij}(r)]
///   leakage(r)    = sum_p eta_pq sum_{i != j} beta_i gamma_j kappa^{ij}(r)
///   cross_user    = sum_p sum_{q' != q} eta_pq' (sum_i beta_pq,i)(sum_j gamma_pq',j)
///   noise         = 1,  self_scale = cross_scale = rho_d
inline SEComponentTable downlink_components(const SEInputs& in, const DlPowerConfig& power,
                                            int q, KappaForm form = KappaForm::coherent) {
  detail::validate_se_inputs(in, q);
  const int num_aps = in.num_aps();
  const int num_users = in.num_users();
  if (static_cast<int>(power.eta.size()) != num_aps)
    throw std::invalid_argument("downlink_components: eta row count != AP count");

  SEComponentTable table;
  table.dims = in.dims;
  table.self_scale = power.rho_d;
  table.cross_scale = power.rho_d;
  table.noise = 1.0;

  std::vector<double> eta_q(static_cast<std::size_t>(num_aps));
  for (int p = 0; p < num_aps; ++p) {
    const auto& eta_row = power.eta[static_cast<std::size_t>(p)];
    if (static_cast<int>(eta_row.size()) != num_users)
      throw std::invalid_argument("downlink_components: eta column count != user count");
    eta_q[static_cast<std::size_t>(p)] = eta_row[static_cast<std::size_t>(q)];
    const auto& target = in.links[static_cast<std::size_t>(p)][static_cast<std::size_t>(q)];
    table.ds += std::sqrt(eta_row[static_cast<std::size_t>(q)]) * target.gamma_sum();
    const double beta_target = target.beta_sum();
    for (int q2 = 0; q2 < num_users; ++q2) {
      if (q2 == q) continue;
      table.cross_user += eta_row[static_cast<std::size_t>(q2)] * beta_target *
                          in.links[static_cast<std::size_t>(p)][static_cast<std::size_t>(q2)].gamma_sum();
    }
  }

  detail::accumulate_own_link(
      in, q, KernelSide::precode, form, eta_q,
      [](const LinkSEInput& link, int i, int j) {
        return link.taps[static_cast<std::size_t>(i)].beta * link.gamma[static_cast<std::size_t>(j)];
      },
      table);
  return table;
}

/// Uplink SINR components of user q under matched-filter combining with the
/// AP-side channel estimates:
///   ds            = sum_p sum_i gamma_pq,i
///   beam_split(r) = sum_p [sum_i beta_i gamma_i
///                          + sum_{i != j} gamma_i beta_j chi^{ij}(r)]
///   leakage(r)    = sum_p sum_{i != j} gamma_i beta_j kappa^{ij}(r)
///   cross_user    = sum_{q' != q} rho_dt_q' eta_q' sum_p (sum_i gamma_pq,i)(sum_j beta_pq',j)
///   noise         = sum_p sum_i gamma_pq,i   (noise passed through the combiner)
///   self_scale    = rho_dt_q eta_q,  cross_scale = 1
/// The pair kernels sit on the combine side (T_i^H T_j) and weight the
/// combiner variance gamma_i against the true-channel variance beta_j; the
/// cross-user term pairs the target user's combiner (gamma) with the
/// interferer's true channel (beta).
inline SEComponentTable uplink_components(const SEInputs& in, const UlPowerConfig& power, int q,
                                          KappaForm form = KappaForm::coherent) {
  detail::validate_se_inputs(in, q);
  const int num_aps = in.num_aps();
  const int num_users = in.num_users();
  if (static_cast<int>(power.rho_dt.size()) != num_users ||
      static_cast<int>(power.eta.size()) != num_users)
    throw std::invalid_argument("uplink_components: power vectors must have one entry per user");

  SEComponentTable table;
  table.dims = in.dims;
  table.self_scale =
      power.rho_dt[static_cast<std::size_t>(q)] * power.eta[static_cast<std::size_t>(q)];
  table.cross_scale = 1.0;
  table.noise = 0.0;

  for (int p = 0; p < num_aps; ++p) {
    const auto& target = in.links[static_cast<std::size_t>(p)][static_cast<std::size_t>(q)];
    const double gamma_target = target.gamma_sum();
    table.ds += gamma_target;
    for (int q2 = 0; q2 < num_users; ++q2) {
      if (q2 == q) continue;
      table.cross_user +=
          power.rho_dt[static_cast<std::size_t>(q2)] * power.eta[static_cast<std::size_t>(q2)] *
          gamma_target * in.links[static_cast<std::size_t>(p)][static_cast<std::size_t>(q2)].beta_sum();
    }
  }
  table.noise = table.ds;

  const std::vector<double> unit(static_cast<std::size_t>(num_aps), 1.0);
  detail::accumulate_own_link(
      in, q, KernelSide::combine, form, unit,
      [](const LinkSEInput& link, int i, int j) {
        return link.gamma[static_cast<std::size_t>(i)] * link.taps[static_cast<std::size_t>(j)].beta;
      },
      table);
  return table;
}

// ---------------------------------------------------------------------------
// Spectral efficiencies
// ---------------------------------------------------------------------------

inline double downlink_se(const SEInputs& in, const DlPowerConfig& power, int q, double omega,
                          KappaForm form = KappaForm::coherent) {
  return downlink_components(in, power, q, form).spectral_efficiency(omega);
}

inline double uplink_se(const SEInputs& in, const UlPowerConfig& power, int q, double omega,
                        KappaForm form = KappaForm::coherent) {
  return uplink_components(in, power, q, form).spectral_efficiency(omega);
}

/// Downlink SE when all paths of every target link occupy distinct delay
/// taps: the kernel table drops out and the own-link interference collapses
/// to sum_p eta_pq (sum_i beta_i)(sum_j gamma_j).
inline double downlink_se_distinct_delays(const SEInputs& in, const DlPowerConfig& power, int q,
                                          double omega) {
  detail::validate_se_inputs(in, q);
  double ds = 0, interference = 0;
  for (int p = 0; p < in.num_aps(); ++p) {
    const auto& eta_row = power.eta.at(static_cast<std::size_t>(p));
    const auto& target = in.links[static_cast<std::size_t>(p)][static_cast<std::size_t>(q)];
    ds += std::sqrt(eta_row.at(static_cast<std::size_t>(q))) * target.gamma_sum();
    const double beta_target = target.beta_sum();
    for (int q2 = 0; q2 < in.num_users(); ++q2)
      interference += eta_row.at(static_cast<std::size_t>(q2)) * beta_target *
                      in.links[static_cast<std::size_t>(p)][static_cast<std::size_t>(q2)].gamma_sum();
  }
  const double num = power.rho_d * ds * ds;
  if (num == 0.0) return 0.0;
  return omega * std::log2(1.0 + num / (power.rho_d * interference + 1.0));
}

/// Uplink SE under the same distinct-delay condition.
inline double uplink_se_distinct_delays(const SEInputs& in, const UlPowerConfig& power, int q,
                                        double omega) {
  detail::validate_se_inputs(in, q);
  const double rho_eta_q = power.rho_dt.at(static_cast<std::size_t>(q)) *
                           power.eta.at(static_cast<std::size_t>(q));
  double ds = 0, own = 0, cross = 0;
  for (int p = 0; p < in.num_aps(); ++p) {
    const auto& target = in.links[static_cast<std::size_t>(p)][static_cast<std::size_t>(q)];
    const double gamma_target = target.gamma_sum();
    ds += gamma_target;
    own += target.beta_sum() * gamma_target;
    for (int q2 = 0; q2 < in.num_users(); ++q2) {
      if (q2 == q) continue;
      cross += power.rho_dt.at(static_cast<std::size_t>(q2)) *
               power.eta.at(static_cast<std::size_t>(q2)) * gamma_target *
               in.links[static_cast<std::size_t>(p)][static_cast<std::size_t>(q2)].beta_sum();
    }
  }
  const double num = rho_eta_q * ds * ds;
  if (num == 0.0) return 0.0;
  return omega * std::log2(1.0 + num / (rho_eta_q * own + cross + ds));
}

// ---------------------------------------------------------------------------
// Power-scaling limits
// ---------------------------------------------------------------------------

/// Large-array downlink limit with per-AP power rho_d = E_d / M_a^2 under the
/// uniform full-power regime: omega * log2(1 + (E_d / K_u) L gamma).
inline double dl_power_scaling_limit(double e_d, int paths, double gamma, int num_users,
                                     double omega) {
  if (num_users <= 0) throw std::invalid_argument("dl_power_scaling_limit: need at least one user");
  return omega * std::log2(1.0 + e_d / num_users * paths * gamma);
}

/// Large-array uplink limit with per-user power rho_dt = E_u / M_a:
/// omega * log2(1 + E_u eta L gamma).
inline double ul_power_scaling_limit(double e_u, double eta, int paths, double gamma,
                                     double omega) {
  return omega * std::log2(1.0 + e_u * eta * paths * gamma);
}

// ---------------------------------------------------------------------------
// Receiver noise power
// ---------------------------------------------------------------------------

/// Thermal noise power over the occupied bandwidth m_delay * delta_f:
/// k_B * T0 * (M df) * F, with the noise figure given in dB.
inline double noise_power_watts(int m_delay, double delta_f_hz, double noise_figure_db,
                                double temperature_k = 290.0) {
  if (m_delay <= 0 || delta_f_hz <= 0.0 || temperature_k <= 0.0)
    throw std::invalid_argument("noise_power_watts: positive inputs required");
  return kBoltzmann * temperature_k * (m_delay * delta_f_hz) *
         db_to_linear(noise_figure_db);
}

inline double watts_to_dbm(double watts) { return 10.0 * std::log10(watts / 1e-3); }

}  // namespace otfslink
