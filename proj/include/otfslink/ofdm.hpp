#pragma once
// OFDM baseline over the same physical delay-Doppler channels.
//
// A path with delay tap ℓ and Doppler index a = k+κ acts on the M samples of
// one CP-protected OFDM symbol as
//
//     Q = Π_M^ℓ · diag{ z^{a·n} },   n = 0..M−1,  z = e^{j2π/MN},
//
// (Π_M the M-point cyclic down-shift); the subcarrier-domain channel is the
// two-sided DFT similarity H^f = F_M (Σ_i h_i Q^(i)) F_M†.  Because the
// conjugation uses the full M-point DFT, every pair product
// F_M Π^s diag(d) F_M† has subcarrier-independent row statistics:
//
//     diagonal(c) = e^{−j2πcs/M} · mean(d),   row-sum(c) = e^{−j2πcs/M} · d_0,
//
// so the spectral-efficiency kernels χ = |mean(d)|² and κ = 1−χ are scalars.
// Unitarity and the unit-modulus row sum carry over from the delay-Doppler
// operators; the vanishing diagonal for distinct delays does not (with equal
// Doppler the product is exactly diagonal — per-subcarrier frequency
// selectivity), and nonzero Doppler differences leak across subcarriers
// (inter-carrier interference), which is why the incoherent κ form is the
// right leakage ledger here.
//
// Also implemented: cyclic-prefix and recurring block-pilot overhead
// accounting, the contaminated block-pilot estimate quality, closed-form
// downlink/uplink SINR component tables on the subcarrier grid, a Monte-Carlo
// downlink probe with true per-symbol Doppler drift of the path gains, and
// uplink receiver moments for processing levels 2 (local combining) and 4
// (fully centralized MMSE across all APs).

#include <cmath>
#include <complex>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "otfslink/channel.hpp"
#include "otfslink/common.hpp"
#include "otfslink/dd_operator.hpp"
#include "otfslink/estimation.hpp"
#include "otfslink/link_sim.hpp"
#include "otfslink/se_closed_form.hpp"

namespace otfslink {

// ---------------------------------------------------------------------------
// Symbol timing, cyclic prefix, and pilot cadence
// ---------------------------------------------------------------------------

struct OfdmConfig {
  double delta_f_hz = 0.0;  // subcarrier spacing
  double t_cp_s = 0.0;      // cyclic-prefix duration (>= channel delay spread)
  double nu_max_hz = 0.0;   // highest Doppler shift the pilots must track

  double t0_s() const { return 1.0 / delta_f_hz; }
  double symbol_s() const { return t_cp_s + t0_s(); }
  double cp_fraction() const { return t_cp_s / symbol_s(); }
  /// Symbol duration relative to the CP-free symbol: T / T0.
  double symbol_stretch() const { return symbol_s() * delta_f_hz; }
};

namespace detail {
inline void validate_ofdm_config(const OfdmConfig& cfg) {
  if (cfg.delta_f_hz <= 0.0) throw std::invalid_argument("ofdm config: delta_f must be positive");
  if (cfg.t_cp_s < 0.0) throw std::invalid_argument("ofdm config: negative CP duration");
  if (cfg.nu_max_hz < 0.0) throw std::invalid_argument("ofdm config: negative Doppler bound");
}
}  // namespace detail

/// Largest admissible block-pilot period: pilot symbols every D_t symbols
/// track the channel only while D_t < 1/(2 nu_max T) (strict).  Returns 0
/// ("no recurring pilots") for a static channel.
inline int ofdm_pilot_time_interval(const OfdmConfig& cfg) {
  detail::validate_ofdm_config(cfg);
  if (cfg.nu_max_hz == 0.0) return 0;
  const double bound = 1.0 / (2.0 * cfg.nu_max_hz * cfg.symbol_s());
  int dt = static_cast<int>(std::floor(bound));
  if (static_cast<double>(dt) == bound) --dt;
  if (dt < 2)
    throw std::invalid_argument(
        "ofdm_pilot_time_interval: Doppler too high for block pilots (period bound " +
        std::to_string(bound) + " leaves no data symbols)");
  return dt;
}

/// Largest admissible comb-pilot subcarrier period D_f < 1/(delta_f tau_max)
/// (strict).  Alternative pattern; the SE path uses block pilots.
inline int ofdm_pilot_freq_interval(const OfdmConfig& cfg, double tau_max_s) {
  detail::validate_ofdm_config(cfg);
  if (tau_max_s <= 0.0) throw std::invalid_argument("ofdm_pilot_freq_interval: tau_max must be positive");
  const double bound = 1.0 / (cfg.delta_f_hz * tau_max_s);
  int df = static_cast<int>(std::floor(bound));
  if (static_cast<double>(df) == bound) --df;
  if (df < 2)
    throw std::invalid_argument("ofdm_pilot_freq_interval: delay spread too high for comb pilots");
  return df;
}

/// Net payload multiplier of an n-symbol block: the cyclic-prefix charge
/// T0/T times the block-pilot charge (ceil(n/D_t) pilot symbols out of n).
inline double ofdm_efficiency_factor(const OfdmConfig& cfg, int n_symbols) {
  if (n_symbols <= 0) throw std::invalid_argument("ofdm_efficiency_factor: need symbols");
  const int dt = ofdm_pilot_time_interval(cfg);
  const int pilots = dt == 0 ? 0 : (n_symbols + dt - 1) / dt;
  return (1.0 - cfg.cp_fraction()) * static_cast<double>(n_symbols - pilots) / n_symbols;
}

/// Frame-level payload factors: downlink symbols pay only the cyclic prefix;
/// the uplink share also hosts the recurring block pilots (TDD: the APs
/// estimate from uplink pilots, so the downlink needs none).  With
/// block_pilots = false (superimposed pilots on the data grid) both
/// directions pay only the CP.
inline OverheadFactors ofdm_overhead_factors(const OfdmConfig& cfg, const FramePlan& frame,
                                             bool block_pilots = true) {
  if (frame.n_dl < 0 || frame.n_ul < 0 || frame.n_total() <= 0)
    throw std::invalid_argument("ofdm_overhead_factors: invalid frame plan");
  const double cp = 1.0 - cfg.cp_fraction();
  int pilots = 0;
  if (block_pilots && frame.n_ul > 0) {
    const int dt = ofdm_pilot_time_interval(cfg);
    if (dt > 0) pilots = (frame.n_ul + dt - 1) / dt;
  }
  const double n_t = frame.n_total();
  OverheadFactors w;
  w.dl = cp * frame.n_dl / n_t;
  w.ul = cp * (frame.n_ul - pilots) / n_t;
  return w;
}

// ---------------------------------------------------------------------------
// Per-symbol path operators and their subcarrier form
// ---------------------------------------------------------------------------

/// One path's action on a single OFDM symbol.  dims carries both the symbol
/// length M and the Doppler normalization N (a Doppler index of 1 means one
/// cycle per N CP-free symbols).
struct OfdmOperator {
  DDDims dims;
  int delay = 0;
  int doppler_tap = 0;
  double doppler_frac = 0.0;

  double doppler() const { return static_cast<double>(doppler_tap) + doppler_frac; }
};

inline OfdmOperator build_ofdm_operator(int delay, int doppler_tap, double doppler_frac,
                                        DDDims dims) {
  if (dims.M <= 0 || dims.N <= 0) throw std::invalid_argument("symbol dims must be positive");
  if (delay < 0 || delay >= dims.M)
    throw std::invalid_argument("path delay must satisfy 0 <= delay < M samples");
  if (!(doppler_frac > -0.5 && doppler_frac < 0.5))
    throw std::invalid_argument("fractional Doppler must lie in (-0.5, 0.5)");
  return OfdmOperator{dims, delay, doppler_tap, doppler_frac};
}

inline OfdmOperator ofdm_operator_from_tap(const PathTap& tap, DDDims dims) {
  return build_ofdm_operator(tap.delay_tap, tap.doppler_tap, tap.frac, dims);
}

/// Time-domain (sample) matrix: [Q]_{m,n} = δ((m−n−ℓ)_M) z^{a·n}.
inline Eigen::MatrixXcd materialize_ofdm_time(const OfdmOperator& op) {
  const int m_dim = op.dims.M;
  const double a = op.doppler();
  Eigen::MatrixXcd out = Eigen::MatrixXcd::Zero(m_dim, m_dim);
  for (int n = 0; n < m_dim; ++n)
    out(imod(n + op.delay, m_dim), n) = cis(kTwoPi * a * n / op.dims.size());
  return out;
}

/// Unitary M-point DFT matrix, forward sign e^{−j2πcn/M} (the same forward
/// convention as the Doppler-axis DFT of the DD operators).
inline Eigen::MatrixXcd dft_matrix(int m_dim) {
  if (m_dim <= 0) throw std::invalid_argument("dft_matrix: dimension must be positive");
  Eigen::MatrixXcd f(m_dim, m_dim);
  const double scale = 1.0 / std::sqrt(static_cast<double>(m_dim));
  for (int c = 0; c < m_dim; ++c)
    for (int n = 0; n < m_dim; ++n) f(c, n) = scale * cis(-kTwoPi * c * n / m_dim);
  return f;
}

/// Subcarrier-domain form F_M Q F_M†.
inline Eigen::MatrixXcd materialize_ofdm_freq(const OfdmOperator& op) {
  const Eigen::MatrixXcd f = dft_matrix(op.dims.M);
  return f * materialize_ofdm_time(op) * f.adjoint();
}

/// Phase drift of one path between the pilot symbol and data symbol n:
/// e^{j2π ν n T} = cis(2π a n (T/T0) / N).
inline cplx ofdm_symbol_phase(const OfdmOperator& op, double symbol_stretch, int symbol) {
  return cis(kTwoPi * op.doppler() * symbol_stretch * symbol / op.dims.N);
}

// ---------------------------------------------------------------------------
// Subcarrier-domain pair kernels
// ---------------------------------------------------------------------------

/// Canonical middle form Π^shift · diag(d) (M-point) of a subcarrier-domain
/// pair product F (·) F†.  All row statistics are subcarrier-independent in
/// modulus; see the header comment.
struct OfdmProductForm {
  int m = 0;
  int shift = 0;
  std::vector<cplx> d;
  cplx mu;  // mean of d

  cplx diagonal(int c) const { return cis(-kTwoPi * c * shift / m) * mu; }
  cplx row_sum(int c) const { return cis(-kTwoPi * c * shift / m) * d.front(); }
  double chi() const { return std::norm(mu); }
  double kappa_coherent() const { return std::norm(d.front() - mu); }
  double kappa_incoherent() const { return 1.0 - chi(); }
  double kappa(KappaForm form) const {
    return form == KappaForm::coherent ? kappa_coherent() : kappa_incoherent();
  }
};

namespace detail {
inline void check_ofdm_pair(const OfdmOperator& op_i, const OfdmOperator& op_j) {
  if (!(op_i.dims == op_j.dims))
    throw std::invalid_argument("ofdm product form: dimension mismatch");
}

inline void finish_ofdm_form(OfdmProductForm& pf) {
  cplx acc = 0;
  for (const cplx& v : pf.d) acc += v;
  pf.mu = acc / static_cast<double>(pf.m);
}
}  // namespace detail

/// Transmit-side product Q_i Q_j† in middle form: shift = (ℓi−ℓj) mod M,
/// d_r = z^{(a_i−a_j)·((r−ℓj) mod M)}.
inline OfdmProductForm ofdm_product_form(const OfdmOperator& op_i, const OfdmOperator& op_j) {
  detail::check_ofdm_pair(op_i, op_j);
  OfdmProductForm pf;
  pf.m = op_i.dims.M;
  pf.shift = imod(op_i.delay - op_j.delay, pf.m);
  pf.d.resize(static_cast<std::size_t>(pf.m));
  const double da = op_i.doppler() - op_j.doppler();
  const int mn = op_i.dims.size();
  for (int r = 0; r < pf.m; ++r)
    pf.d[static_cast<std::size_t>(r)] = cis(kTwoPi * da * imod(r - op_j.delay, pf.m) / mn);
  detail::finish_ofdm_form(pf);
  return pf;
}

/// Receive-side product Q_i† Q_j in middle form: shift = (ℓj−ℓi) mod M,
/// d_r = cis(2π (a_j·r − a_i·((r+shift) mod M)) / MN).
inline OfdmProductForm ofdm_adjoint_product_form(const OfdmOperator& op_i,
                                                 const OfdmOperator& op_j) {
  detail::check_ofdm_pair(op_i, op_j);
  OfdmProductForm pf;
  pf.m = op_i.dims.M;
  pf.shift = imod(op_j.delay - op_i.delay, pf.m);
  pf.d.resize(static_cast<std::size_t>(pf.m));
  const double ai = op_i.doppler(), aj = op_j.doppler();
  const int mn = op_i.dims.size();
  for (int r = 0; r < pf.m; ++r)
    pf.d[static_cast<std::size_t>(r)] =
        cis(kTwoPi * (aj * r - ai * imod(r + pf.shift, pf.m)) / mn);
  detail::finish_ofdm_form(pf);
  return pf;
}

// ---------------------------------------------------------------------------
// Effective channel of one link
// ---------------------------------------------------------------------------

/// Sum-of-paths OFDM channel of one link for one frame realization.
struct OfdmChannel {
  DDDims dims;
  std::vector<cplx> gains;
  std::vector<OfdmOperator> ops;

  int paths() const { return static_cast<int>(ops.size()); }
};

inline OfdmChannel build_ofdm_channel(const ChannelRealization& real, DDDims dims) {
  if (real.taps.size() != real.gains.size())
    throw std::invalid_argument("build_ofdm_channel: taps/gains size mismatch");
  if (real.taps.empty()) throw std::invalid_argument("build_ofdm_channel: no paths");
  OfdmChannel chan;
  chan.dims = dims;
  chan.gains = real.gains;
  chan.ops.reserve(real.taps.size());
  for (const PathTap& tap : real.taps) chan.ops.push_back(ofdm_operator_from_tap(tap, dims));
  return chan;
}

/// Dense time-domain channel of OFDM symbol `symbol` (gains drifted by the
/// per-symbol Doppler phases).
inline Eigen::MatrixXcd ofdm_time_matrix(const OfdmChannel& chan, double symbol_stretch = 1.0,
                                         int symbol = 0) {
  Eigen::MatrixXcd h = Eigen::MatrixXcd::Zero(chan.dims.M, chan.dims.M);
  for (int i = 0; i < chan.paths(); ++i)
    h += chan.gains[static_cast<std::size_t>(i)] *
         ofdm_symbol_phase(chan.ops[static_cast<std::size_t>(i)], symbol_stretch, symbol) *
         materialize_ofdm_time(chan.ops[static_cast<std::size_t>(i)]);
  return h;
}

/// Subcarrier-domain channel F H F† of OFDM symbol `symbol`.
inline Eigen::MatrixXcd ofdm_freq_matrix(const OfdmChannel& chan, double symbol_stretch = 1.0,
                                         int symbol = 0) {
  const Eigen::MatrixXcd f = dft_matrix(chan.dims.M);
  return f * ofdm_time_matrix(chan, symbol_stretch, symbol) * f.adjoint();
}

// ---------------------------------------------------------------------------
// Block-type pilot estimate quality
// ---------------------------------------------------------------------------

/// Per-path estimate variance under block-type pilots.  Pilot symbols are
/// time-multiplexed with data, so each user's pilot carries its full
/// per-symbol power budget (UserLink::pilot_power) — but every user transmits
/// its pilot symbol simultaneously, so the scalar MMSE of path i sees all
/// other users' pilot energy as contamination:
///   gamma_i = rho_pil eta beta_i^2
///             / (rho_pil eta beta_i + sum_{q' != target} rho_pil' eta' beta_sum' + 1).
inline std::vector<double> bt_gamma_closed_form(const std::vector<double>& target_betas,
                                                const std::vector<UserLink>& users, int target) {
  if (target < 0 || target >= static_cast<int>(users.size()))
    throw std::invalid_argument("bt_gamma_closed_form: target index out of range");
  const double eta = users[static_cast<std::size_t>(target)].eta;
  const double rho_pil = users[static_cast<std::size_t>(target)].pilot_power;
  double interference = 1.0;  // normalized noise
  for (int q = 0; q < static_cast<int>(users.size()); ++q) {
    if (q == target) continue;
    interference += users[static_cast<std::size_t>(q)].eta *
                    users[static_cast<std::size_t>(q)].pilot_power *
                    users[static_cast<std::size_t>(q)].beta_sum;
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
// Closed-form SINR components on the subcarrier grid
// ---------------------------------------------------------------------------

namespace detail {

/// Own-link pair accumulation with the subcarrier-domain kernels; the table
/// is always row-uniform because the kernels are scalars.
template <typename WeightFn>
void ofdm_accumulate_own_link(const SEInputs& in, int q, KernelSide side, KappaForm form,
                              const std::vector<double>& per_ap_scale, WeightFn weight,
                              SEComponentTable& table) {
  table.row_uniform = true;
  table.beam_split.assign(1, 0.0);
  table.leakage.assign(1, 0.0);

  for (int p = 0; p < in.num_aps(); ++p) {
    const auto& link = in.links[static_cast<std::size_t>(p)][static_cast<std::size_t>(q)];
    const double scale = per_ap_scale[static_cast<std::size_t>(p)];
    if (scale == 0.0) continue;
    for (int i = 0; i < link.paths(); ++i)
      table.beam_split[0] +=
          scale * link.taps[static_cast<std::size_t>(i)].beta * link.gamma[static_cast<std::size_t>(i)];

    for (int i = 0; i < link.paths(); ++i) {
      const auto op_i = ofdm_operator_from_tap(link.taps[static_cast<std::size_t>(i)], in.dims);
      for (int j = 0; j < link.paths(); ++j) {
        if (i == j) continue;
        const double w = scale * weight(link, i, j);
        if (w == 0.0) continue;
        const auto op_j = ofdm_operator_from_tap(link.taps[static_cast<std::size_t>(j)], in.dims);
        const OfdmProductForm kernel = side == KernelSide::precode
                                           ? ofdm_product_form(op_i, op_j)
                                           : ofdm_adjoint_product_form(op_i, op_j);
        table.beam_split[0] += w * kernel.chi();
        table.leakage[0] += w * kernel.kappa(form);
      }
    }
  }
}

}  // namespace detail

/// Downlink SINR components of user q under matched-filter precoding on the
/// subcarrier grid.  Same decomposition as the delay-Doppler table, with the
/// scalar subcarrier kernels; the incoherent leakage form is the default
/// because nonzero Doppler spreads every row across many subcarriers.
inline SEComponentTable ofdm_downlink_components(const SEInputs& in, const DlPowerConfig& power,
                                                 int q, KappaForm form = KappaForm::incoherent) {
  detail::validate_se_inputs(in, q);
  const int num_aps = in.num_aps();
  const int num_users = in.num_users();
  if (static_cast<int>(power.eta.size()) != num_aps)
    throw std::invalid_argument("ofdm_downlink_components: eta row count != AP count");

  SEComponentTable table;
  table.dims = DDDims{in.dims.M, 1};
  table.self_scale = power.rho_d;
  table.cross_scale = power.rho_d;
  table.noise = 1.0;

  std::vector<double> eta_q(static_cast<std::size_t>(num_aps));
  for (int p = 0; p < num_aps; ++p) {
    const auto& eta_row = power.eta[static_cast<std::size_t>(p)];
    if (static_cast<int>(eta_row.size()) != num_users)
      throw std::invalid_argument("ofdm_downlink_components: eta column count != user count");
    eta_q[static_cast<std::size_t>(p)] = eta_row[static_cast<std::size_t>(q)];
    const auto& target = in.links[static_cast<std::size_t>(p)][static_cast<std::size_t>(q)];
    table.ds += std::sqrt(eta_row[static_cast<std::size_t>(q)]) * target.gamma_sum();
    const double beta_target = target.beta_sum();
    for (int q2 = 0; q2 < num_users; ++q2) {
      if (q2 == q) continue;
      table.cross_user +=
          eta_row[static_cast<std::size_t>(q2)] * beta_target *
          in.links[static_cast<std::size_t>(p)][static_cast<std::size_t>(q2)].gamma_sum();
    }
  }

  detail::ofdm_accumulate_own_link(
      in, q, KernelSide::precode, form, eta_q,
      [](const LinkSEInput& link, int i, int j) {
        return link.taps[static_cast<std::size_t>(i)].beta * link.gamma[static_cast<std::size_t>(j)];
      },
      table);
  return table;
}

/// Uplink SINR components of user q under matched-filter combining on the
/// subcarrier grid (receive-side kernels, same weights as the delay-Doppler
/// table).
inline SEComponentTable ofdm_uplink_components(const SEInputs& in, const UlPowerConfig& power,
                                               int q, KappaForm form = KappaForm::incoherent) {
  detail::validate_se_inputs(in, q);
  const int num_aps = in.num_aps();
  const int num_users = in.num_users();
  if (static_cast<int>(power.rho_dt.size()) != num_users ||
      static_cast<int>(power.eta.size()) != num_users)
    throw std::invalid_argument("ofdm_uplink_components: power vectors must have one entry per user");

  SEComponentTable table;
  table.dims = DDDims{in.dims.M, 1};
  table.self_scale =
      power.rho_dt[static_cast<std::size_t>(q)] * power.eta[static_cast<std::size_t>(q)];
  table.cross_scale = 1.0;

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
  detail::ofdm_accumulate_own_link(
      in, q, KernelSide::combine, form, unit,
      [](const LinkSEInput& link, int i, int j) {
        return link.gamma[static_cast<std::size_t>(i)] * link.taps[static_cast<std::size_t>(j)].beta;
      },
      table);
  return table;
}

inline double ofdm_downlink_se(const SEInputs& in, const DlPowerConfig& power, int q, double omega,
                               KappaForm form = KappaForm::incoherent) {
  return ofdm_downlink_components(in, power, q, form).spectral_efficiency(omega);
}

inline double ofdm_uplink_se(const SEInputs& in, const UlPowerConfig& power, int q, double omega,
                             KappaForm form = KappaForm::incoherent) {
  return ofdm_uplink_components(in, power, q, form).spectral_efficiency(omega);
}

// ---------------------------------------------------------------------------
// Monte-Carlo downlink probe with per-symbol channel drift
// ---------------------------------------------------------------------------

/// Measure the downlink SINR decomposition of user q at one subcarrier by
/// Monte Carlo.  The precoders use the pilot-time estimates; the true path
/// gains drift by their per-symbol Doppler phases, so `symbol > 0` measures
/// the estimate staleness at that distance from the pilot.  The desired-
/// signal mean is projected onto its predicted phase direction, which at
/// symbol 0 reduces to the real part.
inline DlComponentSim simulate_ofdm_downlink_components(const SEInputs& in,
                                                        const DlPowerConfig& power, int q,
                                                        int subcarrier, int trials, Rng& rng,
                                                        double symbol_stretch = 1.0,
                                                        int symbol = 0) {
  detail::validate_se_inputs(in, q);
  const int m_dim = in.dims.M;
  if (subcarrier < 0 || subcarrier >= m_dim)
    throw std::invalid_argument("simulate_ofdm_downlink_components: subcarrier out of range");
  if (trials < 2)
    throw std::invalid_argument("simulate_ofdm_downlink_components: need at least 2 trials");
  const int num_aps = in.num_aps();
  const int num_users = in.num_users();
  if (static_cast<int>(power.eta.size()) != num_aps)
    throw std::invalid_argument("simulate_ofdm_downlink_components: eta row count != AP count");

  // rows[p][q2][i*paths(q2)+j] = probed row of Qf_i Qf_j^H scaled by
  // sqrt(eta_pq2); drift[p][i] = per-symbol phase of the target link's path i.
  std::vector<std::vector<std::vector<Eigen::RowVectorXcd>>> rows(
      static_cast<std::size_t>(num_aps));
  std::vector<std::vector<cplx>> drift(static_cast<std::size_t>(num_aps));
  std::vector<detail::LinkGainModel> target_model;
  std::vector<std::vector<detail::LinkGainModel>> other_model(static_cast<std::size_t>(num_aps));
  cplx predicted_mean = 0;
  for (int p = 0; p < num_aps; ++p) {
    const auto& target = in.links[static_cast<std::size_t>(p)][static_cast<std::size_t>(q)];
    target_model.emplace_back(target);
    std::vector<Eigen::MatrixXcd> t_target;
    for (int i = 0; i < target.paths(); ++i) {
      const auto op = ofdm_operator_from_tap(target.taps[static_cast<std::size_t>(i)], in.dims);
      t_target.push_back(materialize_ofdm_freq(op));
      const cplx phase = ofdm_symbol_phase(op, symbol_stretch, symbol);
      drift[static_cast<std::size_t>(p)].push_back(phase);
      predicted_mean += std::sqrt(power.eta[static_cast<std::size_t>(p)][static_cast<std::size_t>(q)]) *
                        target.gamma[static_cast<std::size_t>(i)] * phase;
    }
    rows[static_cast<std::size_t>(p)].resize(static_cast<std::size_t>(num_users));
    for (int q2 = 0; q2 < num_users; ++q2) {
      const auto& other = in.links[static_cast<std::size_t>(p)][static_cast<std::size_t>(q2)];
      if (q2 != q) other_model[static_cast<std::size_t>(p)].emplace_back(other);
      const double scale =
          std::sqrt(power.eta[static_cast<std::size_t>(p)][static_cast<std::size_t>(q2)]);
      auto& cell = rows[static_cast<std::size_t>(p)][static_cast<std::size_t>(q2)];
      for (int i = 0; i < target.paths(); ++i) {
        const Eigen::RowVectorXcd lead = t_target[static_cast<std::size_t>(i)].row(subcarrier);
        for (int j = 0; j < other.paths(); ++j) {
          const Eigen::MatrixXcd tj = materialize_ofdm_freq(
              ofdm_operator_from_tap(other.taps[static_cast<std::size_t>(j)], in.dims));
          cell.push_back(scale * (lead * tj.adjoint()));
        }
      }
    }
  }
  const cplx mean_dir =
      std::abs(predicted_mean) > 0.0 ? predicted_mean / std::abs(predicted_mean) : cplx(1.0, 0.0);

  std::vector<cplx> a_t(static_cast<std::size_t>(trials));
  std::vector<double> isi_t(static_cast<std::size_t>(trials));
  std::vector<double> cross_t(static_cast<std::size_t>(trials));
  Eigen::RowVectorXcd own_row(m_dim);
  std::vector<Eigen::RowVectorXcd> cross_rows(static_cast<std::size_t>(num_users),
                                              Eigen::RowVectorXcd(m_dim));

  for (int t = 0; t < trials; ++t) {
    own_row.setZero();
    for (auto& cr : cross_rows) cr.setZero();
    for (int p = 0; p < num_aps; ++p) {
      const auto draw = target_model[static_cast<std::size_t>(p)].draw(rng);
      const auto& cell_own = rows[static_cast<std::size_t>(p)][static_cast<std::size_t>(q)];
      const auto& phases = drift[static_cast<std::size_t>(p)];
      const int paths = static_cast<int>(draw.est.size());
      for (int i = 0; i < paths; ++i) {
        const cplx truth_i = draw.truth[static_cast<std::size_t>(i)] * phases[static_cast<std::size_t>(i)];
        for (int j = 0; j < paths; ++j)
          own_row.noalias() += truth_i * std::conj(draw.est[static_cast<std::size_t>(j)]) *
                               cell_own[static_cast<std::size_t>(i * paths + j)];
      }
      int slot = 0;
      for (int q2 = 0; q2 < num_users; ++q2) {
        if (q2 == q) continue;
        const auto est =
            other_model[static_cast<std::size_t>(p)][static_cast<std::size_t>(slot++)].draw(rng);
        const auto& cell = rows[static_cast<std::size_t>(p)][static_cast<std::size_t>(q2)];
        const int other_paths = static_cast<int>(est.est.size());
        auto& target_row = cross_rows[static_cast<std::size_t>(q2)];
        for (int i = 0; i < paths; ++i) {
          const cplx truth_i = draw.truth[static_cast<std::size_t>(i)] * phases[static_cast<std::size_t>(i)];
          for (int j = 0; j < other_paths; ++j)
            target_row.noalias() += truth_i * std::conj(est.est[static_cast<std::size_t>(j)]) *
                                    cell[static_cast<std::size_t>(i * other_paths + j)];
        }
      }
    }
    double cross = 0;
    for (int q2 = 0; q2 < num_users; ++q2)
      if (q2 != q) cross += cross_rows[static_cast<std::size_t>(q2)].squaredNorm();
    a_t[static_cast<std::size_t>(t)] = own_row(subcarrier);
    isi_t[static_cast<std::size_t>(t)] = own_row.squaredNorm() - std::norm(own_row(subcarrier));
    cross_t[static_cast<std::size_t>(t)] = cross;
  }

  cplx a_mean = 0;
  for (const auto& a : a_t) a_mean += a;
  a_mean /= static_cast<double>(trials);
  std::vector<double> ds_t(static_cast<std::size_t>(trials));
  std::vector<double> bu_t(static_cast<std::size_t>(trials));
  for (int t = 0; t < trials; ++t) {
    ds_t[static_cast<std::size_t>(t)] = (a_t[static_cast<std::size_t>(t)] * std::conj(mean_dir)).real();
    bu_t[static_cast<std::size_t>(t)] = std::norm(a_t[static_cast<std::size_t>(t)] - a_mean);
  }

  DlComponentSim out;
  out.ds = detail::mean_and_error(ds_t);
  out.beam_split = detail::mean_and_error(bu_t);
  out.leakage = detail::mean_and_error(isi_t);
  out.cross_user = detail::mean_and_error(cross_t);
  out.row = subcarrier;
  out.trials = trials;
  out.warning = detail::trials_warning(trials);
  const double num = power.rho_d * out.ds.value * out.ds.value;
  const double den =
      power.rho_d * (out.beam_split.value + out.leakage.value + out.cross_user.value) + 1.0;
  out.sinr = (num == 0.0) ? 0.0 : std::min(num / den, kSinrCap);
  return out;
}

// ---------------------------------------------------------------------------
// Uplink receiver moments (levels 2 and 4)
// ---------------------------------------------------------------------------

namespace detail {

inline TapBank ofdm_tap_bank(const SEInputs& in) {
  TapBank taps(static_cast<std::size_t>(in.num_aps()));
  for (int p = 0; p < in.num_aps(); ++p) {
    auto& row = taps[static_cast<std::size_t>(p)];
    row.resize(static_cast<std::size_t>(in.num_users()));
    for (int q2 = 0; q2 < in.num_users(); ++q2)
      for (const auto& tap : in.links[static_cast<std::size_t>(p)][static_cast<std::size_t>(q2)].taps)
        row[static_cast<std::size_t>(q2)].push_back(
            materialize_ofdm_freq(ofdm_operator_from_tap(tap, in.dims)));
  }
  return taps;
}

}  // namespace detail

/// Per-AP receiver moments on the subcarrier grid (levels 2 and 3); the
/// returned block dimension is one OFDM symbol (M subcarriers).
inline UplinkMoments estimate_ofdm_uplink_moments(const SEInputs& in, const UlPowerConfig& power,
                                                  CombinerKind kind, int q, int trials, Rng& rng,
                                                  bool include_stacked = false,
                                                  int dense_cap = 1024) {
  detail::validate_se_inputs(in, q);
  return detail::accumulate_uplink_moments(in, power, kind, q, trials, rng, include_stacked,
                                           dense_cap, DDDims{in.dims.M, 1},
                                           detail::ofdm_tap_bank(in));
}

/// Fully centralized MMSE combining (level 4): the CPU stacks every AP's
/// subcarrier channel into one (Ma·M)×M system and designs a single MMSE
/// combiner from the stacked estimates.  Returns level-2-shaped moments, so
/// uplink_se_level2 evaluates the level-4 achievable SE.
inline UplinkMoments estimate_ofdm_level4_moments(const SEInputs& in, const UlPowerConfig& power,
                                                  int q, int trials, Rng& rng,
                                                  int dense_cap = 1024) {
  detail::validate_se_inputs(in, q);
  if (trials < 2)
    throw std::invalid_argument("estimate_ofdm_level4_moments: need at least 2 trials");
  const int num_aps = in.num_aps();
  const int num_users = in.num_users();
  if (static_cast<int>(power.rho_dt.size()) != num_users ||
      static_cast<int>(power.eta.size()) != num_users)
    throw std::invalid_argument("estimate_ofdm_level4_moments: power vectors must match user count");
  const int m_dim = in.dims.M;
  const Eigen::Index stacked = static_cast<Eigen::Index>(num_aps) * m_dim;
  if (num_aps * m_dim > dense_cap)
    throw std::invalid_argument(
        "estimate_ofdm_level4_moments: centralized combining needs num_aps * M <= " +
        std::to_string(dense_cap) + " (got " + std::to_string(num_aps * m_dim) + ")");

  const detail::TapBank taps = detail::ofdm_tap_bank(in);
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
  m.dims = DDDims{m_dim, 1};
  m.num_aps = num_aps;
  m.num_users = num_users;
  m.target = q;
  m.trials = trials;
  m.noise_var = 1.0;
  m.d2 = Eigen::MatrixXcd::Zero(m_dim, m_dim);
  m.s2 = Eigen::MatrixXcd::Zero(m_dim, m_dim);
  m.w2.assign(static_cast<std::size_t>(num_users), Eigen::MatrixXcd::Zero(m_dim, m_dim));

  std::vector<Eigen::MatrixXcd> est(static_cast<std::size_t>(num_users),
                                    Eigen::MatrixXcd(stacked, m_dim)),
      truth(static_cast<std::size_t>(num_users), Eigen::MatrixXcd(stacked, m_dim));
  Eigen::VectorXd err_diag(stacked);

  for (int t = 0; t < trials; ++t) {
    err_diag.setZero();
    for (int p = 0; p < num_aps; ++p) {
      for (int q2 = 0; q2 < num_users; ++q2) {
        const auto draw =
            models[static_cast<std::size_t>(p)][static_cast<std::size_t>(q2)].draw(rng);
        Eigen::MatrixXcd e = Eigen::MatrixXcd::Zero(m_dim, m_dim);
        Eigen::MatrixXcd h = Eigen::MatrixXcd::Zero(m_dim, m_dim);
        const auto& link_taps = taps[static_cast<std::size_t>(p)][static_cast<std::size_t>(q2)];
        for (std::size_t i = 0; i < link_taps.size(); ++i) {
          e.noalias() += draw.est[i] * link_taps[i];
          h.noalias() += draw.truth[i] * link_taps[i];
        }
        const double a = amp[static_cast<std::size_t>(q2)];
        est[static_cast<std::size_t>(q2)].middleRows(static_cast<Eigen::Index>(p) * m_dim, m_dim) =
            a * e;
        truth[static_cast<std::size_t>(q2)].middleRows(static_cast<Eigen::Index>(p) * m_dim, m_dim) =
            a * h;
        double err_sum = 0;
        for (double v : models[static_cast<std::size_t>(p)][static_cast<std::size_t>(q2)].err)
          err_sum += v;
        err_diag.segment(static_cast<Eigen::Index>(p) * m_dim, m_dim).array() += a * a * err_sum;
      }
    }
    Eigen::MatrixXcd gram = (err_diag.array() + m.noise_var).matrix().asDiagonal();
    for (int q2 = 0; q2 < num_users; ++q2)
      gram.noalias() += est[static_cast<std::size_t>(q2)] * est[static_cast<std::size_t>(q2)].adjoint();
    const auto llt = detail::robust_llt(gram, "estimate_ofdm_level4_moments");
    const Eigen::MatrixXcd v = llt.solve(est[static_cast<std::size_t>(q)]);
    m.s2.noalias() += v.adjoint() * v;
    for (int q2 = 0; q2 < num_users; ++q2) {
      const Eigen::MatrixXcd w = v.adjoint() * truth[static_cast<std::size_t>(q2)];
      if (q2 == q) m.d2.noalias() += w;
      m.w2[static_cast<std::size_t>(q2)].noalias() += w * w.adjoint();
    }
  }

  const double inv = 1.0 / trials;
  m.d2 *= inv;
  m.s2 *= inv;
  for (auto& mat : m.w2) mat *= inv;
  return m;
}

inline double ofdm_uplink_se_level4(const SEInputs& in, const UlPowerConfig& power, int q,
                                    int trials, Rng& rng, double omega, int dense_cap = 1024) {
  return uplink_se_level2(estimate_ofdm_level4_moments(in, power, q, trials, rng, dense_cap),
                          omega);
}

}  // namespace otfslink
