#pragma once
// Experiment driver: turns a validated scenario into per-(drop, user) metric
// values and summary statistics.  Every random quantity is drawn from a
// substream derived from (scenario seed, drop index, purpose), so results are
// bit-identical across runs and across worker counts, and variants that share
// geometry/channel sections see the same network drops.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "otfslink/scenario.hpp"

namespace otfslink {

// ---------------------------------------------------------------------------
// Aggregate statistics
// ---------------------------------------------------------------------------

struct Aggregates {
  int count = 0;        // number of (drop, user) samples
  double mean = 0.0;    // grand mean over all samples
  double std_error = 0.0;  // sample std over samples / sqrt(count)
  double sum_mean = 0.0;   // mean over drops of the per-drop sum over users
  double likely95 = 0.0;   // 5th percentile: the value 95% of users beat
  double median = 0.0;
  double min = 0.0;
  double max = 0.0;
};

inline Aggregates aggregate(const std::vector<std::vector<double>>& values) {
  Aggregates a;
  std::vector<double> flat;
  for (const auto& drop : values) {
    double drop_sum = 0.0;
    for (double v : drop) {
      flat.push_back(v);
      drop_sum += v;
    }
    a.sum_mean += drop_sum;
  }
  a.count = static_cast<int>(flat.size());
  if (a.count == 0) return a;
  a.sum_mean /= static_cast<double>(values.size());
  for (double v : flat) a.mean += v;
  a.mean /= a.count;
  double var = 0.0;
  for (double v : flat) var += (v - a.mean) * (v - a.mean);
  if (a.count > 1) a.std_error = std::sqrt(var / (a.count - 1)) / std::sqrt(double(a.count));
  std::sort(flat.begin(), flat.end());
  a.likely95 = quantile_sorted(flat, 0.05);
  a.median = quantile_sorted(flat, 0.5);
  a.min = flat.front();
  a.max = flat.back();
  return a;
}

struct VariantResult {
  std::string name;
  std::vector<std::vector<double>> values;  // [drop][user]
  Aggregates agg;
};

struct SEReport {
  std::string scenario;
  std::uint64_t seed = 0;
  int drops = 0;
  int trials = 0;
  std::vector<VariantResult> variants;
};

// ---------------------------------------------------------------------------
// One network drop
// ---------------------------------------------------------------------------

namespace detail {

// Purpose indices of the per-drop substreams.  Monte-Carlo streams start at
// kMcStreamBase + variant index so every variant owns an independent stream
// while topology/shadowing/path draws stay shared.
inline constexpr std::uint64_t kStreamTopology = 0;
inline constexpr std::uint64_t kStreamShadowing = 1;
inline constexpr std::uint64_t kStreamPaths = 2;
inline constexpr std::uint64_t kMcStreamBase = 16;

struct DropPowers {
  double rho_dl = 0.0;
  double pilot = 0.0;  // uplink pilot share
  double data = 0.0;   // uplink data share
};

inline DropPowers resolve_powers(const RunSettings& rs) {
  DropPowers p;
  p.rho_dl = resolved_rho_dl(rs);
  const double rho_ul = resolved_rho_ul(rs);
  const auto scheme = rs.estimation.scheme;
  if (scheme == GammaScheme::ep || scheme == GammaScheme::sp) {
    const auto [pilot, data] = ep_power_split(rho_ul, rs.power.alpha_che);
    p.pilot = pilot;
    p.data = data;
  } else {
    // Time-multiplexed (bt) or fixed-quality schemes: pilot symbols carry the
    // full per-symbol budget and data symbols do too.
    p.pilot = rho_ul;
    p.data = rho_ul;
  }
  return p;
}

/// Per-(AP, user) estimate variances under the configured scheme.
inline void fill_gammas(SEInputs& in, const LargeScaleFading& fading, const RunSettings& rs,
                        const DerivedChannel& chan, const DropPowers& pw) {
  const int num_aps = in.num_aps();
  const int num_users = in.num_users();
  switch (rs.estimation.scheme) {
    case GammaScheme::ep: {
      const EpConfig ep{chan.k_max, chan.l_max, rs.estimation.guard_extra, pw.pilot, pw.data};
      for (int p = 0; p < num_aps; ++p) {
        for (int q = 0; q < num_users; ++q) {
          std::vector<UserLink> others;
          for (int q2 = 0; q2 < num_users; ++q2)
            if (q2 != q)
              others.push_back(UserLink{1.0, pw.data, pw.pilot, fading.pair_total(p, q2)});
          const double i2 = ep_interference_i2_var(others, in.dims);
          in.links[p][q].gamma = ep_mmse_coeff(ep, fading.beta[p][q], 1.0, i2, in.dims).gamma;
        }
      }
      break;
    }
    case GammaScheme::sp:
    case GammaScheme::bt: {
      for (int p = 0; p < num_aps; ++p) {
        std::vector<UserLink> users;
        for (int q2 = 0; q2 < num_users; ++q2)
          users.push_back(UserLink{1.0, pw.data, pw.pilot, fading.pair_total(p, q2)});
        for (int q = 0; q < num_users; ++q)
          in.links[p][q].gamma = rs.estimation.scheme == GammaScheme::sp
                                     ? sp_gamma_closed_form(fading.beta[p][q], users, q)
                                     : bt_gamma_closed_form(fading.beta[p][q], users, q);
      }
      break;
    }
    case GammaScheme::fixed: {
      for (int p = 0; p < num_aps; ++p)
        for (int q = 0; q < num_users; ++q) {
          auto& link = in.links[p][q];
          link.gamma.clear();
          for (const auto& tap : link.taps)
            link.gamma.push_back(rs.estimation.fixed_fraction * tap.beta);
        }
      break;
    }
  }
}

inline OverheadFactors resolve_overheads(const RunSettings& rs, const DerivedChannel& chan) {
  const FramePlan frame = rs.system.frame();
  if (rs.evaluation.modulation == Modulation::otfs) {
    if (rs.estimation.scheme == GammaScheme::ep) {
      const EpConfig ep{chan.k_max, chan.l_max, rs.estimation.guard_extra, 0.0, 0.0};
      return overhead_factors(frame, EstimationScheme::embedded_pilot, ep.n_guard());
    }
    return overhead_factors(frame, EstimationScheme::superimposed_pilot, 0);
  }
  return ofdm_overhead_factors(resolved_ofdm_config(rs, chan), frame,
                               rs.estimation.scheme == GammaScheme::bt);
}

}  // namespace detail

/// Evaluate one variant on one network drop; returns the per-user metric.
/// `mc_stream` selects the Monte-Carlo substream (levels >= 2), letting each
/// variant own an independent stream on the shared drop.
inline std::vector<double> run_drop(const RunSettings& rs, int trials, std::uint64_t drop_seed,
                                    std::uint64_t mc_stream) {
  const DerivedChannel chan = derive_channel(rs.system, rs.channel);
  const int num_aps = rs.geometry.num_aps;
  const int num_users = rs.geometry.num_users;
  const int num_paths = chan.profile.paths();

  Rng rng_topo = Rng::substream(drop_seed, detail::kStreamTopology);
  Rng rng_shadow = Rng::substream(drop_seed, detail::kStreamShadowing);
  Rng rng_paths = Rng::substream(drop_seed, detail::kStreamPaths);

  const Topology topo = sample_topology(num_aps, num_users, rs.geometry.side_m, rng_topo);
  const bool shadowed = rs.geometry.beta_mode == BetaMode::geometric ||
                        rs.geometry.beta_mode == BetaMode::geometric_full;
  const Eigen::MatrixXd shadow =
      shadowed ? sample_shadowing(topo, rs.geometry.shadow_std_db, rs.geometry.decorrelation_m,
                                  rng_shadow)
               : Eigen::MatrixXd::Zero(num_aps, num_users);
  const LargeScaleFading fading = assemble_beta(topo, num_paths, shadow, rs.geometry.beta_mode);

  SEInputs in;
  in.dims = rs.system.dims();
  in.links.assign(num_aps, std::vector<LinkSEInput>(num_users));
  for (int p = 0; p < num_aps; ++p)
    for (int q = 0; q < num_users; ++q)
      in.links[p][q].taps =
          sample_paths(chan.profile, in.dims, rs.system.delta_f_hz, fading.beta[p][q], rng_paths);

  const detail::DropPowers pw = detail::resolve_powers(rs);
  detail::fill_gammas(in, fading, rs, chan, pw);

  std::vector<double> out(num_users, 0.0);
  if (rs.evaluation.metric == Metric::mse) {
    for (int q = 0; q < num_users; ++q) {
      double acc = 0.0;
      for (int p = 0; p < num_aps; ++p)
        acc += mse_closed_form(fading.beta[p][q], in.links[p][q].gamma);
      out[q] = acc / num_aps;
    }
    return out;
  }

  const OverheadFactors w = detail::resolve_overheads(rs, chan);
  const auto& ev = rs.evaluation;
  if (ev.direction == Direction::downlink) {
    const DlPowerConfig dl{pw.rho_dl, dl_power_control_full(in)};
    for (int q = 0; q < num_users; ++q)
      out[q] = ev.modulation == Modulation::otfs ? downlink_se(in, dl, q, w.dl, ev.kappa)
                                                 : ofdm_downlink_se(in, dl, q, w.dl, ev.kappa);
    return out;
  }

  const UlPowerConfig ul{std::vector<double>(num_users, pw.data),
                         std::vector<double>(num_users, 1.0)};
  if (ev.level == 0) {
    for (int q = 0; q < num_users; ++q)
      out[q] = ev.modulation == Modulation::otfs ? uplink_se(in, ul, q, w.ul, ev.kappa)
                                                 : ofdm_uplink_se(in, ul, q, w.ul, ev.kappa);
    return out;
  }

  Rng mc_rng = Rng::substream(drop_seed, mc_stream);
  for (int q = 0; q < num_users; ++q) {
    if (ev.modulation == Modulation::otfs) {
      const UplinkMoments m = estimate_uplink_moments(in, ul, ev.combiner, q, trials, mc_rng,
                                                      /*include_stacked=*/ev.level == 3,
                                                      ev.dense_cap);
      out[q] = ev.level == 3 ? uplink_se_level3(m, w.ul) : uplink_se_level2(m, w.ul);
    } else if (ev.level == 4) {
      out[q] = ofdm_uplink_se_level4(in, ul, q, trials, mc_rng, w.ul, ev.dense_cap);
    } else {
      const UplinkMoments m = estimate_ofdm_uplink_moments(in, ul, ev.combiner, q, trials, mc_rng,
                                                           /*include_stacked=*/ev.level == 3,
                                                           ev.dense_cap);
      out[q] = ev.level == 3 ? uplink_se_level3(m, w.ul) : uplink_se_level2(m, w.ul);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Scenario execution
// ---------------------------------------------------------------------------

/// Run every variant over every drop.  Drops are distributed over `workers`
/// threads; each (variant, drop) cell writes its preallocated slot, so the
/// report is identical for any worker count.
inline SEReport run_scenario(const ScenarioConfig& cfg, int workers = 1) {
  validate_scenario(cfg);
  if (workers < 1) throw std::invalid_argument("run_scenario: workers must be >= 1");

  SEReport rep;
  rep.scenario = cfg.name;
  rep.seed = cfg.seed;
  rep.drops = cfg.drops;
  rep.trials = cfg.trials;
  rep.variants.resize(cfg.variants.size());
  for (std::size_t vi = 0; vi < cfg.variants.size(); ++vi) {
    rep.variants[vi].name = cfg.variants[vi].name;
    rep.variants[vi].values.assign(cfg.drops, {});
  }

  std::atomic<int> next_drop{0};
  std::vector<std::exception_ptr> errors(std::min(workers, cfg.drops));
  auto worker = [&](int wi) {
    try {
      for (;;) {
        const int d = next_drop.fetch_add(1);
        if (d >= cfg.drops) break;
        const std::uint64_t drop_seed = derive_stream(cfg.seed, static_cast<std::uint64_t>(d));
        for (std::size_t vi = 0; vi < cfg.variants.size(); ++vi)
          rep.variants[vi].values[d] = run_drop(cfg.variants[vi].settings, cfg.trials, drop_seed,
                                                detail::kMcStreamBase + vi);
      }
    } catch (...) {
      errors[wi] = std::current_exception();
    }
  };

  const int nthreads = std::min(workers, cfg.drops);
  if (nthreads <= 1) {
    worker(0);
  } else {
    std::vector<std::thread> pool;
    pool.reserve(nthreads);
    for (int wi = 0; wi < nthreads; ++wi) pool.emplace_back(worker, wi);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  for (auto& v : rep.variants) v.agg = aggregate(v.values);
  return rep;
}

// ---------------------------------------------------------------------------
// Report comparison
// ---------------------------------------------------------------------------

struct GainRow {
  std::string variant_a;
  std::string variant_b;
  std::string stat;
  double a = 0.0;
  double b = 0.0;
  double ratio = 0.0;
};

/// Pair the reports' variants positionally and compute per-statistic gains
/// a/b.  Requires matched drop counts so the comparison is drop-for-drop.
inline std::vector<GainRow> compare_reports(const SEReport& a, const SEReport& b) {
  if (a.drops != b.drops)
    throw std::invalid_argument("compare_reports: reports have different drop counts");
  if (a.variants.size() != b.variants.size())
    throw std::invalid_argument("compare_reports: reports have different variant counts");
  std::vector<GainRow> rows;
  for (std::size_t vi = 0; vi < a.variants.size(); ++vi) {
    const Aggregates& aa = a.variants[vi].agg;
    const Aggregates& ab = b.variants[vi].agg;
    const auto push = [&](const char* stat, double va, double vb) {
      GainRow r;
      r.variant_a = a.variants[vi].name;
      r.variant_b = b.variants[vi].name;
      r.stat = stat;
      r.a = va;
      r.b = vb;
      r.ratio = vb != 0.0 ? va / vb : std::numeric_limits<double>::quiet_NaN();
      rows.push_back(std::move(r));
    };
    push("mean", aa.mean, ab.mean);
    push("likely95", aa.likely95, ab.likely95);
    push("median", aa.median, ab.median);
    push("sum_mean", aa.sum_mean, ab.sum_mean);
  }
  return rows;
}

}  // namespace otfslink
