#pragma once
// Scenario configuration: a versioned JSON document describing one experiment
// family — system dimensions, network geometry, channel profile, power
// budgets, estimation scheme, and the evaluation to run — plus named variants
// that override parts of the base document while sharing the per-drop random
// draws.  Parsing is strict: unknown keys anywhere are rejected, and every
// cross-field constraint (frame split, guard capacity, pilot cadence
// feasibility, dense-matrix caps) is checked before any computation starts.

#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "otfslink/channel.hpp"
#include "otfslink/estimation.hpp"
#include "otfslink/geometry.hpp"
#include "otfslink/link_sim.hpp"
#include "otfslink/ofdm.hpp"
#include "otfslink/se_closed_form.hpp"

namespace otfslink {

inline constexpr int kScenarioSchemaVersion = 1;

enum class ProfileKind { eva, evb, synthetic };
enum class GammaScheme { ep, sp, bt, fixed };
enum class Modulation { otfs, ofdm };
enum class Direction { downlink, uplink };
enum class Metric { se, mse };

struct SystemSettings {
  double f_c_hz = 4e9;
  double delta_f_hz = 15e3;
  int m_delay = 0;
  int n_doppler = 0;
  int n_dl = 0;
  int n_ul = 0;
  double t_cp_us = -1.0;  // OFDM cyclic prefix; < 0 means "cover the delay spread"

  DDDims dims() const { return DDDims{m_delay, n_doppler}; }
  FramePlan frame() const { return FramePlan{m_delay, n_dl, n_ul}; }
};

struct GeometrySettings {
  double side_m = 1000.0;
  int num_aps = 0;
  int num_users = 0;
  double shadow_std_db = 4.0;
  double decorrelation_m = 9.0;
  BetaMode beta_mode = BetaMode::geometric_full;
};

struct ChannelSettings {
  ProfileKind profile = ProfileKind::eva;
  int num_paths = 2;         // synthetic profile only: delay taps 0 .. L-1
  double speed_kmph = -1.0;  // exactly one of speed / nu_max is given
  double nu_max_hz = -1.0;
  bool fractional_doppler = true;
  DopplerMode doppler_mode = DopplerMode::uniform_index;
};

struct PowerSettings {
  // Either a physical budget (converted through the thermal noise floor) or a
  // direct noise-normalized value; exactly one per direction.
  double p_dl_mw = -1.0;
  double p_ul_mw = -1.0;
  double rho_dl = -1.0;
  double rho_ul = -1.0;
  double noise_figure_db = 9.0;
  double alpha_che = 0.5;           // pilot share of the uplink budget (ep/sp)
  bool dl_inverse_aps_sq = false;   // rho_dl <- rho_dl / num_aps^2
  bool ul_inverse_aps = false;      // rho_ul <- rho_ul / num_aps
};

struct EstimationSettings {
  GammaScheme scheme = GammaScheme::ep;
  int guard_extra = 1;            // extra Doppler guard half-width (fractional spread)
  double fixed_fraction = 0.25;   // fixed scheme: gamma_i = fraction * beta_i
};

struct EvaluationSettings {
  Modulation modulation = Modulation::otfs;
  Direction direction = Direction::downlink;
  Metric metric = Metric::se;
  KappaForm kappa = KappaForm::incoherent;
  int level = 0;  // 0: closed form; 2/3: Monte-Carlo combining; 4: centralized (OFDM)
  CombinerKind combiner = CombinerKind::mr;
  int dense_cap = 1024;
};

struct RunSettings {
  SystemSettings system;
  GeometrySettings geometry;
  ChannelSettings channel;
  PowerSettings power;
  EstimationSettings estimation;
  EvaluationSettings evaluation;
};

struct VariantConfig {
  std::string name;
  RunSettings settings;
};

struct ScenarioConfig {
  int schema = kScenarioSchemaVersion;
  std::string name;
  std::string description;
  std::uint64_t seed = 1;
  int drops = 200;
  int trials = 0;  // Monte-Carlo trials per drop; used only by level >= 2
  std::vector<VariantConfig> variants;
};

// ---------------------------------------------------------------------------
// Derived quantities
// ---------------------------------------------------------------------------

/// Channel profile with the Doppler budget resolved from the scenario: the
/// integer budget is floor(nu_max N / delta_f) on the N-symbol frame.
struct DerivedChannel {
  ChannelProfile profile;
  double nu_max_hz = 0.0;
  int k_max = 0;
  int l_max = 0;
};

inline DerivedChannel derive_channel(const SystemSettings& sys, const ChannelSettings& ch) {
  DerivedChannel d;
  switch (ch.profile) {
    case ProfileKind::eva: d.profile = eva_profile(); break;
    case ProfileKind::evb: d.profile = evb_profile(); break;
    case ProfileKind::synthetic: {
      d.profile.name = "synthetic";
      for (int i = 0; i < ch.num_paths; ++i)
        d.profile.tap_delays_us.push_back(1e6 * i / (sys.m_delay * sys.delta_f_hz));
      d.profile.tau_max_us = d.profile.tap_delays_us.back();
      break;
    }
  }
  if (ch.speed_kmph >= 0.0) {
    const auto [nu, k] =
        doppler_from_speed(ch.speed_kmph, sys.f_c_hz, sys.n_doppler, sys.delta_f_hz);
    d.nu_max_hz = nu;
    d.k_max = k;
  } else {
    d.nu_max_hz = ch.nu_max_hz;
    d.k_max = static_cast<int>(std::floor(ch.nu_max_hz * sys.n_doppler / sys.delta_f_hz));
  }
  d.l_max = quantize_delay(d.profile.tau_max_us, sys.m_delay, sys.delta_f_hz);
  d.profile.k_max = d.k_max;
  d.profile.nu_max_hz = d.nu_max_hz;
  d.profile.doppler_mode = ch.doppler_mode;
  d.profile.frac_doppler = ch.fractional_doppler;
  return d;
}

/// Noise-normalized per-AP downlink budget, after the optional 1/M_a^2 law.
inline double resolved_rho_dl(const RunSettings& rs) {
  double rho = rs.power.rho_dl;
  if (rs.power.p_dl_mw > 0.0)
    rho = rs.power.p_dl_mw * 1e-3 /
          noise_power_watts(rs.system.m_delay, rs.system.delta_f_hz, rs.power.noise_figure_db);
  if (rs.power.dl_inverse_aps_sq)
    rho /= static_cast<double>(rs.geometry.num_aps) * rs.geometry.num_aps;
  return rho;
}

/// Noise-normalized per-user uplink budget, after the optional 1/M_a law.
inline double resolved_rho_ul(const RunSettings& rs) {
  double rho = rs.power.rho_ul;
  if (rs.power.p_ul_mw > 0.0)
    rho = rs.power.p_ul_mw * 1e-3 /
          noise_power_watts(rs.system.m_delay, rs.system.delta_f_hz, rs.power.noise_figure_db);
  if (rs.power.ul_inverse_aps) rho /= static_cast<double>(rs.geometry.num_aps);
  return rho;
}

/// OFDM cyclic-prefix duration: the configured value, or the profile's delay
/// spread when unset.
inline double resolved_t_cp_s(const RunSettings& rs, const ChannelProfile& profile) {
  return (rs.system.t_cp_us >= 0.0 ? rs.system.t_cp_us : profile.tau_max_us) * 1e-6;
}

inline OfdmConfig resolved_ofdm_config(const RunSettings& rs, const DerivedChannel& chan) {
  return OfdmConfig{rs.system.delta_f_hz, resolved_t_cp_s(rs, chan.profile), chan.nu_max_hz};
}

// ---------------------------------------------------------------------------
// JSON parsing (strict)
// ---------------------------------------------------------------------------

namespace detail {

using json = nlohmann::json;

[[noreturn]] inline void scenario_error(const std::string& where, const std::string& what) {
  throw std::invalid_argument("scenario: " + where + ": " + what);
}

inline void expect_object(const json& j, const std::string& where) {
  if (!j.is_object()) scenario_error(where, "expected an object");
}

inline void expect_keys(const json& j, const std::string& where,
                        std::initializer_list<const char*> allowed) {
  expect_object(j, where);
  for (const auto& item : j.items()) {
    bool ok = false;
    for (const char* key : allowed)
      if (item.key() == key) {
        ok = true;
        break;
      }
    if (!ok) scenario_error(where, "unknown key '" + item.key() + "'");
  }
}

template <typename T>
void read_field(const json& j, const std::string& where, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    scenario_error(where, std::string("bad value for '") + key + "'");
  }
}

inline void read_enum(const json& j, const std::string& where, const char* key,
                      std::initializer_list<std::pair<const char*, int>> table, int& out) {
  if (!j.contains(key)) return;
  if (!j.at(key).is_string()) scenario_error(where, std::string("'") + key + "' must be a string");
  const std::string v = j.at(key).get<std::string>();
  for (const auto& [name, value] : table)
    if (v == name) {
      out = value;
      return;
    }
  scenario_error(where, "unknown value '" + v + "' for '" + key + "'");
}

inline void parse_system(const json& j, SystemSettings& s) {
  expect_keys(j, "system",
              {"f_c_hz", "delta_f_hz", "m_delay", "n_doppler", "n_dl", "n_ul", "t_cp_us"});
  read_field(j, "system", "f_c_hz", s.f_c_hz);
  read_field(j, "system", "delta_f_hz", s.delta_f_hz);
  read_field(j, "system", "m_delay", s.m_delay);
  read_field(j, "system", "n_doppler", s.n_doppler);
  read_field(j, "system", "n_dl", s.n_dl);
  read_field(j, "system", "n_ul", s.n_ul);
  read_field(j, "system", "t_cp_us", s.t_cp_us);
}

inline void parse_geometry(const json& j, GeometrySettings& g) {
  expect_keys(j, "geometry",
              {"side_m", "num_aps", "num_users", "shadow_std_db", "decorrelation_m", "beta_mode"});
  read_field(j, "geometry", "side_m", g.side_m);
  read_field(j, "geometry", "num_aps", g.num_aps);
  read_field(j, "geometry", "num_users", g.num_users);
  read_field(j, "geometry", "shadow_std_db", g.shadow_std_db);
  read_field(j, "geometry", "decorrelation_m", g.decorrelation_m);
  int mode = static_cast<int>(g.beta_mode);
  read_enum(j, "geometry", "beta_mode",
            {{"geometric", 0}, {"geometric_full", 1}, {"uniform_inverse_paths", 2}, {"unit", 3}},
            mode);
  g.beta_mode = static_cast<BetaMode>(mode);
}

inline void parse_channel(const json& j, ChannelSettings& c) {
  expect_keys(j, "channel",
              {"profile", "num_paths", "speed_kmph", "nu_max_hz", "fractional_doppler",
               "doppler_mode"});
  int prof = static_cast<int>(c.profile);
  read_enum(j, "channel", "profile", {{"eva", 0}, {"evb", 1}, {"synthetic", 2}}, prof);
  c.profile = static_cast<ProfileKind>(prof);
  read_field(j, "channel", "num_paths", c.num_paths);
  read_field(j, "channel", "speed_kmph", c.speed_kmph);
  read_field(j, "channel", "nu_max_hz", c.nu_max_hz);
  read_field(j, "channel", "fractional_doppler", c.fractional_doppler);
  int mode = static_cast<int>(c.doppler_mode);
  read_enum(j, "channel", "doppler_mode", {{"uniform", 0}, {"jakes", 1}}, mode);
  c.doppler_mode = static_cast<DopplerMode>(mode);
}

inline void parse_power(const json& j, PowerSettings& p) {
  expect_keys(j, "power",
              {"p_dl_mw", "p_ul_mw", "rho_dl", "rho_ul", "noise_figure_db", "alpha_che",
               "dl_inverse_aps_sq", "ul_inverse_aps"});
  read_field(j, "power", "p_dl_mw", p.p_dl_mw);
  read_field(j, "power", "p_ul_mw", p.p_ul_mw);
  read_field(j, "power", "rho_dl", p.rho_dl);
  read_field(j, "power", "rho_ul", p.rho_ul);
  read_field(j, "power", "noise_figure_db", p.noise_figure_db);
  read_field(j, "power", "alpha_che", p.alpha_che);
  read_field(j, "power", "dl_inverse_aps_sq", p.dl_inverse_aps_sq);
  read_field(j, "power", "ul_inverse_aps", p.ul_inverse_aps);
}

inline void parse_estimation(const json& j, EstimationSettings& e) {
  expect_keys(j, "estimation", {"scheme", "guard_extra", "fixed_fraction"});
  int scheme = static_cast<int>(e.scheme);
  read_enum(j, "estimation", "scheme", {{"ep", 0}, {"sp", 1}, {"bt", 2}, {"fixed", 3}}, scheme);
  e.scheme = static_cast<GammaScheme>(scheme);
  read_field(j, "estimation", "guard_extra", e.guard_extra);
  read_field(j, "estimation", "fixed_fraction", e.fixed_fraction);
}

inline void parse_evaluation(const json& j, EvaluationSettings& e) {
  expect_keys(j, "evaluation",
              {"modulation", "direction", "metric", "kappa", "level", "combiner", "dense_cap"});
  int v = static_cast<int>(e.modulation);
  read_enum(j, "evaluation", "modulation", {{"otfs", 0}, {"ofdm", 1}}, v);
  e.modulation = static_cast<Modulation>(v);
  v = static_cast<int>(e.direction);
  read_enum(j, "evaluation", "direction", {{"downlink", 0}, {"uplink", 1}}, v);
  e.direction = static_cast<Direction>(v);
  v = static_cast<int>(e.metric);
  read_enum(j, "evaluation", "metric", {{"se", 0}, {"mse", 1}}, v);
  e.metric = static_cast<Metric>(v);
  v = static_cast<int>(e.kappa);
  read_enum(j, "evaluation", "kappa", {{"coherent", 0}, {"incoherent", 1}}, v);
  e.kappa = static_cast<KappaForm>(v);
  read_field(j, "evaluation", "level", e.level);
  v = static_cast<int>(e.combiner);
  read_enum(j, "evaluation", "combiner", {{"mr", 0}, {"lmmse", 1}}, v);
  e.combiner = static_cast<CombinerKind>(v);
  read_field(j, "evaluation", "dense_cap", e.dense_cap);
}

inline void parse_settings(const json& j, const std::string& where, RunSettings& rs) {
  expect_keys(j, where, {"system", "geometry", "channel", "power", "estimation", "evaluation"});
  if (j.contains("system")) parse_system(j.at("system"), rs.system);
  if (j.contains("geometry")) parse_geometry(j.at("geometry"), rs.geometry);
  if (j.contains("channel")) parse_channel(j.at("channel"), rs.channel);
  if (j.contains("power")) parse_power(j.at("power"), rs.power);
  if (j.contains("estimation")) parse_estimation(j.at("estimation"), rs.estimation);
  if (j.contains("evaluation")) parse_evaluation(j.at("evaluation"), rs.evaluation);
}

/// Recursive object merge: objects merge key-wise, every other value type
/// replaces the base value.
inline json deep_merge(json base, const json& overlay) {
  if (!base.is_object() || !overlay.is_object()) return overlay;
  for (const auto& item : overlay.items()) {
    if (base.contains(item.key()))
      base[item.key()] = deep_merge(base.at(item.key()), item.value());
    else
      base[item.key()] = item.value();
  }
  return base;
}

}  // namespace detail

inline ScenarioConfig parse_scenario(const std::string& text) {
  using detail::json;
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    detail::scenario_error("document", std::string("JSON parse failure: ") + e.what());
  }
  detail::expect_keys(j, "document",
                      {"schema", "name", "description", "seed", "drops", "trials", "system",
                       "geometry", "channel", "power", "estimation", "evaluation", "variants"});

  ScenarioConfig cfg;
  cfg.schema = -1;
  detail::read_field(j, "document", "schema", cfg.schema);
  if (cfg.schema != kScenarioSchemaVersion)
    detail::scenario_error("document", "unsupported schema version (expected " +
                                           std::to_string(kScenarioSchemaVersion) + ")");
  detail::read_field(j, "document", "name", cfg.name);
  if (cfg.name.empty()) detail::scenario_error("document", "missing scenario name");
  detail::read_field(j, "document", "description", cfg.description);
  detail::read_field(j, "document", "seed", cfg.seed);
  detail::read_field(j, "document", "drops", cfg.drops);
  detail::read_field(j, "document", "trials", cfg.trials);

  detail::json base = detail::json::object();
  for (const char* key : {"system", "geometry", "channel", "power", "estimation", "evaluation"})
    if (j.contains(key)) base[key] = j.at(key);

  if (!j.contains("variants")) {
    RunSettings rs;
    detail::parse_settings(base, "document", rs);
    cfg.variants.push_back(VariantConfig{"base", rs});
    return cfg;
  }

  const auto& variants = j.at("variants");
  if (!variants.is_array() || variants.empty())
    detail::scenario_error("variants", "expected a non-empty array");
  for (const auto& vj : variants) {
    detail::expect_keys(vj, "variant",
                        {"name", "system", "geometry", "channel", "power", "estimation",
                         "evaluation"});
    VariantConfig vc;
    detail::read_field(vj, "variant", "name", vc.name);
    if (vc.name.empty()) detail::scenario_error("variant", "missing variant name");
    for (const auto& other : cfg.variants)
      if (other.name == vc.name)
        detail::scenario_error("variant", "duplicate variant name '" + vc.name + "'");
    detail::json merged = base;
    for (const char* key : {"system", "geometry", "channel", "power", "estimation", "evaluation"})
      if (vj.contains(key))
        merged[key] = merged.contains(key) ? detail::deep_merge(merged.at(key), vj.at(key))
                                           : vj.at(key);
    detail::parse_settings(merged, "variant '" + vc.name + "'", vc.settings);
    cfg.variants.push_back(std::move(vc));
  }
  return cfg;
}

inline ScenarioConfig load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("scenario: cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_scenario(buf.str());
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

namespace detail {

inline void validate_settings(const RunSettings& rs, int trials, const std::string& where) {
  const auto& sys = rs.system;
  if (sys.f_c_hz <= 0.0 || sys.delta_f_hz <= 0.0)
    scenario_error(where, "carrier and subcarrier spacing must be positive");
  if (sys.m_delay < 1 || sys.n_doppler < 1)
    scenario_error(where, "frame dimensions must be positive");
  if (sys.n_dl < 0 || sys.n_ul < 0 || sys.n_dl + sys.n_ul != sys.n_doppler)
    scenario_error(where, "frame split must satisfy n_dl + n_ul = n_doppler");

  const auto& g = rs.geometry;
  if (g.num_aps < 1 || g.num_users < 1) scenario_error(where, "need at least one AP and user");
  if (g.side_m <= 0.0 || g.decorrelation_m <= 0.0 || g.shadow_std_db < 0.0)
    scenario_error(where, "invalid geometry parameters");

  const auto& ch = rs.channel;
  if ((ch.speed_kmph >= 0.0) == (ch.nu_max_hz >= 0.0))
    scenario_error(where, "give exactly one of channel.speed_kmph / channel.nu_max_hz");
  if (ch.profile == ProfileKind::synthetic && (ch.num_paths < 1 || ch.num_paths > sys.m_delay))
    scenario_error(where, "synthetic profile needs 1 <= num_paths <= m_delay");

  DerivedChannel chan;
  try {
    chan = derive_channel(sys, ch);
  } catch (const std::exception& e) {
    scenario_error(where, e.what());
  }
  if (chan.l_max >= sys.m_delay)
    scenario_error(where, "profile delay spread does not fit the frame (l_max >= m_delay)");

  const auto& pw = rs.power;
  if ((pw.p_dl_mw > 0.0) == (pw.rho_dl >= 0.0))
    scenario_error(where, "give exactly one of power.p_dl_mw / power.rho_dl");
  if ((pw.p_ul_mw > 0.0) == (pw.rho_ul >= 0.0))
    scenario_error(where, "give exactly one of power.p_ul_mw / power.rho_ul");

  const auto& est = rs.estimation;
  const auto& ev = rs.evaluation;
  if (est.scheme == GammaScheme::ep || est.scheme == GammaScheme::sp) {
    if (!(pw.alpha_che > 0.0 && pw.alpha_che < 1.0))
      scenario_error(where, "power.alpha_che must lie in (0, 1) for pilot-splitting schemes");
  }
  if (est.guard_extra < 0) scenario_error(where, "estimation.guard_extra must be >= 0");
  if (est.scheme == GammaScheme::fixed &&
      !(est.fixed_fraction >= 0.0 && est.fixed_fraction <= 1.0))
    scenario_error(where, "estimation.fixed_fraction must lie in [0, 1]");
  if (est.scheme == GammaScheme::ep && ev.modulation != Modulation::otfs)
    scenario_error(where, "embedded pilots are delay-Doppler native; use bt or sp with ofdm");
  if (est.scheme == GammaScheme::bt && ev.modulation != Modulation::ofdm)
    scenario_error(where, "block-type pilots are per-symbol; use ep or sp with otfs");

  if (est.scheme == GammaScheme::ep) {
    if (4 * chan.k_max + 4 * est.guard_extra + 1 > sys.n_doppler)
      scenario_error(where,
                     "embedded-pilot Doppler guard (4 k_max + 4 guard_extra + 1) exceeds "
                     "n_doppler");
    if (2 * chan.l_max + 1 > sys.m_delay)
      scenario_error(where, "embedded-pilot delay guard (2 l_max + 1) exceeds m_delay");
    const EpConfig ep{chan.k_max, chan.l_max, est.guard_extra, 0.0, 0.0};
    const int capacity = ep_user_capacity(sys.dims(), ep.n_guard());
    if (capacity < g.num_users)
      scenario_error(where, "embedded-pilot guard regions fit only " + std::to_string(capacity) +
                                " users (need " + std::to_string(g.num_users) + ")");
  }
  if (ev.modulation == Modulation::ofdm && est.scheme == GammaScheme::bt) {
    try {
      ofdm_pilot_time_interval(resolved_ofdm_config(rs, chan));
    } catch (const std::exception& e) {
      scenario_error(where, e.what());
    }
  }

  if (ev.metric == Metric::se) {
    if (ev.level != 0 && ev.level != 2 && ev.level != 3 && ev.level != 4)
      scenario_error(where, "evaluation.level must be one of 0, 2, 3, 4");
    if (ev.level >= 2) {
      if (ev.direction != Direction::uplink)
        scenario_error(where, "Monte-Carlo combining levels apply to the uplink only");
      if (trials < 2) scenario_error(where, "level >= 2 needs trials >= 2");
      if (ev.level == 4 && ev.modulation != Modulation::ofdm)
        scenario_error(where, "level 4 (fully centralized MMSE) is sized for ofdm only");
      const int block =
          ev.modulation == Modulation::otfs ? sys.dims().size() : sys.m_delay;
      if (block > ev.dense_cap)
        scenario_error(where, "dense block size " + std::to_string(block) +
                                  " exceeds evaluation.dense_cap");
      if (ev.level >= 3 && g.num_aps * block > ev.dense_cap)
        scenario_error(where, "stacked size num_aps * block = " +
                                  std::to_string(g.num_aps * block) +
                                  " exceeds evaluation.dense_cap");
    }
  }
}

}  // namespace detail

/// Full pre-execution validation of every variant; throws std::invalid_argument
/// with the offending variant named.
inline void validate_scenario(const ScenarioConfig& cfg) {
  if (cfg.drops < 1) detail::scenario_error("document", "drops must be >= 1");
  if (cfg.trials < 0) detail::scenario_error("document", "trials must be >= 0");
  if (cfg.variants.empty()) detail::scenario_error("document", "no variants");
  for (const auto& v : cfg.variants)
    detail::validate_settings(v.settings, cfg.trials, "variant '" + v.name + "'");
}

}  // namespace otfslink
