#pragma once
// Network geometry and large-scale fading.
//
// Access points and users are dropped uniformly at random on a square whose
// edges wrap around (a torus), so no node sits near an artificial boundary.
// Distances are therefore the minimum over the 3x3 grid of shifted images.
//
// Large-scale fading per AP-user pair combines
//   * a log-distance path loss,  PL(d) = -30.5 - 36.7*log10(d / 1 m)  [dB],
//     with d clamped below at 1 m (far-field model), and
//   * spatially correlated log-normal shadowing: for a fixed AP the per-user
//     shadowing vector is zero-mean Gaussian with covariance
//        cov(F_q, F_q') = std_db^2 * 2^(-delta_qq' / decorrelation)
//     where delta_qq' is the user-user torus distance; shadowing is
//     independent across APs.
// The pair gain is split across that pair's propagation paths either by a
// relative power profile (default: uniform 1/L) or forced to the analytical
// benchmark values 1/L or 1.

#include <array>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "otfslink/common.hpp"

namespace otfslink {

struct Topology {
  std::vector<std::array<double, 2>> ap_positions;
  std::vector<std::array<double, 2>> user_positions;
  double side = 1000.0;  // meters

  int num_aps() const { return static_cast<int>(ap_positions.size()); }
  int num_users() const { return static_cast<int>(user_positions.size()); }
};

/// Shortest distance between two points on the wrap-around square: minimum
/// over the 3x3 shifted images (never exceeds side*sqrt(2)/2).
inline double torus_distance(const std::array<double, 2>& a,
                             const std::array<double, 2>& b, double side) {
  double best = std::numeric_limits<double>::infinity();
  for (int ix = -1; ix <= 1; ++ix) {
    for (int iy = -1; iy <= 1; ++iy) {
      const double dx = a[0] - b[0] + ix * side;
      const double dy = a[1] - b[1] + iy * side;
      best = std::min(best, std::hypot(dx, dy));
    }
  }
  return best;
}

/// Uniform independent placement of APs and users on the wrap-around square.
inline Topology sample_topology(int num_aps, int num_users, double side, Rng& rng) {
  if (num_aps < 1 || num_users < 1 || side <= 0.0)
    throw std::invalid_argument("sample_topology: need num_aps >= 1, num_users >= 1, side > 0");
  Topology topo;
  topo.side = side;
  topo.ap_positions.reserve(num_aps);
  topo.user_positions.reserve(num_users);
  for (int p = 0; p < num_aps; ++p)
    topo.ap_positions.push_back({rng.uniform(0.0, side), rng.uniform(0.0, side)});
  for (int q = 0; q < num_users; ++q)
    topo.user_positions.push_back({rng.uniform(0.0, side), rng.uniform(0.0, side)});
  return topo;
}

/// Log-distance path loss in dB; distances below 1 m are clamped to 1 m.
inline double path_loss_db(double distance_m) {
  const double d = std::max(distance_m, 1.0);
  return -30.5 - 36.7 * std::log10(d);
}

/// Correlated log-normal shadowing, one dB value per (AP, user) pair.
///
/// For each AP the row of user shadowing terms is drawn jointly Gaussian with
/// covariance std_db^2 * 2^(-delta_qq'/decorrelation_m); rows are independent
/// across APs.  The covariance is factored with a Cholesky decomposition; if
/// the factorization fails numerically, a 1e-9 diagonal jitter is applied once
/// before giving up.
inline Eigen::MatrixXd sample_shadowing(const Topology& topo, double std_db,
                                        double decorrelation_m, Rng& rng) {
  const int num_aps = topo.num_aps();
  const int num_users = topo.num_users();
  Eigen::MatrixXd cov(num_users, num_users);
  for (int q = 0; q < num_users; ++q) {
    for (int r = 0; r < num_users; ++r) {
      const double delta = torus_distance(topo.user_positions[q], topo.user_positions[r], topo.side);
      cov(q, r) = std_db * std_db * std::pow(2.0, -delta / decorrelation_m);
    }
  }
  cov = 0.5 * (cov + cov.transpose().eval());  // enforce exact symmetry
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success) {
    cov.diagonal().array() += 1e-9;
    llt.compute(cov);
    if (llt.info() != Eigen::Success)
      throw std::runtime_error("sample_shadowing: shadowing covariance is not positive semidefinite");
  }
  const Eigen::MatrixXd chol = llt.matrixL();
  Eigen::MatrixXd shadow_db(num_aps, num_users);
  Eigen::VectorXd z(num_users);
  for (int p = 0; p < num_aps; ++p) {
    for (int q = 0; q < num_users; ++q) z(q) = rng.gaussian();
    shadow_db.row(p) = (chol * z).transpose();
  }
  return shadow_db;
}

/// How the per-pair large-scale gain maps onto per-path variances.
enum class BetaMode {
  geometric,             // beta_pqi = 10^((PL_pq + F_pq)/10) * w_i (w_i = 1/L default)
  geometric_full,        // beta_pqi = 10^((PL_pq + F_pq)/10) for every tap
  uniform_inverse_paths, // beta_pqi = 1/L   (analytical benchmark)
  unit,                  // beta_pqi = 1     (scaling-law benchmark)
};

struct LargeScaleFading {
  // beta[p][q][i]: per-path large-scale coefficient, linear scale.
  std::vector<std::vector<std::vector<double>>> beta;
  Eigen::MatrixXd shadow_db;  // (num_aps x num_users), dB

  int num_aps() const { return static_cast<int>(beta.size()); }
  int num_users() const { return beta.empty() ? 0 : static_cast<int>(beta[0].size()); }

  double pair_total(int p, int q) const {
    double s = 0.0;
    for (double b : beta[p][q]) s += b;
    return s;
  }
};

/// Combine path loss + shadowing into per-path variances.
///
/// `relative_powers` (optional, length num_paths) gives the per-path power
/// split in geometric mode; it is normalized to sum to one.  Empty means a
/// uniform 1/L split.
inline LargeScaleFading assemble_beta(const Topology& topo, int num_paths,
                                      const Eigen::MatrixXd& shadow_db,
                                      BetaMode mode = BetaMode::geometric,
                                      const std::vector<double>& relative_powers = {}) {
  if (num_paths < 1) throw std::invalid_argument("assemble_beta: num_paths must be >= 1");
  std::vector<double> weights(num_paths, 1.0 / num_paths);
  if (!relative_powers.empty()) {
    if (static_cast<int>(relative_powers.size()) != num_paths)
      throw std::invalid_argument("assemble_beta: relative_powers length must equal num_paths");
    double total = 0.0;
    for (double w : relative_powers) {
      if (w <= 0.0) throw std::invalid_argument("assemble_beta: relative powers must be positive");
      total += w;
    }
    for (int i = 0; i < num_paths; ++i) weights[i] = relative_powers[i] / total;
  }
  const int num_aps = topo.num_aps();
  const int num_users = topo.num_users();
  if ((mode == BetaMode::geometric || mode == BetaMode::geometric_full) &&
      (shadow_db.rows() != num_aps || shadow_db.cols() != num_users))
    throw std::invalid_argument("assemble_beta: shadow matrix shape mismatch");

  LargeScaleFading fading;
  fading.shadow_db = shadow_db;
  fading.beta.assign(num_aps, std::vector<std::vector<double>>(
                                  num_users, std::vector<double>(num_paths, 0.0)));
  for (int p = 0; p < num_aps; ++p) {
    for (int q = 0; q < num_users; ++q) {
      for (int i = 0; i < num_paths; ++i) {
        switch (mode) {
          case BetaMode::geometric:
          case BetaMode::geometric_full: {
            const double d = torus_distance(topo.ap_positions[p], topo.user_positions[q], topo.side);
            const double gain_db = path_loss_db(d) + shadow_db(p, q);
            // Full mode: every tap carries the whole pair coefficient, so a
            // longer power-delay profile collects more total energy.
            fading.beta[p][q][i] =
                db_to_linear(gain_db) * (mode == BetaMode::geometric ? weights[i] : 1.0);
            break;
          }
          case BetaMode::uniform_inverse_paths:
            fading.beta[p][q][i] = 1.0 / num_paths;
            break;
          case BetaMode::unit:
            fading.beta[p][q][i] = 1.0;
            break;
        }
      }
    }
  }
  return fading;
}

/// Plain-text topology table: "side <s>" line, then one "ap x y" or
/// "user x y" row per node.  Round-trips through parse_topology.
inline std::string export_topology(const Topology& topo) {
  std::ostringstream os;
  os.precision(17);
  os << "side " << topo.side << "\n";
  for (const auto& pos : topo.ap_positions) os << "ap " << pos[0] << " " << pos[1] << "\n";
  for (const auto& pos : topo.user_positions) os << "user " << pos[0] << " " << pos[1] << "\n";
  return os.str();
}

inline Topology parse_topology(const std::string& text) {
  Topology topo;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string role;
    ls >> role;
    if (role == "side") {
      if (!(ls >> topo.side) || topo.side <= 0.0)
        throw std::invalid_argument("parse_topology: bad side line");
    } else if (role == "ap" || role == "user") {
      double x = 0.0, y = 0.0;
      if (!(ls >> x >> y)) throw std::invalid_argument("parse_topology: bad node row: " + line);
      if (role == "ap")
        topo.ap_positions.push_back({x, y});
      else
        topo.user_positions.push_back({x, y});
    } else {
      throw std::invalid_argument("parse_topology: unknown row role: " + role);
    }
  }
  if (topo.ap_positions.empty() || topo.user_positions.empty())
    throw std::invalid_argument("parse_topology: need at least one ap and one user row");
  return topo;
}

}  // namespace otfslink
