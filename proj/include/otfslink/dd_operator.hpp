#pragma once
// Delay-Doppler (DD) domain effective-channel operators.
//
// A propagation path with delay tap ℓ, integer Doppler tap k and fractional
// Doppler κ acts on the MN-point DD lattice (M delay bins × N Doppler bins,
// vectorised row-major as u = n·M + m) as the unitary operator
//
//     T = (F_N ⊗ I_M) · Π^ℓ · Δ^{k+κ} · (F_N ⊗ I_M)†,
//
// where F_N is the unitary N-point DFT, Π the MN-point cyclic down-shift
// ((Π^ℓ x)[u] = x[(u−ℓ) mod MN]) and Δ^{a} = diag{ z^{a·u} }, z = e^{j2π/MN}.
//
// Every product T_i T_j† reduces to the canonical sandwich
//
//     (F_N ⊗ I_M) · Π^s · D · (F_N ⊗ I_M)†,   s = (ℓ_i − ℓ_j) mod MN,
//     d_v = z^{(a_i − a_j)·((v − ℓ_j) mod MN)},
//
// obtained with the commutation rule D Π^s = Π^s D', d'_v = d_{(v+s) mod MN}.
// All row statistics needed by the spectral-efficiency expressions (diagonal
// entries, row sums, off-diagonal energies) then follow in closed form from
// (s, D) without forming any dense MN×MN matrix:
//   * diagonal r (write r = k_r·M + m_r): zero unless s ≡ 0 (mod M); else with
//     s = σM, G_rr = e^{−j2πσk_r/N} · (1/N) Σ_n d_{nM+m_r};
//   * row sum r: unit-modulus, Σ_c G_rc = e^{−j2πk_r n(m_r)/N} · d_{(n(m_r)M+m_r−s) mod MN},
//     where n(m) is the unique n with (nM + m − s) mod MN < M;
//   * off-diagonal energy: Σ_{c≠r} |G_rc|² = 1 − |G_rr|² (rows have unit norm).
//
// Also implemented here: the pilot spreading coefficients α[k,ℓ,c] with their
// geometric-sum factor β_i(c), and the guard-region sidelobe energy in both
// its rectangular-window approximation (N−4k_max−4k̂−1)/N² and the exact
// summation of |α|² outside the guard set.

#include <Eigen/Dense>
#include <cassert>
#include <cmath>
#include <complex>
#include <stdexcept>
#include <vector>

#include "otfslink/common.hpp"

namespace otfslink {

/// Lattice dimensions: M delay bins × N Doppler bins.
struct DDDims {
  int M = 0;
  int N = 0;
  int size() const { return M * N; }
  bool operator==(const DDDims&) const = default;
};

/// Structured descriptor of one path operator T(ℓ, k+κ).  Immutable; cheap to
/// copy; never stores a dense matrix.
struct DDOperator {
  DDDims dims;
  int delay = 0;            // ℓ ∈ [0, M)
  int doppler_tap = 0;      // k (signed; reduced mod N inside phases)
  double doppler_frac = 0;  // κ ∈ (−0.5, 0.5)

  double doppler() const { return static_cast<double>(doppler_tap) + doppler_frac; }
};

/// Validated constructor for DDOperator.
inline DDOperator build_dd_operator(int delay, int doppler_tap, double doppler_frac, DDDims dims) {
  if (dims.M <= 0 || dims.N <= 0) throw std::invalid_argument("lattice dims must be positive");
  if (delay < 0 || delay >= dims.M) throw std::invalid_argument("delay tap must satisfy 0 <= delay < M");
  if (!(doppler_frac > -0.5 && doppler_frac < 0.5))
    throw std::invalid_argument("fractional Doppler must lie in (-0.5, 0.5)");
  return DDOperator{dims, delay, doppler_tap, doppler_frac};
}

namespace detail {

/// Unitary DFT along the Doppler axis: Y[n][m] = (1/√N) Σ_{n'} X[n'][m] e^{−j2πnn'/N}.
/// `x` is the row-major MN vector (entry u = n·M + m); sign=+1 gives the
/// inverse (adjoint) transform.  O(M·N²), fine for the lattice sizes used here.
inline std::vector<cplx> doppler_dft(const std::vector<cplx>& x, DDDims dims, int sign) {
  const int M = dims.M, N = dims.N;
  std::vector<cplx> y(static_cast<std::size_t>(M) * N);
  const double scale = 1.0 / std::sqrt(static_cast<double>(N));
  std::vector<cplx> tw(static_cast<std::size_t>(N));
  for (int t = 0; t < N; ++t) tw[t] = cis(sign * kTwoPi * t / N);
  for (int n = 0; n < N; ++n) {
    for (int m = 0; m < M; ++m) {
      cplx acc = 0;
      for (int np = 0; np < N; ++np) acc += x[static_cast<std::size_t>(np) * M + m] * tw[(n * np) % N];
      y[static_cast<std::size_t>(n) * M + m] = acc * scale;
    }
  }
  return y;
}

}  // namespace detail

/// y = T·x by factor application (adjoint DFT, phase, shift, DFT); O(MN·N).
inline std::vector<cplx> apply(const DDOperator& op, const std::vector<cplx>& x) {
  const int MN = op.dims.size();
  if (static_cast<int>(x.size()) != MN) throw std::invalid_argument("apply: size mismatch");
  std::vector<cplx> u = detail::doppler_dft(x, op.dims, +1);  // (F_N ⊗ I)† x
  const double a = op.doppler();
  std::vector<cplx> v(static_cast<std::size_t>(MN));
  for (int i = 0; i < MN; ++i) v[static_cast<std::size_t>(i)] = u[static_cast<std::size_t>(i)] * cis(kTwoPi * a * i / MN);
  std::vector<cplx> w(static_cast<std::size_t>(MN));
  for (int i = 0; i < MN; ++i) w[static_cast<std::size_t>(i)] = v[static_cast<std::size_t>(imod(i - op.delay, MN))];
  return detail::doppler_dft(w, op.dims, -1);
}

/// y = T†·x (reverse factor order with conjugated phase and shift).
inline std::vector<cplx> apply_adjoint(const DDOperator& op, const std::vector<cplx>& x) {
  const int MN = op.dims.size();
  if (static_cast<int>(x.size()) != MN) throw std::invalid_argument("apply_adjoint: size mismatch");
  std::vector<cplx> u = detail::doppler_dft(x, op.dims, +1);
  std::vector<cplx> w(static_cast<std::size_t>(MN));
  for (int i = 0; i < MN; ++i) w[static_cast<std::size_t>(i)] = u[static_cast<std::size_t>(imod(i + op.delay, MN))];
  const double a = op.doppler();
  for (int i = 0; i < MN; ++i) w[static_cast<std::size_t>(i)] *= cis(-kTwoPi * a * i / MN);
  return detail::doppler_dft(w, op.dims, -1);
}

/// Dense MN×MN matrix of T; test/tiny-dims use only.
inline Eigen::MatrixXcd materialize(const DDOperator& op) {
  const int MN = op.dims.size();
  Eigen::MatrixXcd out(MN, MN);
  std::vector<cplx> e(static_cast<std::size_t>(MN), cplx{0, 0});
  for (int c = 0; c < MN; ++c) {
    e[static_cast<std::size_t>(c)] = 1.0;
    const std::vector<cplx> col = otfslink::apply(op, e);
    for (int r = 0; r < MN; ++r) out(r, c) = col[static_cast<std::size_t>(r)];
    e[static_cast<std::size_t>(c)] = 0.0;
  }
  return out;
}

/// Canonical middle form of the product T_i T_j†: Π^shift · diag(d).
struct ProductForm {
  DDDims dims;
  int shift = 0;             // s = (ℓ_i − ℓ_j) mod MN
  std::vector<cplx> d;       // diagonal after commuting all factors right
};

inline ProductForm product_form(const DDOperator& op_i, const DDOperator& op_j) {
  if (!(op_i.dims == op_j.dims)) throw std::invalid_argument("product_form: dimension mismatch");
  const int MN = op_i.dims.size();
  ProductForm pf;
  pf.dims = op_i.dims;
  pf.shift = imod(op_i.delay - op_j.delay, MN);
  pf.d.resize(static_cast<std::size_t>(MN));
  const double da = op_i.doppler() - op_j.doppler();
  for (int v = 0; v < MN; ++v)
    pf.d[static_cast<std::size_t>(v)] = cis(kTwoPi * da * imod(v - op_j.delay, MN) / MN);
  return pf;
}

/// Canonical middle form of the adjoint-side product T_i† T_j (the receive
/// matched-filter kernel): same sandwich with s = (ℓ_j − ℓ_i) mod MN and
/// d_v = z^{a_j·v − a_i·((v+s) mod MN)}.  Identical to product_form for
/// integer Doppler taps; differs under fractional Doppler because the wrap
/// points of the two phase ramps move.
inline ProductForm adjoint_product_form(const DDOperator& op_i, const DDOperator& op_j) {
  if (!(op_i.dims == op_j.dims))
    throw std::invalid_argument("adjoint_product_form: dimension mismatch");
  const int MN = op_i.dims.size();
  ProductForm pf;
  pf.dims = op_i.dims;
  pf.shift = imod(op_j.delay - op_i.delay, MN);
  pf.d.resize(static_cast<std::size_t>(MN));
  const double ai = op_i.doppler(), aj = op_j.doppler();
  for (int v = 0; v < MN; ++v)
    pf.d[static_cast<std::size_t>(v)] =
        cis(kTwoPi * (aj * v - ai * imod(v + pf.shift, MN)) / MN);
  return pf;
}

/// Per-row closed-form statistics of a canonical product; O(MN) to build,
/// O(1) per row afterwards.
class ProductRowStats {
 public:
  explicit ProductRowStats(const ProductForm& pf) : dims_(pf.dims), shift_(pf.shift) {
    const int M = dims_.M, N = dims_.N, MN = dims_.size();
    diag_base_.assign(static_cast<std::size_t>(M), cplx{0, 0});
    diag_nonzero_ = (shift_ % M == 0);
    if (diag_nonzero_) {
      sigma_ = shift_ / M;
      for (int m = 0; m < M; ++m) {
        cplx acc = 0;
        for (int n = 0; n < N; ++n) acc += pf.d[static_cast<std::size_t>(n * M + m)];
        diag_base_[static_cast<std::size_t>(m)] = acc / static_cast<double>(N);
      }
    }
    // Row-sum support: for each delay residue m, the unique Doppler block n
    // with (nM + m − s) mod MN inside [0, M), plus the diagonal value there.
    rowsum_n_.assign(static_cast<std::size_t>(M), 0);
    rowsum_d_.assign(static_cast<std::size_t>(M), cplx{0, 0});
    for (int m = 0; m < M; ++m) {
      for (int n = 0; n < N; ++n) {
        const int src = imod(n * M + m - shift_, MN);
        if (src < M) {
          rowsum_n_[static_cast<std::size_t>(m)] = n;
          rowsum_d_[static_cast<std::size_t>(m)] = pf.d[static_cast<std::size_t>(src)];
          break;
        }
      }
    }
  }

  /// [T_i T_j†]_{(r,r)}
  cplx diagonal(int r) const {
    if (!diag_nonzero_) return {0, 0};
    const int M = dims_.M, N = dims_.N;
    const int kr = r / M, mr = r % M;
    return cis(-kTwoPi * sigma_ * kr / N) * diag_base_[static_cast<std::size_t>(mr)];
  }

  /// Σ_c [T_i T_j†]_{(r,c)} — always unit modulus.
  cplx row_sum(int r) const {
    const int M = dims_.M, N = dims_.N;
    const int kr = r / M, mr = r % M;
    return cis(-kTwoPi * kr * rowsum_n_[static_cast<std::size_t>(mr)] / N) * rowsum_d_[static_cast<std::size_t>(mr)];
  }

  /// χ(r) = |diagonal|².  Depends on r only through the delay residue m_r.
  double chi(int r) const { return std::norm(diagonal(r)); }

  /// Coherent off-diagonal kernel κ(r) = |row_sum − diagonal|².  Equals the
  /// true inter-row interference energy whenever each row has at most one
  /// off-diagonal nonzero (integer Doppler taps); see kappa_incoherent for
  /// the Parseval form that is exact in general.
  double kappa(int r) const { return std::norm(row_sum(r) - diagonal(r)); }

  /// Incoherent off-diagonal energy Σ_{c≠r}|G_rc|² = 1 − χ(r) (unit row norm).
  double kappa_incoherent(int r) const { return 1.0 - chi(r); }

  /// True when χ and the incoherent κ take one value for every row.
  bool chi_uniform() const {
    if (!diag_nonzero_) return true;
    for (std::size_t m = 1; m < diag_base_.size(); ++m)
      if (std::abs(std::norm(diag_base_[m]) - std::norm(diag_base_[0])) > 1e-15) return false;
    return true;
  }

 private:
  DDDims dims_;
  int shift_;
  int sigma_ = 0;
  bool diag_nonzero_ = false;
  std::vector<cplx> diag_base_;  // (1/N) Σ_n d_{nM+m} per delay residue m
  std::vector<int> rowsum_n_;    // n(m)
  std::vector<cplx> rowsum_d_;   // d_{(n(m)M+m−s) mod MN}
};

/// χ kernel of the pair (op_i, op_j) at row r: |[T_i T_j†]_{(r,r)}|².
inline double chi_kernel(const DDOperator& op_i, const DDOperator& op_j, int r) {
  if (r < 0 || r >= op_i.dims.size()) throw std::out_of_range("chi_kernel: row index");
  return ProductRowStats(product_form(op_i, op_j)).chi(r);
}

/// κ kernel of the pair (op_i, op_j) at row r: |Σ_{c≠r}[T_i T_j†]_{(r,c)}|².
inline double kappa_kernel(const DDOperator& op_i, const DDOperator& op_j, int r) {
  if (r < 0 || r >= op_i.dims.size()) throw std::out_of_range("kappa_kernel: row index");
  return ProductRowStats(product_form(op_i, op_j)).kappa(r);
}

// ---------------------------------------------------------------------------
// Pilot spreading coefficients and sidelobe energy.
// ---------------------------------------------------------------------------

/// Geometric-sum factor β_i(c) = (e^{−j2π(−c−κ')} − 1) / (e^{−j(2π/N)(−c−κ')} − 1);
/// equals N in the degenerate limit −c−κ' ≡ 0 (mod N).
inline cplx beta_geometric(int c, double kappa_frac, int N) {
  const double arg = -static_cast<double>(c) - kappa_frac;
  const cplx den = cis(-kTwoPi * arg / N) - 1.0;
  if (std::abs(den) < 1e-14) return {static_cast<double>(N), 0.0};
  return (cis(-kTwoPi * arg) - 1.0) / den;
}

/// Doppler-spreading coefficient α[k,ℓ,c] of a path with taps (k', ℓ'),
/// fractional Doppler κ', observed at lattice point (k, ℓ) with Doppler
/// offset c.  Two branches: plain geometric sum when the delay does not wrap
/// (ℓ' ≤ ℓ), and the (β−1) branch with an extra phase when it does (ℓ < ℓ').
inline cplx alpha_coeff(int k, int l, int kp, int lp, double kappa_frac, int c, DDDims dims) {
  const int M = dims.M, N = dims.N;
  if (l < 0 || l >= M || lp < 0 || lp >= M) throw std::out_of_range("alpha_coeff: delay index");
  if (c < -N / 2 || c > N / 2 - 1) throw std::out_of_range("alpha_coeff: Doppler offset c");
  const cplx beta = beta_geometric(c, kappa_frac, N);
  const cplx common = cis(-kTwoPi * (l - lp) * (kp + kappa_frac) / (M * N)) / static_cast<double>(N);
  if (lp <= l) return beta * common;
  return (beta - 1.0) * common * cis(-kTwoPi * imod(k - kp + c, N) / N);
}

/// Rectangular-window approximation of the out-of-guard sidelobe energy,
/// Σ_{c∉𝒦} |α|² ≈ (N − 4k_max − 4k̂ − 1)/N².
inline double sidelobe_energy(int k_max, int k_hat, DDDims dims) {
  const int N = dims.N;
  if (4 * k_max + 4 * k_hat + 1 > N) throw std::invalid_argument("sidelobe_energy: guard exceeds N");
  return static_cast<double>(N - 4 * k_max - 4 * k_hat - 1) / (static_cast<double>(N) * N);
}

/// Exact out-of-guard sidelobe energy: Σ |α|² over c ∈ [−N/2, N/2−1] with
/// |c| > 2k_max + 2k̂, for fractional Doppler κ'.  |α| does not depend on the
/// lattice point or the phase factors, only on |β_i(c)| (non-wrapped delay
/// branch) or |β_i(c) − 1| (wrapped branch).
inline double sidelobe_energy_exact(int k_max, int k_hat, double kappa_frac, DDDims dims,
                                    bool delay_wrapped = false) {
  const int N = dims.N;
  if (4 * k_max + 4 * k_hat + 1 > N) throw std::invalid_argument("sidelobe_energy_exact: guard exceeds N");
  const int half = 2 * k_max + 2 * k_hat;
  double total = 0.0;
  for (int c = -N / 2; c <= N / 2 - 1; ++c) {
    if (c >= -half && c <= half) continue;
    const cplx b = beta_geometric(c, kappa_frac, N);
    const cplx a = (delay_wrapped ? b - 1.0 : b) / static_cast<double>(N);
    total += std::norm(a);
  }
  return total;
}

}  // namespace otfslink
