#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "exitlab/model.hpp"
#include "exitlab/types.hpp"

namespace exitlab::action {

/// Principal (Perron) eigenpair of a Metzler matrix: the eigenvalue of
/// maximal real part, with positive left/right eigenvectors
/// biorthonormalized to left . right = 1.
struct PrincipalEig {
  double lambda = 0.0;
  Vector right;
  Vector left;
  int iterations = 0;
  double residual = 0.0;
};

/// Power iteration on H + cI with c = 1 + max |H_kk| (making the matrix
/// entrywise positive), residual tolerance 1e-12, at most 10^4
/// iterations, dense fallback for n <= 8.
PrincipalEig principal_eigen(const Matrix& H);

struct EigGrad {
  double lambda = 0.0;
  Vector grad_p;      // d components
  Vector grad_alpha;  // n components (= left .* right)
};

struct LegendreResult {
  double value = 0.0;  // +infinity when the beta gate rejects
  Vector maximizer_p;
  Vector maximizer_alpha;  // full n components, gauge alpha_n = 0
  bool converged = true;
  double grad_norm = 0.0;
  int iterations = 0;
};

/// Model data frozen at a point x: assembles H(p, alpha), its Perron
/// root and gradients, and the Legendre duals eta and rho.
class HamiltonianEvaluator {
 public:
  HamiltonianEvaluator(const SwitchingModel& model, const Vector& x);
  /// Time-dependent-rates variant: the supplied off-diagonal rate
  /// matrix replaces gamma(x).
  HamiltonianEvaluator(const SwitchingModel& model, const Vector& x, const Matrix& offdiag_rates);

  int n() const { return n_; }
  int d() const { return d_; }

  Matrix H(const Vector& p, const Vector& alpha) const;
  PrincipalEig eig(const Vector& p, const Vector& alpha) const;
  EigGrad eig_grad(const Vector& p, const Vector& alpha) const;

  /// sup_{p, alpha} [q.p + beta.alpha - lambda], +infinity off the
  /// simplex (beta_k >= -1e-12, |sum beta - 1| <= 1e-9). The flat
  /// direction alpha -> alpha + c 1 is removed by the gauge alpha_n = 0.
  LegendreResult eta(const Vector& q, const Vector& beta,
                     const Vector* warm_p = nullptr, const Vector* warm_alpha = nullptr) const;

  /// sup_p [q.p - lambda(x, p, 0)].
  LegendreResult rho(const Vector& q, const Vector* warm_p = nullptr) const;

 private:
  int n_ = 1, d_ = 1;
  std::vector<Matrix> a_;  // a_k(x)
  std::vector<Vector> f_;  // effective drift per mode
  Matrix gamma_;           // generator including diagonal
};

// Spec-facing free functions.
Matrix hamiltonian(const SwitchingModel& model, const Vector& x, const Vector& p,
                   const Vector& alpha);
EigGrad eigen_and_grad(const SwitchingModel& model, const Vector& x, const Vector& p,
                       const Vector& alpha);
double legendre_eta(const SwitchingModel& model, const Vector& x, const Vector& q,
                    const Vector& beta);
double legendre_rho(const SwitchingModel& model, const Vector& x, const Vector& q);

/// Time grid with state nodes and optional occupation nodes.
struct DiscretizedPath {
  std::vector<double> t;
  std::vector<Vector> phi;
  std::optional<std::vector<Vector>> mu;

  int segments() const { return static_cast<int>(t.size()) - 1; }
};

/// Composite rule: sum_i eta(midpoint state, forward-difference
/// velocity, occupation velocity) * dt_i; +infinity as soon as one
/// segment is infeasible.
double path_action_S(const SwitchingModel& model, const DiscretizedPath& path);

/// Position-only contraction with rho in place of eta.
double path_action_I(const SwitchingModel& model, const DiscretizedPath& path);

/// Time-dependent transition rates gamma_km(t) for the Q-variation of
/// the action.
struct RatesClock {
  int n = 1;
  std::function<Matrix(double)> offdiag;
};

Matrix hamiltonian_td(const SwitchingModel& model, const RatesClock& clock, double t,
                      const Vector& x, const Vector& p, const Vector& alpha);
double path_action_S_td(const SwitchingModel& model, const RatesClock& clock,
                        const DiscretizedPath& path);

/// All beta on the simplex {beta_k >= 0, sum = 1} with coordinates on a
/// grid of the given step (step = 1/N for integer N).
std::vector<Vector> simplex_grid(int n, double step);

struct EtaRhoReport {
  double rho = 0.0;
  double min_eta = 0.0;
  Vector argmin_beta;
  bool lower_bound_ok = false;  // min_eta >= rho - tol
};

/// Checks inf_beta eta(x, q, beta) ~ rho(x, q) over a simplex grid. The
/// eta ascents are warm-started at rho's maximizer so the computed
/// minimum can never undercut the computed rho.
EtaRhoReport eta_rho_consistency(const SwitchingModel& model, const Vector& x, const Vector& q,
                                 const std::vector<Vector>& beta_grid, double tol = 1e-8);

}  // namespace exitlab::action
