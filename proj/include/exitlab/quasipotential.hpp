#pragma once

#include <optional>
#include <vector>

#include "exitlab/action.hpp"
#include "exitlab/model.hpp"
#include "exitlab/types.hpp"

namespace exitlab::qp {

struct PathOptResult {
  action::DiscretizedPath path;
  double value = kInfinity;
  bool converged = false;
  double grad_norm = 0.0;
  int iterations = 0;
};

/// Minimizes the discrete contraction action over the interior nodes of
/// an N-node path from x0 to y in time T (quasi-Newton descent, central
/// finite-difference gradients with step 1e-6 * diam(D)). Without an
/// explicit initial path, both the straight chord and the time-reversed
/// averaged flow are tried and the better local minimum wins.
PathOptResult minimize_action_path(const SwitchingModel& model, const DomainGeometry& domain,
                                   const Vector& x0, const Vector& y, double T, int N,
                                   const std::optional<action::DiscretizedPath>& init = std::nullopt);

struct QuasipotentialResult {
  std::vector<Vector> mesh;
  std::vector<double> V;
  std::vector<double> T_star;          // per mesh point
  std::vector<bool> column_converged;  // optimizer status per mesh point
  int argmin = -1;
  Vector ybar;
  double separation = 0.0;  // V(second best) - V(ybar)
  action::DiscretizedPath extremal;  // best path to ybar
  double T_extremal = 0.0;
};

/// Default log-spaced transit-time grid, 8 values in [0.5, 32].
std::vector<double> default_T_grid();

/// V(y_j) = min over the T grid of the optimized action from the
/// averaged-flow equilibrium x0 (checked: |f_av(x0)| < 1e-6) to y_j.
/// Ties break toward the lowest mesh index. Columns run concurrently.
QuasipotentialResult quasipotential_boundary(const SwitchingModel& model,
                                             const DomainGeometry& domain, const Vector& x0,
                                             const std::vector<Vector>& mesh,
                                             const std::vector<double>& T_grid, int N,
                                             int workers = 0);

struct As1Settings {
  double separation_threshold = 1e-3;
  double flow_T = 64.0;
  double flow_dt = 1e-2;
  double converge_tol = 1e-3;
  int flow_starts = 32;
};

enum class Verdict { Holds, Fails, Degenerate };

struct As1Report {
  bool inward_ok = false;       // <f_av, n> < 0 on the whole mesh
  double worst_margin = 0.0;    // max over mesh of <f_av, n> (negative when ok)
  Vector worst_point;
  int flow_converged = 0;       // starts whose flow reached x0
  int flow_total = 0;
  bool unique_equilibrium_evidence = false;
  double separation = 0.0;
  bool separation_ok = false;
  Verdict verdict = Verdict::Fails;
};

As1Report verify_as1(const SwitchingModel& model, const DomainGeometry& domain, const Vector& x0,
                     const std::vector<Vector>& mesh, const QuasipotentialResult& qp,
                     const As1Settings& settings = {});

struct ExitModePrediction {
  int k0 = 0;                     // dominant exit mode (0-based)
  std::vector<double> pairings;   // <drift_k(ybar), n(ybar)> per mode
  std::vector<double> margins;    // pairing(k0) - pairing(k), k != k0
  bool generic = false;           // all margins above the tie tolerance
};

/// Evaluates the exit-mode inequalities at ybar: k0 maximizes the
/// drift-normal pairing; the prediction is generic when every margin
/// exceeds 1e-9.
ExitModePrediction verify_as2(const SwitchingModel& model, const Vector& ybar,
                              const DomainGeometry& domain);

}  // namespace exitlab::qp
