#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "exitlab/model.hpp"
#include "exitlab/types.hpp"

namespace exitlab::sim {

struct ExitEvent {
  enum class Kind { Exited, Censored };
  Kind kind = Kind::Censored;
  double tau = 0.0;  // exit time, or the horizon when censored
  Vector y;          // exit point on the boundary (empty when censored)
  int mode = 0;      // mode at exit / at the horizon
  bool exited() const { return kind == Kind::Exited; }
};

struct TrajectorySample {
  std::vector<double> t;    // recording grid (multiples of dt up to tau)
  std::vector<Vector> x;    // states on the grid
  std::vector<int> mode;    // mode on the grid (piecewise constant)
  Vector occupation;        // accumulated time per mode at the final time
  ExitEvent exit;
};

struct RateEstimate {
  double lambda = 0.0;
  double se = 0.0;
  double t_lo = 0.0, t_hi = 0.0;
  int points = 0;
  bool ok = false;
};

struct ExitStatistics {
  int trials = 0;
  int n_exited = 0;
  int n_censored = 0;
  double exit_fraction = 0.0;
  bool degenerate = false;  // no trial exited: no exit-time statistics
  double mean_exit_time = 0.0;

  // survival curve P{tau > t} on a uniform grid
  std::vector<double> survival_t;
  std::vector<double> survival_p;

  // exit-place histogram over the boundary mesh (mass = fraction of all
  // trials; masses sum to the exit fraction)
  std::vector<Vector> mesh;
  std::vector<double> histogram_mass;

  // exit-mode frequencies over exited trials (sum to 1)
  std::vector<double> mode_frequency;

  // fraction of exited trials with |X(tau) - ybar| <= delta
  double concentration_fraction = 0.0;
  double concentration_se = 0.0;
  Vector ybar_hint;
  double delta = 0.0;

  RateEstimate tail_rate;  // default-window estimate

  std::vector<double> exit_times_sorted;  // exited trials only

  // provenance
  double eps = 0.0, dt = 0.0, horizon = 0.0;
  std::uint64_t base_seed = 0;
  Vector x0;
  int start_mode = 0;

  double survival_at(double t) const;
  std::string to_json() const;
  std::string survival_csv() const;
  std::string histogram_csv() const;
};

/// One trajectory of the switching diffusion: Euler-Maruyama between
/// jumps, jump times by thinning against a sampled uniform rate bound,
/// exit by boundary-crossing interpolation, censoring at the horizon.
TrajectorySample simulate_path(const SwitchingModel& model, const DomainGeometry& domain,
                               double eps, const Vector& x0, int start_mode, double dt,
                               double horizon, std::uint64_t seed);

struct McSettings {
  int workers = 0;                 // 0 = hardware concurrency
  int survival_points = 257;       // artifact grid resolution
  double window_hi_level = 0.35;   // default regression window: survival levels
  double window_lo_level = 0.02;
  int boundary_mesh_target = 64;   // mesh size when none supplied
};

/// N independent trials with per-trial streams derived from (base_seed,
/// trial). Aggregation is a fold in trial order, so the result is
/// byte-identical for any worker count. horizon <= 0 selects the
/// censoring horizon automatically (pilot estimate, about 50 mean exit
/// times).
ExitStatistics run_monte_carlo(const SwitchingModel& model, const DomainGeometry& domain,
                               double eps, const Vector& x0, int start_mode, double dt,
                               double horizon, int trials, std::uint64_t base_seed, double delta,
                               const std::optional<Vector>& ybar_hint,
                               const McSettings& settings = {},
                               const std::vector<Vector>* boundary_mesh = nullptr);

/// Least-squares slope of -log P{tau > t} over [t_lo, t_hi], with the
/// regression standard error. Requires at least 3 grid points with
/// positive survival inside the window.
RateEstimate estimate_exit_rate(const ExitStatistics& stats, double t_lo, double t_hi);

/// The eps = 0 piecewise-deterministic process: 4th-order flow in the
/// current mode, jump times by integrating the survival of the
/// inhomogeneous switching rate along the flow (time-change inversion).
TrajectorySample pdmp_simulate(const SwitchingModel& model, const DomainGeometry& domain,
                               const Vector& x0, int start_mode, double dt, double horizon,
                               std::uint64_t seed);

struct PointEstimate {
  Vector x;
  int start_mode = 0;
  double mean = 0.0;
  double se = 0.0;
  int n_exited = 0;
  int n_censored = 0;
  bool horizon_too_short = false;  // censoring above 50%
};

/// Monte Carlo estimate of E[g_{mode(tau)}(X(tau))] per start point
/// (the stochastic representation of the coupled Dirichlet solution).
std::vector<PointEstimate> stochastic_representation_estimate(
    const SwitchingModel& model, const DomainGeometry& domain, double eps,
    const std::vector<Vector>& points, int start_mode, const BoundaryData& boundary, int trials,
    std::uint64_t base_seed, double dt, double horizon, int workers = 0);

}  // namespace exitlab::sim
