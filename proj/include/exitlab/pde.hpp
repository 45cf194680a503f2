#pragma once

#include <optional>
#include <vector>

#include <Eigen/SparseCore>

#include "exitlab/model.hpp"
#include "exitlab/types.hpp"

namespace exitlab::pde {

/// Tensor grid over the domain's bounding box. Interior unknowns are
/// lattice nodes strictly inside D; a stencil leg that leaves D carries
/// the boundary point where the segment crosses.
class Grid {
 public:
  static Grid make(const DomainGeometry& domain, double target_h);

  int dim() const { return d_; }
  int interior_count() const { return n_interior_; }
  double spacing(int axis) const { return h_[static_cast<std::size_t>(axis)]; }
  Vector point(int interior_id) const;

  struct Leg {
    bool interior = false;
    int neighbor_id = -1;  // valid when interior
    Vector boundary_point;  // valid otherwise
  };
  const Leg& leg(int interior_id, int axis, int dir) const;  // dir: 0 = -, 1 = +

  /// Interior node nearest to x.
  int nearest_interior(const Vector& x) const;

 private:
  int d_ = 1;
  Vector lo_, hi_;
  std::vector<int> nodes_;  // lattice nodes per axis
  std::vector<double> h_;
  std::vector<int> interior_id_;    // per flat lattice node, -1 outside
  std::vector<int> interior_flat_;  // flat lattice index per interior id
  int n_interior_ = 0;
  std::vector<Leg> legs_;  // n_interior * d * 2

  int flat_index(const std::vector<int>& idx) const;
  Vector point_of_flat(int flat) const;
};

struct BoundaryTerm {
  int row;
  int mode;
  Vector point;
  double coeff;  // positive coefficient moved to the right-hand side
};

/// A = -L over the interior unknowns (an M-matrix); boundary couplings
/// are kept separately so different Dirichlet data can reuse the
/// assembly. Modes are stacked block-wise when the operator is coupled.
struct DiscreteOperator {
  Eigen::SparseMatrix<double> A;
  std::vector<BoundaryTerm> boundary_terms;
  int n_modes = 1;
  int single_mode = -1;  // >= 0 when restricted to one mode
  double eps = 0.0;
  const Grid* grid = nullptr;
};

/// Monotone discretization: central second differences for the
/// diffusion, first-order upwinding for the drift (a drift component
/// f_j > 0 couples to the +e_j neighbor), zero-order switching coupling
/// between mode blocks. Cross-derivative terms (d >= 2, full sigma) use
/// the standard mixed stencil and reject the grid if positivity fails.
DiscreteOperator discretize(const SwitchingModel& model, const DomainGeometry& domain,
                            const Grid& grid, double eps,
                            std::optional<int> single_mode = std::nullopt);

struct PdeSolution {
  std::vector<Vector> psi;  // per mode, interior values
  double residual = 0.0;
  int iterations = 0;
  double boundary_min = 0.0;
  double boundary_max = 0.0;

  double value(const Grid& grid, int mode, const Vector& x) const;
};

/// Solves the stacked system with BiCGSTAB/ILUT to relative residual
/// 1e-10 and verifies the discrete maximum principle.
PdeSolution solve_dirichlet(const DiscreteOperator& op, const BoundaryData& boundary);

struct EigenResult {
  double lambda = 0.0;
  Vector psi;  // interior values, max-normalized, positive
  int iterations = 0;
  double residual = 0.0;
};

/// Principal Dirichlet eigenvalue of -L for a single-mode operator by
/// inverse power iteration (Rayleigh quotient stabilized to 1e-10).
EigenResult principal_eigen(const DiscreteOperator& op);

struct PolicyIterationResult {
  std::vector<double> policy;        // control value per interior node
  EigenResult eig;                   // for the final policy
  std::vector<double> lambda_trace;  // one entry per sweep
  bool converged = false;
  int sweeps = 0;
};

/// Alternates eigen solves with the pointwise selector
/// v(x) <- argmax_u <upwind grad psi, f(x, u)>; keeps the best-lambda
/// policy if the iteration oscillates.
PolicyIterationResult policy_iteration_eigen(const SwitchingModel& model,
                                             const DomainGeometry& domain, const Grid& grid,
                                             double eps, int mode, int max_sweeps = 50);

struct LimitStudyRow {
  double eps;
  int mode;
  Vector probe;
  double psi;
  double distance;  // |psi - g_{k0}(ybar)|
};

/// Solves the coupled system along the ladder and reports distances to
/// the predicted limit g_{k0}(ybar). With JumpScaling::Accelerated the
/// rung at eps uses switching rates gamma / eps.
std::vector<LimitStudyRow> epsilon_limit_study(const SwitchingModel& model,
                                               const DomainGeometry& domain,
                                               const BoundaryData& boundary,
                                               const EpsilonLadder& ladder,
                                               const std::vector<Vector>& probes,
                                               const Vector& ybar, int k0, double grid_h,
                                               JumpScaling scaling);

}  // namespace exitlab::pde
