#include "exitlab/pde.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/IterativeLinearSolvers>
#include <Eigen/SparseLU>

namespace exitlab::pde {

namespace {

using Triplet = Eigen::Triplet<double>;

}  // namespace

int Grid::flat_index(const std::vector<int>& idx) const {
  int flat = 0, stride = 1;
  for (int a = 0; a < d_; ++a) {
    flat += idx[static_cast<std::size_t>(a)] * stride;
    stride *= nodes_[static_cast<std::size_t>(a)];
  }
  return flat;
}

Vector Grid::point_of_flat(int flat) const {
  Vector x(d_);
  for (int a = 0; a < d_; ++a) {
    int na = nodes_[static_cast<std::size_t>(a)];
    int ia = flat % na;
    flat /= na;
    x[a] = lo_[a] + ia * h_[static_cast<std::size_t>(a)];
  }
  return x;
}

Grid Grid::make(const DomainGeometry& domain, double target_h) {
  if (!(target_h > 0.0)) throw ConfigError("grid spacing must be positive");
  Grid g;
  g.d_ = domain.dim();
  auto [lo, hi] = domain.bounding_box();
  g.lo_ = lo;
  g.hi_ = hi;
  int total = 1;
  for (int a = 0; a < g.d_; ++a) {
    int cells = std::max(18, static_cast<int>(std::lround((hi[a] - lo[a]) / target_h)));
    g.nodes_.push_back(cells + 1);
    g.h_.push_back((hi[a] - lo[a]) / cells);
    total *= cells + 1;
  }
  if (total > 40'000'000) throw ConfigError("grid too fine: lattice exceeds the memory cap");

  g.interior_id_.assign(static_cast<std::size_t>(total), -1);
  for (int flat = 0; flat < total; ++flat) {
    Vector x = g.point_of_flat(flat);
    if (domain.level(x) < 0.0) {
      g.interior_id_[static_cast<std::size_t>(flat)] = g.n_interior_++;
      g.interior_flat_.push_back(flat);
    }
  }
  // per-axis resolution check ("stencil starvation" guard)
  for (int a = 0; a < g.d_; ++a)
    if (g.nodes_[static_cast<std::size_t>(a)] - 2 < 16)
      throw ConfigError("grid does not resolve the domain: fewer than 16 interior cells on axis " +
                        std::to_string(a + 1));

  // neighbor legs
  g.legs_.resize(static_cast<std::size_t>(g.n_interior_) * static_cast<std::size_t>(g.d_) * 2);
  std::vector<int> idx(static_cast<std::size_t>(g.d_));
  for (int id = 0; id < g.n_interior_; ++id) {
    int flat = g.interior_flat_[static_cast<std::size_t>(id)];
    int rem = flat;
    for (int a = 0; a < g.d_; ++a) {
      int na = g.nodes_[static_cast<std::size_t>(a)];
      idx[static_cast<std::size_t>(a)] = rem % na;
      rem /= na;
    }
    Vector x = g.point_of_flat(flat);
    for (int a = 0; a < g.d_; ++a) {
      for (int dir = 0; dir < 2; ++dir) {
        Leg leg;
        std::vector<int> nb = idx;
        nb[static_cast<std::size_t>(a)] += dir == 0 ? -1 : 1;
        if (nb[static_cast<std::size_t>(a)] < 0 ||
            nb[static_cast<std::size_t>(a)] >= g.nodes_[static_cast<std::size_t>(a)])
          throw ConfigError("grid does not resolve the domain: interior node on the lattice edge");
        int nb_flat = g.flat_index(nb);
        int nb_id = g.interior_id_[static_cast<std::size_t>(nb_flat)];
        if (nb_id >= 0) {
          leg.interior = true;
          leg.neighbor_id = nb_id;
        } else {
          Vector xn = g.point_of_flat(nb_flat);
          double s = domain.crossing_fraction(x, xn);
          Vector crossing = x + s * (xn - x);
          leg.boundary_point = domain.project_to_boundary(crossing);
        }
        g.legs_[(static_cast<std::size_t>(id) * static_cast<std::size_t>(g.d_) +
                 static_cast<std::size_t>(a)) * 2 + static_cast<std::size_t>(dir)] = leg;
      }
    }
  }
  return g;
}

Vector Grid::point(int interior_id) const {
  return point_of_flat(interior_flat_[static_cast<std::size_t>(interior_id)]);
}

const Grid::Leg& Grid::leg(int interior_id, int axis, int dir) const {
  return legs_[(static_cast<std::size_t>(interior_id) * static_cast<std::size_t>(d_) +
                static_cast<std::size_t>(axis)) * 2 + static_cast<std::size_t>(dir)];
}

int Grid::nearest_interior(const Vector& x) const {
  int best = 0;
  double best_d = kInfinity;
  for (int id = 0; id < n_interior_; ++id) {
    double dd = (point(id) - x).norm();
    if (dd < best_d) {
      best_d = dd;
      best = id;
    }
  }
  return best;
}

namespace {

// Assembly core shared by the model-drift and policy-drift paths.
// drift_at(mode, interior_id) must return the drift vector at the node.
template <class DriftAt>
DiscreteOperator assemble(const SwitchingModel& model, const Grid& grid, double eps,
                          std::optional<int> single_mode, const DriftAt& drift_at) {
  DiscreteOperator op;
  op.grid = &grid;
  op.eps = eps;
  op.single_mode = single_mode.value_or(-1);
  op.n_modes = single_mode ? 1 : model.n;
  const int n_int = grid.interior_count();
  const int d = grid.dim();
  const std::size_t rows = static_cast<std::size_t>(op.n_modes) * static_cast<std::size_t>(n_int);

  std::vector<Triplet> trip;
  trip.reserve(rows * static_cast<std::size_t>(2 * d + model.n));

  for (int block = 0; block < op.n_modes; ++block) {
    const int k = single_mode ? *single_mode : block;
    const ModeDynamics& mode = model.modes[static_cast<std::size_t>(k)];
    for (int id = 0; id < n_int; ++id) {
      const int row = block * n_int + id;
      const Vector x = grid.point(id);
      const Matrix a = mode.a_at(x);
      const Vector f = drift_at(k, id, x);
      double diag = 0.0;  // accumulates the L diagonal (negative)

      // positivity guard for mixed terms: the axis stencils must retain
      // nonnegative off-diagonals after the cross-term correction
      for (int ax = 0; ax < d; ++ax) {
        double cross_budget = 0.0;
        for (int other = 0; other < d; ++other)
          if (other != ax) cross_budget += std::abs(a(ax, other)) / (grid.spacing(ax) * grid.spacing(other));
        double own = a(ax, ax) / (grid.spacing(ax) * grid.spacing(ax));
        if (own < cross_budget - 1e-14)
          throw ConfigError(
              "mixed-derivative stencil loses positivity at this grid spacing; refine the grid "
              "or reduce the cross terms");
      }

      for (int ax = 0; ax < d; ++ax) {
        const double h = grid.spacing(ax);
        double cross_mag = 0.0;
        for (int other = 0; other < d; ++other)
          if (other != ax) cross_mag += std::abs(a(ax, other)) / (h * grid.spacing(other));
        const double c = eps * 0.5 * (a(ax, ax) / (h * h) - cross_mag);
        const double up = std::max(f[ax], 0.0) / h;
        const double dn = std::max(-f[ax], 0.0) / h;
        const double coeff_plus = c + up;
        const double coeff_minus = c + dn;
        diag -= coeff_plus + coeff_minus;
        const Grid::Leg& plus = grid.leg(id, ax, 1);
        const Grid::Leg& minus = grid.leg(id, ax, 0);
        if (plus.interior)
          trip.emplace_back(row, block * n_int + plus.neighbor_id, -coeff_plus);
        else
          op.boundary_terms.push_back({row, k, plus.boundary_point, coeff_plus});
        if (minus.interior)
          trip.emplace_back(row, block * n_int + minus.neighbor_id, -coeff_minus);
        else
          op.boundary_terms.push_back({row, k, minus.boundary_point, coeff_minus});
      }

      // mixed second derivatives (7-point stencil): a_ij > 0 couples the
      // (+,+) and (-,-) diagonal neighbors, a_ij < 0 the (+,-) and (-,+)
      for (int ax = 0; ax < d; ++ax) {
        for (int bx = ax + 1; bx < d; ++bx) {
          double aij = a(ax, bx);
          if (aij == 0.0) continue;
          const double w = eps * std::abs(aij) / (2.0 * grid.spacing(ax) * grid.spacing(bx));
          const int dir_b_first = aij > 0.0 ? 1 : 0;
          for (int s = 0; s < 2; ++s) {
            // diagonal neighbor via two legs; only usable when both legs
            // stay interior, otherwise fold into the boundary terms at
            // the first crossing
            int da = s == 0 ? 1 : 0;
            int db = s == 0 ? dir_b_first : 1 - dir_b_first;
            const Grid::Leg& la = grid.leg(id, ax, da);
            if (!la.interior) {
              op.boundary_terms.push_back({row, k, la.boundary_point, w});
              diag -= w;
              continue;
            }
            const Grid::Leg& lb = grid.leg(la.neighbor_id, bx, db);
            if (!lb.interior) {
              op.boundary_terms.push_back({row, k, lb.boundary_point, w});
              diag -= w;
              continue;
            }
            trip.emplace_back(row, block * n_int + lb.neighbor_id, -w);
            diag -= w;
          }
        }
      }

      // switching coupling between mode blocks
      if (!single_mode && model.n > 1) {
        std::vector<double> rates(static_cast<std::size_t>(model.n));
        model.rates_row(k, std::span<const double>(x.data(), static_cast<std::size_t>(x.size())),
                        rates.data());
        for (int m = 0; m < model.n; ++m) {
          if (m == k) continue;
          trip.emplace_back(row, m * n_int + id, -rates[static_cast<std::size_t>(m)]);
          diag -= rates[static_cast<std::size_t>(m)];
        }
      }

      trip.emplace_back(row, row, -diag);  // A = -L
    }
  }

  op.A.resize(static_cast<Index>(rows), static_cast<Index>(rows));
  op.A.setFromTriplets(trip.begin(), trip.end());
  op.A.makeCompressed();
  return op;
}

}  // namespace

DiscreteOperator discretize(const SwitchingModel& model, const DomainGeometry& domain,
                            const Grid& grid, double eps, std::optional<int> single_mode) {
  (void)domain;
  if (single_mode && (*single_mode < 0 || *single_mode >= model.n))
    throw ConfigError("single_mode out of range");
  return assemble(model, grid, eps, single_mode,
                  [&](int k, int, const Vector& x) {
                    return model.modes[static_cast<std::size_t>(k)].drift_at(x);
                  });
}

PdeSolution solve_dirichlet(const DiscreteOperator& op, const BoundaryData& boundary) {
  const int n_int = op.grid->interior_count();
  const Index rows = op.A.rows();
  Vector b = Vector::Zero(rows);
  double gmin = kInfinity, gmax = -kInfinity;
  for (const BoundaryTerm& t : op.boundary_terms) {
    double g = boundary.value(t.mode, t.point);
    b[t.row] += t.coeff * g;
    gmin = std::min(gmin, g);
    gmax = std::max(gmax, g);
  }

  Eigen::BiCGSTAB<Eigen::SparseMatrix<double>, Eigen::IncompleteLUT<double>> solver;
  solver.setTolerance(1e-13);
  solver.setMaxIterations(4000);
  solver.compute(op.A);
  if (solver.info() != Eigen::Success)
    throw NumericsError("Dirichlet solve: preconditioner setup failed");
  Vector psi = solver.solve(b);
  double bnorm = std::max(b.norm(), 1e-300);
  double rel = (op.A * psi - b).norm() / bnorm;
  if (rel > 1e-10) {
    // direct fallback keeps the residual contract when ILUT stalls
    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu(op.A);
    if (lu.info() != Eigen::Success) throw NumericsError("Dirichlet solve: factorization failed");
    psi = lu.solve(b);
    rel = (op.A * psi - b).norm() / bnorm;
    if (rel > 1e-10)
      throw NumericsError("Dirichlet solve did not reach the residual tolerance");
  }

  PdeSolution sol;
  sol.iterations = static_cast<int>(solver.iterations());
  sol.residual = rel;
  sol.boundary_min = gmin;
  sol.boundary_max = gmax;
  const int blocks = op.n_modes;
  const double slack = 1e-9 * (1.0 + std::max(std::abs(gmin), std::abs(gmax)));
  for (int kb = 0; kb < blocks; ++kb) {
    Vector block = psi.segment(static_cast<Index>(kb) * n_int, n_int);
    if (block.minCoeff() < gmin - slack || block.maxCoeff() > gmax + slack)
      throw NumericsError("discrete maximum principle violated; the solve is untrustworthy");
    sol.psi.push_back(std::move(block));
  }
  return sol;
}

double PdeSolution::value(const Grid& grid, int mode, const Vector& x) const {
  return psi[static_cast<std::size_t>(mode)][grid.nearest_interior(x)];
}

EigenResult principal_eigen(const DiscreteOperator& op) {
  if (op.n_modes != 1)
    throw ConfigError("principal_eigen expects a single-mode operator");
  Eigen::SparseLU<Eigen::SparseMatrix<double>> lu(op.A);
  if (lu.info() != Eigen::Success)
    throw NumericsError("eigen solve: factorization failed");
  Vector v = Vector::Ones(op.A.rows());
  v /= v.norm();
  double lambda = 0.0, prev = kInfinity;
  int it = 0;
  for (; it < 500; ++it) {
    Vector w = lu.solve(v);
    lambda = w.dot(v) / w.dot(w);  // Rayleigh quotient of A at w
    w /= w.norm();
    v = w;
    if (std::abs(lambda - prev) <= 1e-10 * std::abs(lambda)) break;
    prev = lambda;
  }
  if (it == 500) throw NumericsError("inverse power iteration did not converge");

  if (v.maxCoeff() < 0.0) v = -v;
  if (v.minCoeff() <= 0.0)
    throw NumericsError("principal eigenfunction lost positivity (non-monotone discretization)");
  EigenResult out;
  out.lambda = lambda;
  out.psi = v / v.maxCoeff();
  out.iterations = it + 1;
  out.residual = (op.A * out.psi - lambda * out.psi).cwiseAbs().maxCoeff();
  if (!(lambda > 0.0)) throw NumericsError("Dirichlet principal eigenvalue must be positive");
  return out;
}

PolicyIterationResult policy_iteration_eigen(const SwitchingModel& model,
                                             const DomainGeometry& domain, const Grid& grid,
                                             double eps, int mode, int max_sweeps) {
  (void)domain;
  if (!model.controls) throw ConfigError("policy iteration needs a control family in the config");
  const ControlFamily& fam = *model.controls;
  const std::vector<double>& controls = fam.control_sets[static_cast<std::size_t>(mode)];
  const int n_int = grid.interior_count();
  const int d = grid.dim();

  PolicyIterationResult out;
  out.policy.assign(static_cast<std::size_t>(n_int), controls[0]);

  auto assemble_policy = [&]() {
    return assemble(model, grid, eps, mode, [&](int k, int id, const Vector& x) {
      (void)k;
      return fam.drift_at(mode, x, out.policy[static_cast<std::size_t>(id)]);
    });
  };

  double best_lambda = kInfinity;
  std::vector<double> best_policy = out.policy;
  EigenResult best_eig;

  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    EigenResult eig = principal_eigen(assemble_policy());
    out.lambda_trace.push_back(eig.lambda);
    out.sweeps = sweep + 1;
    if (eig.lambda < best_lambda) {
      best_lambda = eig.lambda;
      best_policy = out.policy;
      best_eig = eig;
    }

    // pointwise selector with the upwind gradient of the eigenfunction
    int changes = 0;
    for (int id = 0; id < n_int; ++id) {
      const Vector x = grid.point(id);
      auto psi_at = [&](const Grid::Leg& leg) {
        return leg.interior ? eig.psi[leg.neighbor_id] : 0.0;  // zero Dirichlet
      };
      double best_pair = -kInfinity;
      double best_u = out.policy[static_cast<std::size_t>(id)];
      double current_pair = -kInfinity;
      for (double u : controls) {
        Vector f = fam.drift_at(mode, x, u);
        double pairing = 0.0;
        for (int ax = 0; ax < d; ++ax) {
          const double h = grid.spacing(ax);
          const double dplus = (psi_at(grid.leg(id, ax, 1)) - eig.psi[id]) / h;
          const double dminus = (eig.psi[id] - psi_at(grid.leg(id, ax, 0))) / h;
          pairing += std::max(f[ax], 0.0) * dplus - std::max(-f[ax], 0.0) * dminus;
        }
        if (u == out.policy[static_cast<std::size_t>(id)]) current_pair = pairing;
        if (pairing > best_pair + 1e-15) {
          best_pair = pairing;
          best_u = u;
        }
      }
      // strict improvement keeps the iteration deterministic and finite
      if (best_pair > current_pair + 1e-12 * (1.0 + std::abs(current_pair)) &&
          best_u != out.policy[static_cast<std::size_t>(id)]) {
        out.policy[static_cast<std::size_t>(id)] = best_u;
        ++changes;
      }
    }
    if (changes == 0) {
      out.converged = true;
      out.eig = eig;
      return out;
    }
  }
  // oscillation: fall back to the best policy seen
  out.policy = best_policy;
  out.eig = best_eig;
  out.converged = false;
  return out;
}

std::vector<LimitStudyRow> epsilon_limit_study(const SwitchingModel& model,
                                               const DomainGeometry& domain,
                                               const BoundaryData& boundary,
                                               const EpsilonLadder& ladder,
                                               const std::vector<Vector>& probes,
                                               const Vector& ybar, int k0, double grid_h,
                                               JumpScaling scaling) {
  const double limit = boundary.value(k0, ybar);
  Grid grid = Grid::make(domain, grid_h);
  std::vector<LimitStudyRow> rows;
  for (double eps : ladder.eps) {
    SwitchingModel rung =
        scaling == JumpScaling::Accelerated ? model.with_rate_scale(1.0 / eps) : model;
    DiscreteOperator op = discretize(rung, domain, grid, eps);
    PdeSolution sol = solve_dirichlet(op, boundary);
    for (int k = 0; k < model.n; ++k) {
      for (const Vector& probe : probes) {
        LimitStudyRow row;
        row.eps = eps;
        row.mode = k;
        row.probe = probe;
        row.psi = sol.value(grid, k, probe);
        row.distance = std::abs(row.psi - limit);
        rows.push_back(std::move(row));
      }
    }
  }
  return rows;
}

}  // namespace exitlab::pde
