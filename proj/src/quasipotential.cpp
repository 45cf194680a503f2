#include "exitlab/quasipotential.hpp"

#include <algorithm>
#include <cmath>
#include <deque>

#include "exitlab/parallel.hpp"
#include "exitlab/switching.hpp"

namespace exitlab::qp {

namespace {

using action::DiscretizedPath;
using action::HamiltonianEvaluator;

// Discrete contraction action over a fixed time grid with endpoints
// pinned. Decision variables are the interior nodes, stacked. Each
// segment keeps the inner maximizer of rho as a warm start for the next
// evaluation at nearby data.
class PathObjective {
 public:
  PathObjective(const SwitchingModel& model, Vector x0, Vector y, double T, int N)
      : model_(model),
        x0_(std::move(x0)),
        y_(std::move(y)),
        T_(T),
        N_(N),
        d_(model.d),
        dt_(T / (N - 1)),
        warm_(static_cast<std::size_t>(N - 1), Vector::Zero(model.d)) {}

  int vars() const { return (N_ - 2) * d_; }
  double dt() const { return dt_; }

  const Vector& node(const Vector& z, int i) const {
    if (i == 0) return x0_;
    if (i == N_ - 1) return y_;
    scratch_ = z.segment(static_cast<Index>((i - 1) * d_), d_);
    return scratch_;
  }

  double segment(const Vector& z, int i) const {
    Vector a = node(z, i);
    Vector b = node(z, i + 1);
    return segment_explicit(i, a, b);
  }

  double segment_explicit(int i, const Vector& a, const Vector& b) const {
    Vector mid = 0.5 * (a + b);
    Vector q = (b - a) / dt_;
    HamiltonianEvaluator ev(model_, mid);
    action::LegendreResult r = ev.rho(q, &warm_[static_cast<std::size_t>(i)]);
    warm_[static_cast<std::size_t>(i)] = r.maximizer_p;
    return r.value * dt_;
  }

  double value(const Vector& z) const {
    double total = 0.0;
    for (int i = 0; i < N_ - 1; ++i) total += segment(z, i);
    return total;
  }

  // Central differences; a node coordinate only touches its two
  // adjacent segments.
  Vector gradient(const Vector& z, double h) const {
    Vector g(vars());
    for (int i = 1; i <= N_ - 2; ++i) {
      for (int j = 0; j < d_; ++j) {
        double plus = 0.0, minus = 0.0;
        for (int side = 0; side < 2; ++side) {
          Vector zp = z;
          zp[static_cast<Index>((i - 1) * d_ + j)] += side == 0 ? h : -h;
          double v = segment(zp, i - 1) + segment(zp, i);
          (side == 0 ? plus : minus) = v;
        }
        g[static_cast<Index>((i - 1) * d_ + j)] = (plus - minus) / (2.0 * h);
      }
    }
    return g;
  }

  DiscretizedPath to_path(const Vector& z) const {
    DiscretizedPath path;
    path.t.resize(static_cast<std::size_t>(N_));
    path.phi.resize(static_cast<std::size_t>(N_));
    for (int i = 0; i < N_; ++i) {
      path.t[static_cast<std::size_t>(i)] = i * dt_;
      path.phi[static_cast<std::size_t>(i)] = node(z, i);
    }
    return path;
  }

  Vector pack(const DiscretizedPath& path) const {
    Vector z(vars());
    for (int i = 1; i <= N_ - 2; ++i)
      z.segment(static_cast<Index>((i - 1) * d_), d_) = path.phi[static_cast<std::size_t>(i)];
    return z;
  }

 private:
  const SwitchingModel& model_;
  Vector x0_, y_;
  double T_;
  int N_, d_;
  double dt_;
  mutable std::vector<Vector> warm_;
  mutable Vector scratch_;
};

struct LbfgsOutcome {
  Vector z;
  double value = kInfinity;
  double grad_norm = 0.0;
  bool converged = false;
  int iterations = 0;
};

LbfgsOutcome lbfgs_minimize(const PathObjective& obj, Vector z0, double fd_step, double gtol,
                            int max_iters) {
  const int memory = 8;
  std::deque<Vector> s_hist, y_hist;
  std::deque<double> rho_hist;

  Vector z = std::move(z0);
  double f = obj.value(z);
  Vector g = obj.gradient(z, fd_step);

  LbfgsOutcome out;
  int it = 0;
  for (; it < max_iters; ++it) {
    double gnorm = g.cwiseAbs().maxCoeff();
    if (gnorm <= gtol) {
      out.converged = true;
      break;
    }
    // two-loop recursion
    Vector dir = -g;
    std::vector<double> alpha(s_hist.size());
    for (int k = static_cast<int>(s_hist.size()) - 1; k >= 0; --k) {
      alpha[static_cast<std::size_t>(k)] =
          rho_hist[static_cast<std::size_t>(k)] * s_hist[static_cast<std::size_t>(k)].dot(dir);
      dir -= alpha[static_cast<std::size_t>(k)] * y_hist[static_cast<std::size_t>(k)];
    }
    if (!s_hist.empty()) {
      const Vector& s = s_hist.back();
      const Vector& yv = y_hist.back();
      dir *= s.dot(yv) / yv.dot(yv);
    }
    for (std::size_t k = 0; k < s_hist.size(); ++k) {
      double beta = rho_hist[k] * y_hist[k].dot(dir);
      dir += (alpha[k] - beta) * s_hist[k];
    }
    if (dir.dot(g) >= 0.0) dir = -g;  // safeguard: keep a descent direction

    // Armijo backtracking
    double step = 1.0;
    const double slope = dir.dot(g);
    double f_new = 0.0;
    Vector z_new;
    bool accepted = false;
    for (int bt = 0; bt < 40; ++bt) {
      z_new = z + step * dir;
      f_new = obj.value(z_new);
      if (f_new <= f + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;  // stagnation

    Vector g_new = obj.gradient(z_new, fd_step);
    Vector s = z_new - z;
    Vector yv = g_new - g;
    double sy = s.dot(yv);
    if (sy > 1e-12 * s.norm() * yv.norm()) {
      s_hist.push_back(s);
      y_hist.push_back(yv);
      rho_hist.push_back(1.0 / sy);
      if (static_cast<int>(s_hist.size()) > memory) {
        s_hist.pop_front();
        y_hist.pop_front();
        rho_hist.pop_front();
      }
    }
    z = std::move(z_new);
    f = f_new;
    g = std::move(g_new);
  }
  out.z = std::move(z);
  out.value = f;
  out.grad_norm = g.cwiseAbs().maxCoeff();
  out.iterations = it;
  return out;
}

DiscretizedPath straight_chord(const Vector& x0, const Vector& y, double T, int N) {
  DiscretizedPath path;
  for (int i = 0; i < N; ++i) {
    double s = static_cast<double>(i) / (N - 1);
    path.t.push_back(s * T);
    path.phi.push_back(x0 + s * (y - x0));
  }
  return path;
}

// The averaged flow from y, run forward for time T and then reversed:
// close to the minimizer whenever the extremal shadows the time-reversed
// relaxation toward the equilibrium.
DiscretizedPath reversed_flow_init(const SwitchingModel& model, const Vector& x0, const Vector& y,
                                   double T, int N) {
  const double dt = T / (N - 1);
  switching::Flow flow = switching::flow(
      [&](const Vector& x) { return switching::averaged_field(model, x); }, y, T, dt / 4.0);
  auto at_time = [&](double t) {
    std::size_t idx = std::min(flow.x.size() - 1,
                               static_cast<std::size_t>(std::lround(t / (dt / 4.0))));
    return flow.x[idx];
  };
  DiscretizedPath path;
  for (int i = 0; i < N; ++i) {
    path.t.push_back(i * dt);
    path.phi.push_back(at_time(T - i * dt));
  }
  path.phi.front() = x0;
  path.phi.back() = y;
  return path;
}

}  // namespace

PathOptResult minimize_action_path(const SwitchingModel& model, const DomainGeometry& domain,
                                   const Vector& x0, const Vector& y, double T, int N,
                                   const std::optional<DiscretizedPath>& init) {
  if (N < 8) throw ConfigError("minimize_action_path needs at least 8 nodes");
  if (!(T > 0.0)) throw ConfigError("transit time must be positive");
  const double fd_step = 1e-6 * std::max(domain.diameter(), 1e-6);
  const double gtol = 1e-5;
  const int max_iters = 220;

  std::vector<DiscretizedPath> starts;
  if (init) {
    if (static_cast<int>(init->t.size()) != N)
      throw ConfigError("initial path node count disagrees with N");
    starts.push_back(*init);
  } else {
    starts.push_back(straight_chord(x0, y, T, N));
    starts.push_back(reversed_flow_init(model, x0, y, T, N));
  }

  PathOptResult best;
  for (const DiscretizedPath& start : starts) {
    PathObjective obj(model, x0, y, T, N);
    LbfgsOutcome r = lbfgs_minimize(obj, obj.pack(start), fd_step, gtol, max_iters);
    if (r.value < best.value) {
      best.path = obj.to_path(r.z);
      best.value = r.value;
      best.converged = r.converged;
      best.grad_norm = r.grad_norm;
      best.iterations = r.iterations;
    }
  }
  return best;
}

std::vector<double> default_T_grid() {
  std::vector<double> grid;
  const double lo = 0.5, hi = 32.0;
  for (int i = 0; i < 8; ++i)
    grid.push_back(lo * std::pow(hi / lo, static_cast<double>(i) / 7.0));
  return grid;
}

QuasipotentialResult quasipotential_boundary(const SwitchingModel& model,
                                             const DomainGeometry& domain, const Vector& x0,
                                             const std::vector<Vector>& mesh,
                                             const std::vector<double>& T_grid, int N,
                                             int workers) {
  if (mesh.empty()) throw ConfigError("boundary mesh must not be empty");
  if (T_grid.empty()) throw ConfigError("transit-time grid must not be empty");
  Vector fav = switching::averaged_field(model, x0);
  if (fav.cwiseAbs().maxCoeff() >= 1e-6)
    throw ConfigError("x0 is not an equilibrium of the averaged field (|f_av(x0)| >= 1e-6)");

  struct Cell {
    double value = kInfinity;
    bool converged = false;
    DiscretizedPath path;
  };
  std::vector<Cell> cells(mesh.size() * T_grid.size());
  parallel_for(cells.size(), workers, [&](std::size_t task) {
    const std::size_t j = task / T_grid.size();
    const std::size_t ti = task % T_grid.size();
    PathOptResult r = minimize_action_path(model, domain, x0, mesh[j], T_grid[ti], N);
    cells[task] = {r.value, r.converged, std::move(r.path)};
  });

  QuasipotentialResult out;
  out.mesh = mesh;
  out.V.assign(mesh.size(), kInfinity);
  out.T_star.assign(mesh.size(), 0.0);
  out.column_converged.assign(mesh.size(), false);
  std::vector<std::size_t> best_cell(mesh.size(), 0);
  for (std::size_t j = 0; j < mesh.size(); ++j) {
    for (std::size_t ti = 0; ti < T_grid.size(); ++ti) {
      const Cell& c = cells[j * T_grid.size() + ti];
      if (c.value < out.V[j]) {
        out.V[j] = c.value;
        out.T_star[j] = T_grid[ti];
        out.column_converged[j] = c.converged;
        best_cell[j] = j * T_grid.size() + ti;
      }
    }
    if (std::isinf(out.V[j]))
      throw NumericsError("all transit times produced an infinite action for a mesh point");
  }

  out.argmin = 0;
  for (std::size_t j = 1; j < mesh.size(); ++j)
    if (out.V[j] < out.V[static_cast<std::size_t>(out.argmin)]) out.argmin = static_cast<int>(j);
  out.ybar = mesh[static_cast<std::size_t>(out.argmin)];
  out.extremal = cells[best_cell[static_cast<std::size_t>(out.argmin)]].path;
  out.T_extremal = out.T_star[static_cast<std::size_t>(out.argmin)];

  double second = kInfinity;
  for (std::size_t j = 0; j < mesh.size(); ++j)
    if (static_cast<int>(j) != out.argmin) second = std::min(second, out.V[j]);
  out.separation = std::isinf(second) ? 0.0 : second - out.V[static_cast<std::size_t>(out.argmin)];
  return out;
}

As1Report verify_as1(const SwitchingModel& model, const DomainGeometry& domain, const Vector& x0,
                     const std::vector<Vector>& mesh, const QuasipotentialResult& qp,
                     const As1Settings& settings) {
  As1Report rep;
  // (a) the averaged field vs the outward normal on the mesh
  rep.worst_margin = -kInfinity;
  for (const Vector& y : mesh) {
    double v = switching::averaged_field(model, y).dot(domain.outward_normal(y));
    if (v > rep.worst_margin) {
      rep.worst_margin = v;
      rep.worst_point = y;
    }
  }
  rep.inward_ok = rep.worst_margin < 0.0;

  // (b) flow convergence toward x0 from a deterministic start sample
  auto [lo, hi] = domain.bounding_box();
  rep.flow_total = settings.flow_starts;
  for (int s = 0; s < settings.flow_starts; ++s) {
    Vector start(model.d);
    // low-discrepancy-ish lattice inside the bounding box
    for (int a = 0; a < model.d; ++a) {
      double frac = std::fmod(0.5 + (s + 1) * 0.6180339887498949 * (a + 1), 1.0);
      start[a] = lo[a] + frac * (hi[a] - lo[a]);
    }
    if (domain.level(start) >= 0.0) {
      --rep.flow_total;
      continue;
    }
    switching::Flow fl = switching::flow(
        [&](const Vector& x) { return switching::averaged_field(model, x); }, start,
        settings.flow_T, settings.flow_dt);
    if ((fl.endpoint() - x0).norm() <= settings.converge_tol) ++rep.flow_converged;
  }
  rep.unique_equilibrium_evidence = rep.flow_total > 0 && rep.flow_converged == rep.flow_total;

  // (c) separation of the V-minimum
  rep.separation = qp.separation;
  rep.separation_ok = rep.separation > settings.separation_threshold;

  if (rep.inward_ok && rep.unique_equilibrium_evidence && rep.separation_ok)
    rep.verdict = Verdict::Holds;
  else if (rep.inward_ok && rep.unique_equilibrium_evidence)
    rep.verdict = Verdict::Degenerate;
  else
    rep.verdict = Verdict::Fails;
  return rep;
}

ExitModePrediction verify_as2(const SwitchingModel& model, const Vector& ybar,
                              const DomainGeometry& domain) {
  ExitModePrediction pred;
  Vector normal = domain.outward_normal(ybar);
  pred.pairings.resize(static_cast<std::size_t>(model.n));
  for (int k = 0; k < model.n; ++k)
    pred.pairings[static_cast<std::size_t>(k)] =
        model.modes[static_cast<std::size_t>(k)].drift_at(ybar).dot(normal);
  pred.k0 = 0;
  for (int k = 1; k < model.n; ++k)
    if (pred.pairings[static_cast<std::size_t>(k)] >
        pred.pairings[static_cast<std::size_t>(pred.k0)])
      pred.k0 = k;
  pred.generic = model.n >= 1;
  for (int k = 0; k < model.n; ++k) {
    if (k == pred.k0) continue;
    double margin = pred.pairings[static_cast<std::size_t>(pred.k0)] -
                    pred.pairings[static_cast<std::size_t>(k)];
    pred.margins.push_back(margin);
    if (margin <= 1e-9) pred.generic = false;
  }
  return pred;
}

}  // namespace exitlab::qp
