#include "exitlab/action.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Eigenvalues>

#include "exitlab/switching.hpp"

namespace exitlab::action {

namespace {

constexpr int kMaxPowerIters = 10000;
constexpr double kBetaSumTol = 1e-9;
constexpr double kBetaNegTol = 1e-12;

PrincipalEig dense_principal(const Matrix& H) {
  Eigen::EigenSolver<Matrix> es(H);
  if (es.info() != Eigen::Success) throw NumericsError("dense eigensolver failed");
  int n = static_cast<int>(H.rows());
  int best = 0;
  for (int i = 1; i < n; ++i)
    if (es.eigenvalues()[i].real() > es.eigenvalues()[best].real()) best = i;
  PrincipalEig out;
  out.lambda = es.eigenvalues()[best].real();
  out.right = es.eigenvectors().col(best).real();
  if (out.right.sum() < 0.0) out.right = -out.right;

  Eigen::EigenSolver<Matrix> esT(H.transpose());
  if (esT.info() != Eigen::Success) throw NumericsError("dense eigensolver failed");
  int bestT = 0;
  for (int i = 1; i < n; ++i)
    if (esT.eigenvalues()[i].real() > esT.eigenvalues()[bestT].real()) bestT = i;
  out.left = esT.eigenvectors().col(bestT).real();
  if (out.left.sum() < 0.0) out.left = -out.left;
  return out;
}

// Power iteration for the Perron pair of an entrywise-positive matrix.
// Returns false when the residual target was not met.
bool power_perron(const Matrix& B, double tol, Vector* v, double* mu, int* iters) {
  *v = Vector::Ones(B.rows());
  double m = 0.0;
  for (int it = 0; it < kMaxPowerIters; ++it) {
    Vector w = B * (*v);
    double norm = w.cwiseAbs().maxCoeff();
    if (!(norm > 0.0)) throw NumericsError("power iteration collapsed to zero");
    w /= norm;
    m = w.dot(B * w) / w.squaredNorm();
    double residual = (B * w - m * w).cwiseAbs().maxCoeff();
    *v = w;
    if (residual <= tol) {
      *mu = m;
      *iters = it + 1;
      return true;
    }
  }
  *mu = m;
  *iters = kMaxPowerIters;
  return false;
}

}  // namespace

PrincipalEig principal_eigen(const Matrix& H) {
  const int n = static_cast<int>(H.rows());
  if (n == 1) {
    PrincipalEig out;
    out.lambda = H(0, 0);
    out.right = Vector::Ones(1);
    out.left = Vector::Ones(1);
    out.iterations = 1;
    return out;
  }
  const double scale = std::max(1.0, H.cwiseAbs().maxCoeff());
  const double tol = 1e-12 * scale;
  const double shift = 1.0 + H.diagonal().cwiseAbs().maxCoeff();
  Matrix B = H + shift * Matrix::Identity(n, n);

  PrincipalEig out;
  double mu_r = 0.0, mu_l = 0.0;
  int it_r = 0, it_l = 0;
  bool ok = power_perron(B, tol, &out.right, &mu_r, &it_r);
  ok = power_perron(B.transpose(), tol, &out.left, &mu_l, &it_l) && ok;
  out.iterations = it_r + it_l;
  out.lambda = mu_r - shift;

  if (!ok) {
    if (n <= 8) {
      out = dense_principal(H);
    } else {
      throw NumericsError("principal eigenvalue power iteration did not converge");
    }
  }

  for (int k = 0; k < n; ++k) {
    if (!(out.right[k] > 0.0) || !(out.left[k] > 0.0))
      throw NumericsError("Perron eigenvector lost positivity (is the matrix Metzler?)");
  }
  out.right /= out.right.maxCoeff();
  out.left /= out.left.dot(out.right);
  out.residual = (H * out.right - out.lambda * out.right).cwiseAbs().maxCoeff();
  return out;
}

HamiltonianEvaluator::HamiltonianEvaluator(const SwitchingModel& model, const Vector& x)
    : n_(model.n), d_(model.d) {
  a_.reserve(static_cast<std::size_t>(n_));
  f_.reserve(static_cast<std::size_t>(n_));
  for (int k = 0; k < n_; ++k) {
    a_.push_back(model.modes[static_cast<std::size_t>(k)].a_at(x));
    f_.push_back(model.modes[static_cast<std::size_t>(k)].drift_at(x));
  }
  gamma_ = switching::generator_matrix(model, x);
}

HamiltonianEvaluator::HamiltonianEvaluator(const SwitchingModel& model, const Vector& x,
                                           const Matrix& offdiag_rates)
    : n_(model.n), d_(model.d) {
  for (int k = 0; k < n_; ++k) {
    a_.push_back(model.modes[static_cast<std::size_t>(k)].a_at(x));
    f_.push_back(model.modes[static_cast<std::size_t>(k)].drift_at(x));
  }
  gamma_ = offdiag_rates;
  for (int k = 0; k < n_; ++k) {
    gamma_(k, k) = 0.0;
    double row = 0.0;
    for (int m = 0; m < n_; ++m) {
      if (m == k) continue;
      if (!(gamma_(k, m) > 0.0)) throw ConfigError("time-dependent rates must be positive");
      row += gamma_(k, m);
    }
    gamma_(k, k) = -row;
  }
}

Matrix HamiltonianEvaluator::H(const Vector& p, const Vector& alpha) const {
  Matrix h = gamma_;
  for (int k = 0; k < n_; ++k) {
    const auto ku = static_cast<std::size_t>(k);
    h(k, k) += 0.5 * p.dot(a_[ku] * p) + p.dot(f_[ku]) + alpha[k];
  }
  return h;
}

PrincipalEig HamiltonianEvaluator::eig(const Vector& p, const Vector& alpha) const {
  return principal_eigen(H(p, alpha));
}

EigGrad HamiltonianEvaluator::eig_grad(const Vector& p, const Vector& alpha) const {
  PrincipalEig e = eig(p, alpha);
  EigGrad g;
  g.lambda = e.lambda;
  g.grad_alpha = e.left.cwiseProduct(e.right);  // left . right = 1 already
  g.grad_p = Vector::Zero(d_);
  for (int k = 0; k < n_; ++k) {
    const auto ku = static_cast<std::size_t>(k);
    g.grad_p += g.grad_alpha[k] * (a_[ku] * p + f_[ku]);
  }
  return g;
}

namespace {

// Barzilai-Borwein ascent with an Armijo backtracking safeguard for the
// smooth concave objectives F(z) = c.z - lambda(z). Gradients are exact
// (eigenvalue perturbation), so a tight gradient tolerance is cheap.
struct AscentResult {
  Vector z;
  double value = 0.0;
  double grad_norm = 0.0;
  bool converged = false;
  int iterations = 0;
};

template <class Eval>
AscentResult bb_ascent(const Eval& eval, Vector z0, double gtol, int max_iters) {
  AscentResult out;
  Vector z = std::move(z0);
  auto [F, g] = eval(z);
  double step = 1.0 / (1.0 + g.norm());
  int it = 0;
  bool converged = false;
  for (; it < max_iters; ++it) {
    double gnorm = g.cwiseAbs().maxCoeff();
    if (gnorm <= gtol) {
      converged = true;
      break;
    }
    double s = step;
    Vector z_new;
    double F_new = 0.0;
    Vector g_new;
    bool accepted = false;
    for (int bt = 0; bt < 60; ++bt) {
      z_new = z + s * g;
      std::tie(F_new, g_new) = eval(z_new);
      if (F_new >= F + 1e-4 * s * g.squaredNorm()) {
        accepted = true;
        break;
      }
      s *= 0.5;
    }
    if (!accepted) break;  // step collapsed: stagnation near the optimum
    Vector sv = z_new - z;
    Vector yv = g_new - g;
    double denom = -sv.dot(yv);  // positive under strict concavity
    step = denom > 1e-300 ? std::clamp(sv.squaredNorm() / denom, 1e-12, 1e12) : 2.0 * s;
    z = std::move(z_new);
    F = F_new;
    g = std::move(g_new);
  }
  out.z = std::move(z);
  out.value = F;
  out.grad_norm = g.cwiseAbs().maxCoeff();
  out.converged = converged;
  out.iterations = it;
  return out;
}

}  // namespace

LegendreResult HamiltonianEvaluator::eta(const Vector& q, const Vector& beta,
                                         const Vector* warm_p, const Vector* warm_alpha) const {
  LegendreResult out;
  // Finiteness gate: the alpha-shift property forces +infinity off the
  // probability simplex.
  bool feasible = std::abs(beta.sum() - 1.0) <= kBetaSumTol;
  for (int k = 0; k < n_; ++k) feasible = feasible && beta[k] >= -kBetaNegTol;
  if (!feasible) {
    out.value = kInfinity;
    out.converged = true;
    return out;
  }

  const int m = d_ + (n_ - 1);  // gauge alpha_n = 0
  Vector z0 = Vector::Zero(m);
  if (warm_p != nullptr) z0.head(d_) = *warm_p;
  if (warm_alpha != nullptr && n_ > 1)
    z0.tail(n_ - 1) = warm_alpha->head(n_ - 1).array() - (*warm_alpha)[n_ - 1];

  auto eval = [&](const Vector& z) {
    Vector p = z.head(d_);
    Vector alpha = Vector::Zero(n_);
    if (n_ > 1) alpha.head(n_ - 1) = z.tail(n_ - 1);
    EigGrad eg = eig_grad(p, alpha);
    double F = q.dot(p) + beta.dot(alpha) - eg.lambda;
    Vector grad(m);
    grad.head(d_) = q - eg.grad_p;
    for (int k = 0; k + 1 < n_; ++k) grad[d_ + k] = beta[k] - eg.grad_alpha[k];
    return std::make_pair(F, grad);
  };

  double gtol = 1e-9 * (1.0 + q.cwiseAbs().maxCoeff());
  AscentResult r = bb_ascent(eval, z0, gtol, 2000);
  out.value = std::max(r.value, 0.0);  // (p, alpha) = 0 gives objective 0 exactly
  out.maximizer_p = r.z.head(d_);
  out.maximizer_alpha = Vector::Zero(n_);
  if (n_ > 1) out.maximizer_alpha.head(n_ - 1) = r.z.tail(n_ - 1);
  out.converged = r.converged;
  out.grad_norm = r.grad_norm;
  out.iterations = r.iterations;
  return out;
}

LegendreResult HamiltonianEvaluator::rho(const Vector& q, const Vector* warm_p) const {
  Vector z0 = warm_p != nullptr ? *warm_p : Vector::Zero(d_);
  const Vector alpha0 = Vector::Zero(n_);
  auto eval = [&](const Vector& p) {
    EigGrad eg = eig_grad(p, alpha0);
    return std::make_pair(q.dot(p) - eg.lambda, Vector(q - eg.grad_p));
  };
  double gtol = 1e-9 * (1.0 + q.cwiseAbs().maxCoeff());
  AscentResult r = bb_ascent(eval, z0, gtol, 2000);
  LegendreResult out;
  out.value = std::max(r.value, 0.0);
  out.maximizer_p = r.z;
  out.maximizer_alpha = alpha0;
  out.converged = r.converged;
  out.grad_norm = r.grad_norm;
  out.iterations = r.iterations;
  return out;
}

Matrix hamiltonian(const SwitchingModel& model, const Vector& x, const Vector& p,
                   const Vector& alpha) {
  return HamiltonianEvaluator(model, x).H(p, alpha);
}

EigGrad eigen_and_grad(const SwitchingModel& model, const Vector& x, const Vector& p,
                       const Vector& alpha) {
  return HamiltonianEvaluator(model, x).eig_grad(p, alpha);
}

double legendre_eta(const SwitchingModel& model, const Vector& x, const Vector& q,
                    const Vector& beta) {
  return HamiltonianEvaluator(model, x).eta(q, beta).value;
}

double legendre_rho(const SwitchingModel& model, const Vector& x, const Vector& q) {
  return HamiltonianEvaluator(model, x).rho(q).value;
}

namespace {

void check_grid(const DiscretizedPath& path) {
  if (path.t.size() < 2 || path.phi.size() != path.t.size())
    throw ConfigError("path needs at least two nodes and matching state count");
  for (std::size_t i = 1; i < path.t.size(); ++i)
    if (!(path.t[i] > path.t[i - 1]))
      throw ConfigError("path time grid must be strictly increasing");
  if (path.mu && path.mu->size() != path.t.size())
    throw ConfigError("occupation nodes must match the time grid");
}

}  // namespace

double path_action_S(const SwitchingModel& model, const DiscretizedPath& path) {
  check_grid(path);
  if (!path.mu) throw ConfigError("path_action_S needs occupation nodes");
  double total = 0.0;
  for (int i = 0; i < path.segments(); ++i) {
    const auto iu = static_cast<std::size_t>(i);
    double dt = path.t[iu + 1] - path.t[iu];
    Vector mid = 0.5 * (path.phi[iu] + path.phi[iu + 1]);
    Vector q = (path.phi[iu + 1] - path.phi[iu]) / dt;
    Vector beta = ((*path.mu)[iu + 1] - (*path.mu)[iu]) / dt;
    HamiltonianEvaluator ev(model, mid);
    double v = ev.eta(q, beta).value;
    if (std::isinf(v)) return kInfinity;
    total += v * dt;
  }
  return total;
}

double path_action_I(const SwitchingModel& model, const DiscretizedPath& path) {
  check_grid(path);
  double total = 0.0;
  for (int i = 0; i < path.segments(); ++i) {
    const auto iu = static_cast<std::size_t>(i);
    double dt = path.t[iu + 1] - path.t[iu];
    Vector mid = 0.5 * (path.phi[iu] + path.phi[iu + 1]);
    Vector q = (path.phi[iu + 1] - path.phi[iu]) / dt;
    total += HamiltonianEvaluator(model, mid).rho(q).value * dt;
  }
  return total;
}

Matrix hamiltonian_td(const SwitchingModel& model, const RatesClock& clock, double t,
                      const Vector& x, const Vector& p, const Vector& alpha) {
  return HamiltonianEvaluator(model, x, clock.offdiag(t)).H(p, alpha);
}

double path_action_S_td(const SwitchingModel& model, const RatesClock& clock,
                        const DiscretizedPath& path) {
  check_grid(path);
  if (!path.mu) throw ConfigError("path_action_S_td needs occupation nodes");
  double total = 0.0;
  for (int i = 0; i < path.segments(); ++i) {
    const auto iu = static_cast<std::size_t>(i);
    double dt = path.t[iu + 1] - path.t[iu];
    double tmid = 0.5 * (path.t[iu] + path.t[iu + 1]);
    Vector mid = 0.5 * (path.phi[iu] + path.phi[iu + 1]);
    Vector q = (path.phi[iu + 1] - path.phi[iu]) / dt;
    Vector beta = ((*path.mu)[iu + 1] - (*path.mu)[iu]) / dt;
    HamiltonianEvaluator ev(model, mid, clock.offdiag(tmid));
    double v = ev.eta(q, beta).value;
    if (std::isinf(v)) return kInfinity;
    total += v * dt;
  }
  return total;
}

std::vector<Vector> simplex_grid(int n, double step) {
  int N = static_cast<int>(std::lround(1.0 / step));
  if (N < 1) throw ConfigError("simplex grid step must be at most 1");
  std::vector<Vector> grid;
  Vector current = Vector::Zero(n);
  std::function<void(int, int)> recurse = [&](int k, int remaining) {
    if (k == n - 1) {
      current[k] = static_cast<double>(remaining) / N;
      grid.push_back(current);
      return;
    }
    for (int i = 0; i <= remaining; ++i) {
      current[k] = static_cast<double>(i) / N;
      recurse(k + 1, remaining - i);
    }
  };
  recurse(0, N);
  return grid;
}

EtaRhoReport eta_rho_consistency(const SwitchingModel& model, const Vector& x, const Vector& q,
                                 const std::vector<Vector>& beta_grid, double tol) {
  HamiltonianEvaluator ev(model, x);
  LegendreResult rho = ev.rho(q);
  EtaRhoReport rep;
  rep.rho = rho.value;
  rep.min_eta = kInfinity;
  for (const Vector& beta : beta_grid) {
    LegendreResult eta = ev.eta(q, beta, &rho.maximizer_p, &rho.maximizer_alpha);
    if (eta.value < rep.min_eta) {
      rep.min_eta = eta.value;
      rep.argmin_beta = beta;
    }
  }
  rep.lower_bound_ok = rep.min_eta >= rep.rho - tol;
  return rep;
}

}  // namespace exitlab::action
