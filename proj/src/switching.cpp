#include "exitlab/switching.hpp"

#include <cmath>

#include <Eigen/LU>

namespace exitlab::switching {

Matrix generator_matrix(const SwitchingModel& model, const Vector& x) {
  const int n = model.n;
  if (n == 1) return Matrix::Zero(1, 1);
  Matrix g = model.rate_matrix(x);
  for (int k = 0; k < n; ++k) g(k, k) = -g.row(k).sum();
  return g;
}

Vector stationary_distribution(const Matrix& generator) {
  const int n = static_cast<int>(generator.rows());
  if (n == 1) return Vector::Constant(1, 1.0);
  Matrix system = generator.transpose();
  system.row(n - 1).setOnes();
  Vector rhs = Vector::Zero(n);
  rhs[n - 1] = 1.0;
  Eigen::PartialPivLU<Matrix> lu(system);
  Vector omega = lu.solve(rhs);
  double residual = (omega.transpose() * generator).cwiseAbs().maxCoeff();
  double scale = std::max(1.0, generator.cwiseAbs().maxCoeff());
  if (!(residual <= 1e-9 * scale))
    throw NumericsError("stationary distribution solve failed, residual " +
                        std::to_string(residual));
  for (int k = 0; k < n; ++k)
    if (!(omega[k] > 0.0))
      throw NumericsError("stationary distribution has a nonpositive entry");
  omega /= omega.sum();
  return omega;
}

Vector averaged_field(const SwitchingModel& model, const Vector& x) {
  if (model.n == 1) return model.modes[0].drift_at(x);
  Vector omega = stationary_distribution(generator_matrix(model, x));
  Vector f = Vector::Zero(model.d);
  for (int k = 0; k < model.n; ++k)
    f += omega[k] * model.modes[static_cast<std::size_t>(k)].drift_at(x);
  return f;
}

namespace {

Vector rk4_step(const VectorFieldFn& field, const Vector& x, double h) {
  Vector k1 = field(x);
  Vector k2 = field(x + 0.5 * h * k1);
  Vector k3 = field(x + 0.5 * h * k2);
  Vector k4 = field(x + h * k3);
  return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

}  // namespace

Flow flow(const VectorFieldFn& field, const Vector& x0, double T, double dt) {
  if (!(dt > 0.0)) throw ConfigError("flow: dt must be positive");
  if (T < 0.0) throw ConfigError("flow: T must be nonnegative");
  Flow out;
  out.t.push_back(0.0);
  out.x.push_back(x0);
  double t = 0.0;
  Vector x = x0;
  while (t < T) {
    double h = std::min(dt, T - t);
    Vector next = rk4_step(field, x, h);
    if (!next.allFinite()) break;  // keep the last valid state
    x = next;
    t += h;
    out.t.push_back(t);
    out.x.push_back(x);
  }
  return out;
}

InvariantSetReport invariant_set_check(const VectorFieldFn& field, const DomainGeometry& domain,
                                       const std::vector<Vector>& starts, double T, double dt) {
  InvariantSetReport rep;
  const double tol = 1e-12 * std::max(1.0, domain.diameter());
  for (const Vector& x0 : starts) {
    Flow f = flow(field, x0, T, dt);
    bool inside = true;
    double escape = kInfinity;
    for (std::size_t i = 0; i < f.x.size(); ++i) {
      if (domain.level(f.x[i]) > tol) {
        inside = false;
        escape = f.t[i];
        break;
      }
    }
    inside = inside && f.t.back() >= T - 1e-12;
    rep.contained.push_back(inside);
    rep.escape_time.push_back(escape);
    rep.any_contained = rep.any_contained || inside;
  }
  return rep;
}

}  // namespace exitlab::switching
