#include "exitlab/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

namespace exitlab {

using ordered_json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Fields

ScalarField ScalarField::parse(const std::string& source, const std::vector<std::string>& vars) {
  ScalarField f;
  f.source = source;
  f.var_names = vars;
  f.ast = fieldlang::parse(source, vars);
  f.program = fieldlang::Program::compile(f.ast);
  return f;
}

ScalarField ScalarField::constant(double value, const std::vector<std::string>& vars) {
  std::ostringstream src;
  src.precision(17);
  src << value;
  return parse(src.str(), vars);
}

double ScalarField::operator()(std::span<const double> values) const {
  fieldlang::EvalResult r = program.run(values);
  if (!r.ok())
    throw FieldEvalError(std::string("field '") + source + "': " + r.error);
  return r.value;
}

double ScalarField::operator()(const Vector& x) const {
  return (*this)(std::span<const double>(x.data(), static_cast<std::size_t>(x.size())));
}

void VectorField::eval_into(std::span<const double> values, double* out) const {
  for (std::size_t i = 0; i < components.size(); ++i) {
    fieldlang::EvalResult r = components[i].program.run(values);
    if (!r.ok())
      throw FieldEvalError(std::string("field '") + components[i].source + "': " + r.error);
    out[i] = r.value;
  }
}

Vector VectorField::operator()(const Vector& x) const {
  Vector out(dim());
  eval_into(std::span<const double>(x.data(), static_cast<std::size_t>(x.size())), out.data());
  return out;
}

void SigmaSpec::finalize() {
  constant = true;
  if (kind != Kind::ConstantScalar) {
    for (const auto& e : entries)
      if (!e.is_constant()) constant = false;
  }
  if (constant) {
    Vector origin = Vector::Zero(d);
    constant = false;  // force evaluation path below
    cached = at(origin);
    constant = true;
  }
}

Matrix SigmaSpec::at(const Vector& x) const {
  if (constant) return cached;
  Matrix s = Matrix::Zero(d, d);
  switch (kind) {
    case Kind::ConstantScalar:
      s = scalar * Matrix::Identity(d, d);
      break;
    case Kind::Diagonal:
      for (int i = 0; i < d; ++i) s(i, i) = entries[static_cast<std::size_t>(i)](x);
      break;
    case Kind::Full:
      for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j)
          s(i, j) = entries[static_cast<std::size_t>(i * d + j)](x);
      break;
  }
  return s;
}

Matrix ModeDynamics::a_at(const Vector& x) const {
  Matrix s = sigma.at(x);
  return s * s.transpose();
}

Vector ControlFamily::drift_at(int mode, const Vector& x, double u) const {
  const VectorField& f = controlled_drift[static_cast<std::size_t>(mode)];
  std::vector<double> values(static_cast<std::size_t>(x.size()) + 1);
  for (Index i = 0; i < x.size(); ++i) values[static_cast<std::size_t>(i)] = x[i];
  values.back() = u;
  Vector out(f.dim());
  f.eval_into(values, out.data());
  return out;
}

Matrix SwitchingModel::rate_matrix(const Vector& x) const {
  Matrix g = Matrix::Zero(n, n);
  for (int k = 0; k < n; ++k) {
    for (int m = 0; m < n; ++m) {
      if (k == m) continue;
      double v = (*rates[static_cast<std::size_t>(k)][static_cast<std::size_t>(m)])(x) * rate_scale;
      if (!(v > 0.0))
        throw ConfigError("rates must be strictly positive: gamma(" + std::to_string(k + 1) +
                          "," + std::to_string(m + 1) + ") <= 0 at a sampled state");
      g(k, m) = v;
    }
  }
  return g;
}

void SwitchingModel::rates_row(int k, std::span<const double> x, double* out) const {
  for (int m = 0; m < n; ++m) {
    if (m == k) {
      out[m] = 0.0;
      continue;
    }
    const ScalarField& f = *rates[static_cast<std::size_t>(k)][static_cast<std::size_t>(m)];
    fieldlang::EvalResult r = f.program.run(x);
    if (!r.ok()) throw FieldEvalError(std::string("rate field '") + f.source + "': " + r.error);
    out[m] = r.value * rate_scale;
  }
}

SwitchingModel SwitchingModel::with_rate_scale(double scale) const {
  SwitchingModel m = *this;
  m.rate_scale = scale;
  return m;
}

// ---------------------------------------------------------------------------
// Domain geometry

DomainGeometry DomainGeometry::interval(double lo, double hi) {
  if (!(lo < hi)) throw ConfigError("domain.params: interval needs lo < hi");
  DomainGeometry g;
  g.kind_ = Kind::Interval;
  g.d_ = 1;
  g.bound_lo_ = Vector::Constant(1, lo);
  g.bound_hi_ = Vector::Constant(1, hi);
  return g;
}

DomainGeometry DomainGeometry::box(Vector lo, Vector hi) {
  if (lo.size() != hi.size() || lo.size() < 1) throw ConfigError("domain.params: box lo/hi mismatch");
  for (Index i = 0; i < lo.size(); ++i)
    if (!(lo[i] < hi[i])) throw ConfigError("domain.params: box needs lo < hi per axis");
  DomainGeometry g;
  g.kind_ = Kind::Box;
  g.d_ = static_cast<int>(lo.size());
  g.bound_lo_ = std::move(lo);
  g.bound_hi_ = std::move(hi);
  return g;
}

DomainGeometry DomainGeometry::ball(Vector center, double radius) {
  if (!(radius > 0.0)) throw ConfigError("domain.params: ball needs radius > 0");
  DomainGeometry g;
  g.kind_ = Kind::Ball;
  g.d_ = static_cast<int>(center.size());
  g.center_ = std::move(center);
  g.radius_ = radius;
  g.bound_lo_ = g.center_.array() - radius;
  g.bound_hi_ = g.center_.array() + radius;
  return g;
}

DomainGeometry DomainGeometry::implicit(ScalarField phi, Vector bound_lo, Vector bound_hi) {
  if (bound_lo.size() != bound_hi.size())
    throw ConfigError("domain.params: bounding box lo/hi mismatch");
  DomainGeometry g;
  g.kind_ = Kind::Implicit;
  g.d_ = static_cast<int>(bound_lo.size());
  g.phi_ = std::move(phi);
  g.bound_lo_ = std::move(bound_lo);
  g.bound_hi_ = std::move(bound_hi);
  return g;
}

double DomainGeometry::level(std::span<const double> x) const {
  switch (kind_) {
    case Kind::Interval:
      return std::max(bound_lo_[0] - x[0], x[0] - bound_hi_[0]);
    case Kind::Box: {
      double worst = -kInfinity;
      for (int i = 0; i < d_; ++i) {
        worst = std::max(worst, bound_lo_[i] - x[static_cast<std::size_t>(i)]);
        worst = std::max(worst, x[static_cast<std::size_t>(i)] - bound_hi_[i]);
      }
      return worst;
    }
    case Kind::Ball: {
      double r2 = 0.0;
      for (int i = 0; i < d_; ++i) {
        double dx = x[static_cast<std::size_t>(i)] - center_[i];
        r2 += dx * dx;
      }
      return std::sqrt(r2) - radius_;
    }
    case Kind::Implicit:
      return (*phi_)(x);
  }
  return 0.0;
}

double DomainGeometry::level(const Vector& x) const {
  return level(std::span<const double>(x.data(), static_cast<std::size_t>(x.size())));
}

Vector DomainGeometry::outward_normal(const Vector& y) const {
  switch (kind_) {
    case Kind::Interval: {
      Vector n(1);
      n[0] = (y[0] - bound_lo_[0] < bound_hi_[0] - y[0]) ? -1.0 : 1.0;
      return n;
    }
    case Kind::Box: {
      // Closest face wins.
      int axis = 0, sign = -1;
      double best = kInfinity;
      for (int i = 0; i < d_; ++i) {
        if (y[i] - bound_lo_[i] < best) {
          best = y[i] - bound_lo_[i];
          axis = i;
          sign = -1;
        }
        if (bound_hi_[i] - y[i] < best) {
          best = bound_hi_[i] - y[i];
          axis = i;
          sign = +1;
        }
      }
      Vector n = Vector::Zero(d_);
      n[axis] = sign;
      return n;
    }
    case Kind::Ball: {
      Vector n = y - center_;
      double norm = n.norm();
      if (norm == 0.0) throw NumericsError("outward normal undefined at the ball center");
      return n / norm;
    }
    case Kind::Implicit: {
      double h = 1e-6 * std::max(1.0, diameter());
      fieldlang::GradResult gr = fieldlang::grad(
          phi_->ast, std::span<const double>(y.data(), static_cast<std::size_t>(y.size())), h);
      if (!gr.ok()) throw FieldEvalError(std::string("phi gradient: ") + gr.error);
      double norm = gr.grad.norm();
      if (norm == 0.0) throw NumericsError("phi gradient vanished on the boundary");
      return gr.grad / norm;
    }
  }
  return Vector{};
}

Vector DomainGeometry::project_to_boundary(const Vector& x) const {
  switch (kind_) {
    case Kind::Interval: {
      Vector y(1);
      y[0] = (std::abs(x[0] - bound_lo_[0]) < std::abs(x[0] - bound_hi_[0])) ? bound_lo_[0]
                                                                             : bound_hi_[0];
      return y;
    }
    case Kind::Box: {
      // Clamp to the nearest face.
      Vector y = x.cwiseMax(bound_lo_).cwiseMin(bound_hi_);
      int axis = 0;
      int sign = -1;
      double best = kInfinity;
      for (int i = 0; i < d_; ++i) {
        if (y[i] - bound_lo_[i] < best) {
          best = y[i] - bound_lo_[i];
          axis = i;
          sign = -1;
        }
        if (bound_hi_[i] - y[i] < best) {
          best = bound_hi_[i] - y[i];
          axis = i;
          sign = +1;
        }
      }
      y[axis] = sign < 0 ? bound_lo_[axis] : bound_hi_[axis];
      return y;
    }
    case Kind::Ball: {
      Vector dir = x - center_;
      double norm = dir.norm();
      if (norm == 0.0) throw NumericsError("cannot project the ball center to the boundary");
      return center_ + dir * (radius_ / norm);
    }
    case Kind::Implicit: {
      // Newton along the gradient of phi.
      Vector y = x;
      double scale = std::max(1.0, diameter());
      for (int it = 0; it < 60; ++it) {
        double v = level(y);
        if (std::abs(v) <= 1e-10 * scale) return y;
        Vector n = outward_normal(y);
        double h = 1e-6 * scale;
        fieldlang::GradResult gr = fieldlang::grad(
            phi_->ast, std::span<const double>(y.data(), static_cast<std::size_t>(y.size())), h);
        if (!gr.ok()) throw FieldEvalError(std::string("phi gradient: ") + gr.error);
        double gg = gr.grad.squaredNorm();
        if (gg == 0.0) break;
        y -= gr.grad * (v / gg);
        (void)n;
      }
      if (std::abs(level(y)) > 1e-8 * scale)
        throw NumericsError("boundary projection did not converge");
      return y;
    }
  }
  return Vector{};
}

double DomainGeometry::crossing_fraction(const Vector& x_in, const Vector& x_out) const {
  if (kind_ == Kind::Interval) {
    double a = x_in[0], b = x_out[0];
    double target = b >= hi1() ? hi1() : lo1();
    if (b == a) return 1.0;
    return std::clamp((target - a) / (b - a), 0.0, 1.0);
  }
  double flo = level(x_in);
  double fhi = level(x_out);
  if (flo >= 0.0) return 0.0;
  if (fhi < 0.0) return 1.0;
  double lo = 0.0, hi = 1.0;
  for (int it = 0; it < 60; ++it) {
    double mid = 0.5 * (lo + hi);
    Vector xm = x_in + mid * (x_out - x_in);
    if (level(xm) < 0.0)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

double DomainGeometry::diameter() const { return (bound_hi_ - bound_lo_).norm(); }

std::vector<Vector> DomainGeometry::boundary_mesh(int target) const {
  std::vector<Vector> mesh;
  if (d_ == 1) {
    mesh.push_back(Vector::Constant(1, bound_lo_[0]));
    mesh.push_back(Vector::Constant(1, bound_hi_[0]));
    if (kind_ == Kind::Implicit) {
      // Zero crossings of phi along the bounding interval.
      mesh.clear();
      int fine = std::max(1024, 16 * target);
      double prev = level(Vector::Constant(1, bound_lo_[0]));
      for (int i = 1; i <= fine; ++i) {
        double x = bound_lo_[0] + (bound_hi_[0] - bound_lo_[0]) * i / fine;
        double cur = level(Vector::Constant(1, x));
        if (prev < 0.0 != cur < 0.0) {
          Vector a = Vector::Constant(1, bound_lo_[0] + (bound_hi_[0] - bound_lo_[0]) * (i - 1.0) / fine);
          Vector b = Vector::Constant(1, x);
          double s = prev < 0.0 ? crossing_fraction(a, b) : crossing_fraction(b, a);
          mesh.push_back(prev < 0.0 ? a + s * (b - a) : b + s * (a - b));
        }
        prev = cur;
      }
    }
    return mesh;
  }
  int m = std::max(target, 8);
  if (d_ == 2) {
    switch (kind_) {
      case Kind::Box: {
        // Walk the four edges.
        int per_edge = std::max(m / 4, 2);
        for (int e = 0; e < 4; ++e) {
          for (int i = 0; i < per_edge; ++i) {
            double s = static_cast<double>(i) / per_edge;
            Vector y(2);
            switch (e) {
              case 0: y << bound_lo_[0] + s * (bound_hi_[0] - bound_lo_[0]), bound_lo_[1]; break;
              case 1: y << bound_hi_[0], bound_lo_[1] + s * (bound_hi_[1] - bound_lo_[1]); break;
              case 2: y << bound_hi_[0] - s * (bound_hi_[0] - bound_lo_[0]), bound_hi_[1]; break;
              default: y << bound_lo_[0], bound_hi_[1] - s * (bound_hi_[1] - bound_lo_[1]); break;
            }
            mesh.push_back(y);
          }
        }
        return mesh;
      }
      case Kind::Ball: {
        for (int i = 0; i < m; ++i) {
          double th = 2.0 * M_PI * i / m;
          Vector y(2);
          y << center_[0] + radius_ * std::cos(th), center_[1] + radius_ * std::sin(th);
          mesh.push_back(y);
        }
        return mesh;
      }
      case Kind::Implicit: {
        // March a fine grid and project sign-change midpoints.
        int fine = 8 * static_cast<int>(std::sqrt(static_cast<double>(m))) + 32;
        for (int i = 0; i < fine; ++i) {
          for (int j = 0; j < fine; ++j) {
            Vector a(2), b(2);
            a << bound_lo_[0] + (bound_hi_[0] - bound_lo_[0]) * i / fine,
                bound_lo_[1] + (bound_hi_[1] - bound_lo_[1]) * j / fine;
            b = a;
            b[0] += (bound_hi_[0] - bound_lo_[0]) / fine;
            if ((level(a) < 0.0) != (level(b) < 0.0)) {
              Vector inside = level(a) < 0.0 ? a : b;
              Vector outside = level(a) < 0.0 ? b : a;
              double s = crossing_fraction(inside, outside);
              mesh.push_back(project_to_boundary(inside + s * (outside - inside)));
            }
            if (static_cast<int>(mesh.size()) >= m) return mesh;
          }
        }
        return mesh;
      }
      default:
        break;
    }
  }
  // d >= 3 (or 2d fallbacks): rejection-projection sampling.
  std::mt19937_64 rng(12345);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  int attempts = 200 * m;
  while (static_cast<int>(mesh.size()) < m && attempts-- > 0) {
    Vector x(d_);
    for (int i = 0; i < d_; ++i)
      x[i] = bound_lo_[i] + uni(rng) * (bound_hi_[i] - bound_lo_[i]);
    try {
      Vector y = project_to_boundary(x);
      if (std::abs(level(y)) <= 1e-8 * std::max(1.0, diameter())) mesh.push_back(y);
    } catch (const ExitlabError&) {
      continue;
    }
  }
  return mesh;
}

double BoundaryData::value(int mode, const Vector& y) const {
  return g[static_cast<std::size_t>(mode)](y);
}

EpsilonLadder EpsilonLadder::make(std::vector<double> eps) {
  if (eps.empty()) throw ConfigError("epsilon ladder must not be empty");
  for (std::size_t i = 0; i < eps.size(); ++i) {
    if (!(eps[i] > 0.0)) throw ConfigError("epsilon ladder entries must be positive");
    if (i > 0 && !(eps[i] < eps[i - 1]))
      throw ConfigError("epsilon ladder must be strictly decreasing");
  }
  return EpsilonLadder{std::move(eps)};
}

// ---------------------------------------------------------------------------
// Config document

namespace {

std::vector<std::string> state_vars(int d) {
  std::vector<std::string> v;
  v.reserve(static_cast<std::size_t>(d));
  for (int i = 1; i <= d; ++i) v.push_back("x" + std::to_string(i));
  return v;
}

const ordered_json& require(const ordered_json& j, const char* key, const std::string& where) {
  auto it = j.find(key);
  if (it == j.end()) throw ConfigError("config: missing key '" + where + key + "'");
  return *it;
}

double require_number(const ordered_json& j, const char* key, const std::string& where) {
  const ordered_json& v = require(j, key, where);
  if (!v.is_number()) throw ConfigError("config: '" + where + key + "' must be a number");
  return v.get<double>();
}

Vector json_to_vector(const ordered_json& j, const std::string& where) {
  if (!j.is_array()) throw ConfigError("config: '" + where + "' must be an array of numbers");
  Vector v(static_cast<Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw ConfigError("config: '" + where + "' must contain numbers");
    v[static_cast<Index>(i)] = j[i].get<double>();
  }
  return v;
}

SigmaSpec parse_sigma(const ordered_json& j, int d, const std::string& where) {
  SigmaSpec s;
  s.d = d;
  if (j.is_number()) {
    s.kind = SigmaSpec::Kind::ConstantScalar;
    s.scalar = j.get<double>();
    s.finalize();
    return s;
  }
  std::string kind = require(j, "kind", where).get<std::string>();
  auto vars = state_vars(d);
  if (kind == "constant") {
    s.kind = SigmaSpec::Kind::ConstantScalar;
    s.scalar = require_number(j, "value", where);
  } else if (kind == "diagonal") {
    s.kind = SigmaSpec::Kind::Diagonal;
    const ordered_json& entries = require(j, "entries", where);
    if (!entries.is_array() || static_cast<int>(entries.size()) != d)
      throw ConfigError("config: '" + where + "entries' must list d=" + std::to_string(d) +
                        " expressions");
    for (const auto& e : entries)
      s.entries.push_back(ScalarField::parse(e.get<std::string>(), vars));
  } else if (kind == "full") {
    s.kind = SigmaSpec::Kind::Full;
    const ordered_json& entries = require(j, "entries", where);
    if (!entries.is_array() || static_cast<int>(entries.size()) != d)
      throw ConfigError("config: '" + where + "entries' must be a d x d matrix of expressions");
    for (const auto& row : entries) {
      if (!row.is_array() || static_cast<int>(row.size()) != d)
        throw ConfigError("config: '" + where + "entries' must be a d x d matrix of expressions");
      for (const auto& e : row)
        s.entries.push_back(ScalarField::parse(e.get<std::string>(), vars));
    }
  } else {
    throw ConfigError("config: '" + where + "kind' must be constant|diagonal|full");
  }
  s.finalize();
  return s;
}

DomainGeometry parse_domain(const ordered_json& j, int d) {
  std::string kind = require(j, "kind", "domain.").get<std::string>();
  const ordered_json& params = require(j, "params", "domain.");
  if (kind == "interval") {
    if (d != 1) throw ConfigError("config: interval domain requires model.d == 1");
    return DomainGeometry::interval(require_number(params, "lo", "domain.params."),
                                    require_number(params, "hi", "domain.params."));
  }
  if (kind == "box") {
    Vector lo = json_to_vector(require(params, "lo", "domain.params."), "domain.params.lo");
    Vector hi = json_to_vector(require(params, "hi", "domain.params."), "domain.params.hi");
    if (static_cast<int>(lo.size()) != d)
      throw ConfigError("config: domain dimension disagrees with model.d");
    return DomainGeometry::box(std::move(lo), std::move(hi));
  }
  if (kind == "ball") {
    Vector c = json_to_vector(require(params, "center", "domain.params."), "domain.params.center");
    if (static_cast<int>(c.size()) != d)
      throw ConfigError("config: domain dimension disagrees with model.d");
    return DomainGeometry::ball(std::move(c), require_number(params, "radius", "domain.params."));
  }
  if (kind == "implicit") {
    ScalarField phi =
        ScalarField::parse(require(params, "phi", "domain.params.").get<std::string>(),
                           state_vars(d));
    Vector lo = json_to_vector(require(params, "bound_lo", "domain.params."), "domain.params.bound_lo");
    Vector hi = json_to_vector(require(params, "bound_hi", "domain.params."), "domain.params.bound_hi");
    if (static_cast<int>(lo.size()) != d)
      throw ConfigError("config: domain dimension disagrees with model.d");
    return DomainGeometry::implicit(std::move(phi), std::move(lo), std::move(hi));
  }
  throw ConfigError("config: 'domain.kind' must be interval|box|ball|implicit");
}

void parse_experiment(const ordered_json& j, int d, ExperimentSettings* out) {
  if (auto it = j.find("x0"); it != j.end()) {
    out->x0 = json_to_vector(*it, "experiment.x0");
    if (static_cast<int>(out->x0.size()) != d)
      throw ConfigError("config: 'experiment.x0' dimension disagrees with model.d");
  }
  if (auto it = j.find("seed"); it != j.end()) out->seed = it->get<std::uint64_t>();
  if (auto it = j.find("dt"); it != j.end()) out->dt = it->get<double>();
  if (auto it = j.find("horizon"); it != j.end()) out->horizon = it->get<double>();
  if (auto it = j.find("trials"); it != j.end()) out->trials = it->get<int>();
  if (auto it = j.find("delta"); it != j.end()) out->delta = it->get<double>();
  if (auto it = j.find("eps"); it != j.end()) {
    out->eps_ladder.clear();
    for (const auto& e : *it) out->eps_ladder.push_back(e.get<double>());
  }
  if (auto it = j.find("probes"); it != j.end()) {
    out->probes.clear();
    for (const auto& p : *it) out->probes.push_back(json_to_vector(p, "experiment.probes"));
  }
  if (auto it = j.find("grid_h"); it != j.end()) out->grid_h = it->get<double>();
  if (auto it = j.find("T_grid"); it != j.end()) {
    out->T_grid.clear();
    for (const auto& t : *it) out->T_grid.push_back(t.get<double>());
  }
  if (auto it = j.find("path_nodes"); it != j.end()) out->path_nodes = it->get<int>();
  if (auto it = j.find("boundary_mesh"); it != j.end()) out->boundary_mesh = it->get<int>();
  if (auto it = j.find("workers"); it != j.end()) out->workers = it->get<int>();
  if (auto it = j.find("jump_scaling"); it != j.end()) {
    std::string s = it->get<std::string>();
    if (s == "fixed")
      out->jump_scaling = JumpScaling::Fixed;
    else if (s == "accelerated")
      out->jump_scaling = JumpScaling::Accelerated;
    else
      throw ConfigError("config: 'experiment.jump_scaling' must be fixed|accelerated");
  }
}

}  // namespace

Problem load_problem(const std::string& json_text) {
  ordered_json doc;
  try {
    doc = ordered_json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config: not valid JSON: ") + e.what());
  }

  const ordered_json& jm = require(doc, "model", "");
  Problem p;
  p.model.d = static_cast<int>(require_number(jm, "d", "model."));
  p.model.n = static_cast<int>(require_number(jm, "n", "model."));
  if (p.model.d < 1) throw ConfigError("config: 'model.d' must be >= 1");
  if (p.model.n < 1) throw ConfigError("config: 'model.n' must be >= 1");
  const int d = p.model.d;
  const int n = p.model.n;
  auto vars = state_vars(d);

  const ordered_json& jmodes = require(jm, "modes", "model.");
  if (!jmodes.is_array() || static_cast<int>(jmodes.size()) != n)
    throw ConfigError("config: 'model.modes' must list n=" + std::to_string(n) + " modes");
  for (const auto& jmode : jmodes) {
    ModeDynamics mode;
    const ordered_json& jdrift = require(jmode, "drift", "model.modes[].");
    if (!jdrift.is_array() || static_cast<int>(jdrift.size()) != d)
      throw ConfigError("config: 'model.modes[].drift' must list d=" + std::to_string(d) +
                        " expressions");
    for (const auto& e : jdrift)
      mode.drift.components.push_back(ScalarField::parse(e.get<std::string>(), vars));
    mode.sigma = parse_sigma(require(jmode, "sigma", "model.modes[]."), d, "model.modes[].sigma.");
    p.model.modes.push_back(std::move(mode));
  }

  p.model.rates.assign(static_cast<std::size_t>(n),
                       std::vector<std::optional<ScalarField>>(static_cast<std::size_t>(n)));
  if (n > 1) {
    const ordered_json& jrates = require(jm, "rates", "model.");
    if (!jrates.is_array() || static_cast<int>(jrates.size()) != n)
      throw ConfigError("config: 'model.rates' must be an n x n array of expressions");
    for (int k = 0; k < n; ++k) {
      const auto& row = jrates[static_cast<std::size_t>(k)];
      if (!row.is_array() || static_cast<int>(row.size()) != n)
        throw ConfigError("config: 'model.rates' must be an n x n array of expressions");
      for (int m = 0; m < n; ++m) {
        if (k == m) continue;
        ScalarField f = ScalarField::parse(row[static_cast<std::size_t>(m)].get<std::string>(), vars);
        if (f.is_constant() && !(f.program.constant_value() > 0.0))
          throw ConfigError("config: rates must be strictly positive (model.rates[" +
                            std::to_string(k) + "][" + std::to_string(m) + "])");
        p.model.rates[static_cast<std::size_t>(k)][static_cast<std::size_t>(m)] = std::move(f);
      }
    }
  }

  p.domain = parse_domain(require(doc, "domain", ""), d);

  if (auto it = doc.find("boundary"); it != doc.end()) {
    const ordered_json& jg = require(*it, "g", "boundary.");
    if (!jg.is_array() || static_cast<int>(jg.size()) != n)
      throw ConfigError("config: 'boundary.g' must list n=" + std::to_string(n) + " expressions");
    for (const auto& e : jg)
      p.boundary.g.push_back(ScalarField::parse(e.get<std::string>(), vars));
  } else {
    for (int k = 0; k < n; ++k) p.boundary.g.push_back(ScalarField::constant(0.0, vars));
  }

  if (auto it = doc.find("controls"); it != doc.end()) {
    ControlFamily fam;
    const ordered_json& jsets = require(*it, "sets", "controls.");
    const ordered_json& jdrifts = require(*it, "drift", "controls.");
    if (static_cast<int>(jsets.size()) != n || static_cast<int>(jdrifts.size()) != n)
      throw ConfigError("config: 'controls.sets' and 'controls.drift' must list n modes");
    auto cvars = vars;
    cvars.push_back("u");
    for (int k = 0; k < n; ++k) {
      std::vector<double> set;
      for (const auto& u : jsets[static_cast<std::size_t>(k)]) set.push_back(u.get<double>());
      if (set.empty()) throw ConfigError("config: 'controls.sets' entries must be non-empty");
      fam.control_sets.push_back(std::move(set));
      VectorField f;
      const auto& jd = jdrifts[static_cast<std::size_t>(k)];
      if (!jd.is_array() || static_cast<int>(jd.size()) != d)
        throw ConfigError("config: 'controls.drift' entries must list d expressions");
      for (const auto& e : jd)
        f.components.push_back(ScalarField::parse(e.get<std::string>(), cvars));
      fam.controlled_drift.push_back(std::move(f));
    }
    p.model.controls = std::move(fam);
  }

  p.experiment.x0 = Vector::Zero(d);
  if (auto it = doc.find("experiment"); it != doc.end()) parse_experiment(*it, d, &p.experiment);

  // Every field must be evaluable at the domain center.
  Vector center = 0.5 * (p.domain.bounding_box().first + p.domain.bounding_box().second);
  for (int k = 0; k < n; ++k) {
    (void)p.model.modes[static_cast<std::size_t>(k)].drift_at(center);
    (void)p.model.modes[static_cast<std::size_t>(k)].a_at(center);
    (void)p.boundary.g[static_cast<std::size_t>(k)](center);
  }
  if (n > 1) (void)p.model.rate_matrix(center);

  return p;
}

Problem load_problem_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return load_problem(buf.str());
}

std::string serialize_problem(const Problem& p) {
  ordered_json doc;
  ordered_json jm;
  jm["d"] = p.model.d;
  jm["n"] = p.model.n;
  ordered_json jmodes = ordered_json::array();
  for (const auto& mode : p.model.modes) {
    ordered_json jmode;
    ordered_json jdrift = ordered_json::array();
    for (const auto& c : mode.drift.components) jdrift.push_back(c.source);
    jmode["drift"] = jdrift;
    ordered_json jsigma;
    switch (mode.sigma.kind) {
      case SigmaSpec::Kind::ConstantScalar:
        jsigma["kind"] = "constant";
        jsigma["value"] = mode.sigma.scalar;
        break;
      case SigmaSpec::Kind::Diagonal: {
        jsigma["kind"] = "diagonal";
        ordered_json ent = ordered_json::array();
        for (const auto& e : mode.sigma.entries) ent.push_back(e.source);
        jsigma["entries"] = ent;
        break;
      }
      case SigmaSpec::Kind::Full: {
        jsigma["kind"] = "full";
        ordered_json ent = ordered_json::array();
        for (int i = 0; i < p.model.d; ++i) {
          ordered_json row = ordered_json::array();
          for (int j = 0; j < p.model.d; ++j)
            row.push_back(mode.sigma.entries[static_cast<std::size_t>(i * p.model.d + j)].source);
          ent.push_back(row);
        }
        jsigma["entries"] = ent;
        break;
      }
    }
    jmode["sigma"] = jsigma;
    jmodes.push_back(jmode);
  }
  jm["modes"] = jmodes;
  if (p.model.n > 1) {
    ordered_json jrates = ordered_json::array();
    for (int k = 0; k < p.model.n; ++k) {
      ordered_json row = ordered_json::array();
      for (int m = 0; m < p.model.n; ++m) {
        const auto& f = p.model.rates[static_cast<std::size_t>(k)][static_cast<std::size_t>(m)];
        row.push_back(f ? f->source : "0");
      }
      jrates.push_back(row);
    }
    jm["rates"] = jrates;
  }
  doc["model"] = jm;

  ordered_json jd;
  ordered_json params;
  auto [lo, hi] = p.domain.bounding_box();
  switch (p.domain.kind()) {
    case DomainGeometry::Kind::Interval:
      jd["kind"] = "interval";
      params["lo"] = lo[0];
      params["hi"] = hi[0];
      break;
    case DomainGeometry::Kind::Box: {
      jd["kind"] = "box";
      params["lo"] = std::vector<double>(lo.data(), lo.data() + lo.size());
      params["hi"] = std::vector<double>(hi.data(), hi.data() + hi.size());
      break;
    }
    case DomainGeometry::Kind::Ball: {
      jd["kind"] = "ball";
      Vector c = 0.5 * (lo + hi);
      params["center"] = std::vector<double>(c.data(), c.data() + c.size());
      params["radius"] = 0.5 * (hi[0] - lo[0]);
      break;
    }
    case DomainGeometry::Kind::Implicit:
      throw ConfigError("serialize: implicit domains keep their phi source externally");
  }
  jd["params"] = params;
  doc["domain"] = jd;

  ordered_json jb;
  ordered_json jg = ordered_json::array();
  for (const auto& g : p.boundary.g) jg.push_back(g.source);
  jb["g"] = jg;
  doc["boundary"] = jb;

  ordered_json je;
  je["x0"] = std::vector<double>(p.experiment.x0.data(),
                                 p.experiment.x0.data() + p.experiment.x0.size());
  je["seed"] = p.experiment.seed;
  je["dt"] = p.experiment.dt;
  if (p.experiment.horizon > 0.0) je["horizon"] = p.experiment.horizon;
  je["trials"] = p.experiment.trials;
  je["delta"] = p.experiment.delta;
  je["eps"] = p.experiment.eps_ladder;
  je["jump_scaling"] =
      p.experiment.jump_scaling == JumpScaling::Accelerated ? "accelerated" : "fixed";
  doc["experiment"] = je;

  return doc.dump(2);
}

// ---------------------------------------------------------------------------
// Validation

ValidationReport validate_model(const SwitchingModel& model, const DomainGeometry& domain,
                                const ValidationSettings& settings) {
  ValidationReport rep;
  std::mt19937_64 rng(settings.seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto [lo, hi] = domain.bounding_box();

  auto sample_point = [&]() {
    Vector x(model.d);
    for (int tries = 0; tries < 10000; ++tries) {
      for (int i = 0; i < model.d; ++i) x[i] = lo[i] + uni(rng) * (hi[i] - lo[i]);
      if (domain.level(x) <= 0.0) return x;
    }
    throw NumericsError("validation could not sample points inside the domain");
  };

  rep.a_min_estimate = kInfinity;
  rep.a_max_estimate = 0.0;

  std::vector<Vector> points;
  points.reserve(static_cast<std::size_t>(settings.point_samples));
  for (int s = 0; s < settings.point_samples; ++s) points.push_back(sample_point());

  for (const Vector& x : points) {
    for (const ModeDynamics& mode : model.modes) {
      Matrix a = mode.a_at(x);
      rep.worst_symmetry_defect =
          std::max(rep.worst_symmetry_defect, (a - a.transpose()).cwiseAbs().maxCoeff());
      for (int dir = 0; dir < settings.direction_samples; ++dir) {
        Vector pvec(model.d);
        for (int i = 0; i < model.d; ++i) pvec[i] = gauss(rng);
        double norm = pvec.norm();
        if (norm == 0.0) continue;
        pvec /= norm;
        double q = pvec.dot(a * pvec);
        if (q < rep.a_min_estimate) {
          rep.a_min_estimate = q;
          rep.worst_ellipticity_point = x;
          rep.worst_ellipticity_direction = pvec;
        }
        rep.a_max_estimate = std::max(rep.a_max_estimate, q);
      }
      if (model.d == 1) {
        // One direction suffices in 1d.
        double q = mode.a_at(x)(0, 0);
        if (q < rep.a_min_estimate) {
          rep.a_min_estimate = q;
          rep.worst_ellipticity_point = x;
          rep.worst_ellipticity_direction = Vector::Constant(1, 1.0);
        }
        rep.a_max_estimate = std::max(rep.a_max_estimate, q);
      }
    }
    if (model.n > 1) {
      for (int k = 0; k < model.n; ++k) {
        std::vector<double> row(static_cast<std::size_t>(model.n));
        model.rates_row(k, std::span<const double>(x.data(), static_cast<std::size_t>(x.size())),
                        row.data());
        for (int m = 0; m < model.n; ++m) {
          if (m == k) continue;
          if (row[static_cast<std::size_t>(m)] < rep.min_offdiag_rate) {
            rep.min_offdiag_rate = row[static_cast<std::size_t>(m)];
            rep.min_rate_k = k;
            rep.min_rate_m = m;
            rep.min_rate_x = x;
          }
        }
      }
    }
  }

  for (int s = 0; s < settings.lipschitz_pairs; ++s) {
    Vector x = sample_point();
    Vector y = sample_point();
    double dist = (x - y).norm();
    if (dist < 1e-12) continue;
    for (const ModeDynamics& mode : model.modes) {
      double q = (mode.drift_at(x) - mode.drift_at(y)).norm() / dist;
      rep.drift_lipschitz_estimate = std::max(rep.drift_lipschitz_estimate, q);
    }
    if (model.n > 1) {
      try {
        double q = (model.rate_matrix(x) - model.rate_matrix(y)).norm() / dist;
        rep.rate_lipschitz_estimate = std::max(rep.rate_lipschitz_estimate, q);
      } catch (const ConfigError&) {
        rep.rates_ok = false;
      }
    }
  }

  if (model.n == 1) rep.min_offdiag_rate = kInfinity;
  rep.ellipticity_ok = rep.a_min_estimate > 0.0;
  if (settings.required_a_min) rep.ellipticity_ok &= rep.a_min_estimate >= *settings.required_a_min;
  if (settings.required_a_max) rep.ellipticity_ok &= rep.a_max_estimate <= *settings.required_a_max;
  if (model.n > 1) rep.rates_ok &= rep.min_offdiag_rate > 0.0;
  if (settings.lipschitz_bound)
    rep.lipschitz_ok = rep.drift_lipschitz_estimate <= *settings.lipschitz_bound &&
                       rep.rate_lipschitz_estimate <= *settings.lipschitz_bound;
  rep.passed = rep.ellipticity_ok && rep.rates_ok && rep.lipschitz_ok;
  return rep;
}

}  // namespace exitlab
