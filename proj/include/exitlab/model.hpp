#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "exitlab/fieldlang.hpp"
#include "exitlab/types.hpp"

namespace exitlab {

/// A parsed scalar field with its original source text. Evaluation
/// throws FieldEvalError when the expression hits a domain error.
struct ScalarField {
  std::string source;
  std::vector<std::string> var_names;
  fieldlang::Expr ast;
  fieldlang::Program program;

  static ScalarField parse(const std::string& source, const std::vector<std::string>& vars);
  static ScalarField constant(double value, const std::vector<std::string>& vars);

  double operator()(std::span<const double> values) const;
  double operator()(const Vector& x) const;
  bool is_constant() const { return program.is_constant(); }
};

/// x -> R^d field given componentwise.
struct VectorField {
  std::vector<ScalarField> components;

  int dim() const { return static_cast<int>(components.size()); }
  void eval_into(std::span<const double> values, double* out) const;
  Vector operator()(const Vector& x) const;
};

/// Diffusion factor sigma_k. Constant matrices are detected at load
/// time so the simulation loop can skip per-step evaluation.
struct SigmaSpec {
  enum class Kind { ConstantScalar, Diagonal, Full };
  Kind kind = Kind::ConstantScalar;
  int d = 1;
  double scalar = 1.0;                // ConstantScalar: sigma = scalar * I
  std::vector<ScalarField> entries;   // Diagonal: d entries; Full: d*d row-major
  bool constant = true;
  Matrix cached;                      // valid when constant

  Matrix at(const Vector& x) const;
  void finalize();                    // computes constant/cached
};

/// One regime: effective drift (controls already substituted) and
/// diffusion, with a(x) = sigma(x) sigma(x)^T derived on demand.
struct ModeDynamics {
  VectorField drift;
  SigmaSpec sigma;

  Vector drift_at(const Vector& x) const { return drift(x); }
  Matrix sigma_at(const Vector& x) const { return sigma.at(x); }
  Matrix a_at(const Vector& x) const;
};

/// Optional raw controlled family for policy iteration: finite control
/// set U_k and drift expressions in (x1..xd, u).
struct ControlFamily {
  std::vector<std::vector<double>> control_sets;  // U_k per mode
  std::vector<VectorField> controlled_drift;      // f_k(x, u)

  Vector drift_at(int mode, const Vector& x, double u) const;
};

struct SwitchingModel {
  int d = 1;
  int n = 1;
  std::vector<ModeDynamics> modes;
  // rates[k][m] defined for k != m; diagonal entries unused.
  std::vector<std::vector<std::optional<ScalarField>>> rates;
  // Uniform multiplier on all transition rates. The epsilon-family
  // experiments use it to build accelerated-switching instances; it is
  // 1 for models as loaded.
  double rate_scale = 1.0;
  std::optional<ControlFamily> controls;

  /// gamma_km(x) (off-diagonal, scaled); zero diagonal. Throws on a
  /// nonpositive rate.
  Matrix rate_matrix(const Vector& x) const;
  /// Off-diagonal row k written into out[n]; out[k] = 0. Hot path.
  void rates_row(int k, std::span<const double> x, double* out) const;

  SwitchingModel with_rate_scale(double scale) const;
};

class DomainGeometry {
 public:
  enum class Kind { Interval, Box, Ball, Implicit };

  static DomainGeometry interval(double lo, double hi);
  static DomainGeometry box(Vector lo, Vector hi);
  static DomainGeometry ball(Vector center, double radius);
  static DomainGeometry implicit(ScalarField phi, Vector bound_lo, Vector bound_hi);

  Kind kind() const { return kind_; }
  int dim() const { return d_; }

  /// Signed indicator: negative inside D, positive outside, ~0 on the boundary.
  double level(const Vector& x) const;
  double level(std::span<const double> x) const;
  bool contains(const Vector& x) const { return level(x) < 0.0; }

  Vector outward_normal(const Vector& y) const;
  /// Moves a point near the boundary onto it (|level| <= 1e-10 * scale).
  Vector project_to_boundary(const Vector& x) const;
  /// Boundary crossing on the segment x_in -> x_out (level(x_in) < 0 <=
  /// level(x_out)); returns the crossing fraction s in [0, 1].
  double crossing_fraction(const Vector& x_in, const Vector& x_out) const;

  std::pair<Vector, Vector> bounding_box() const { return {bound_lo_, bound_hi_}; }
  double diameter() const;

  /// Mesh of boundary points: 2 endpoints in 1d, `target` points in 2d,
  /// best-effort sample for d >= 3.
  std::vector<Vector> boundary_mesh(int target) const;

  // Interval accessors (valid for Kind::Interval).
  double lo1() const { return bound_lo_[0]; }
  double hi1() const { return bound_hi_[0]; }

 private:
  Kind kind_ = Kind::Interval;
  int d_ = 1;
  Vector bound_lo_, bound_hi_;
  Vector center_;
  double radius_ = 0.0;
  std::optional<ScalarField> phi_;
};

struct BoundaryData {
  std::vector<ScalarField> g;
  double value(int mode, const Vector& y) const;
};

struct EpsilonLadder {
  std::vector<double> eps;
  static EpsilonLadder make(std::vector<double> eps);  // validates
};

enum class JumpScaling { Fixed, Accelerated };

/// Free-form experiment settings carried through from the config
/// document; the CLI applies defaults and flag overrides.
struct ExperimentSettings {
  Vector x0;
  std::uint64_t seed = 1;
  double dt = 1e-3;
  double horizon = 0.0;  // 0 = auto
  int trials = 10000;
  double delta = 0.1;
  std::vector<double> eps_ladder{0.5, 0.3, 0.2, 0.12, 0.08};
  std::vector<Vector> probes;
  double grid_h = 1.0 / 256.0;
  std::vector<double> T_grid;  // empty = default log-spaced 8 in [0.5, 32]
  int path_nodes = 100;
  int boundary_mesh = 2;
  int workers = 0;  // 0 = hardware
  JumpScaling jump_scaling = JumpScaling::Accelerated;
};

struct Problem {
  SwitchingModel model;
  DomainGeometry domain;
  BoundaryData boundary;
  ExperimentSettings experiment;
};

/// Parses a JSON config document. Throws ConfigError with the offending
/// key on schema violations and fieldlang::ParseError on bad expressions.
Problem load_problem(const std::string& json_text);
Problem load_problem_file(const std::string& path);
std::string serialize_problem(const Problem& p);

struct ValidationSettings {
  int point_samples = 256;
  int direction_samples = 32;
  int lipschitz_pairs = 256;
  std::uint64_t seed = 0;
  std::optional<double> required_a_min;
  std::optional<double> required_a_max;
  std::optional<double> lipschitz_bound;
};

struct ValidationReport {
  double a_min_estimate = 0.0;
  double a_max_estimate = 0.0;
  double worst_symmetry_defect = 0.0;
  double min_offdiag_rate = kInfinity;
  int min_rate_k = -1, min_rate_m = -1;
  Vector min_rate_x;
  double drift_lipschitz_estimate = 0.0;
  double rate_lipschitz_estimate = 0.0;
  Vector worst_ellipticity_point;
  Vector worst_ellipticity_direction;
  bool ellipticity_ok = true;
  bool rates_ok = true;
  bool lipschitz_ok = true;
  bool passed = false;
};

ValidationReport validate_model(const SwitchingModel& model, const DomainGeometry& domain,
                                const ValidationSettings& settings = {});

}  // namespace exitlab
