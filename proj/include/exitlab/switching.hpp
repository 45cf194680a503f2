#pragma once

#include <functional>
#include <vector>

#include "exitlab/model.hpp"
#include "exitlab/types.hpp"

namespace exitlab::switching {

/// Generator matrix Gamma(x): off-diagonal (k,m) = gamma_km(x), diagonal
/// -sum of the row's off-diagonals. Row sums are zero by construction.
Matrix generator_matrix(const SwitchingModel& model, const Vector& x);

/// Unique left null vector of the generator, normalized to sum 1, all
/// entries positive. Solved directly via Gamma^T with the last row
/// replaced by the normalization.
Vector stationary_distribution(const Matrix& generator);

/// f_av(x) = sum_k omega_k(x) * drift_k(x).
Vector averaged_field(const SwitchingModel& model, const Vector& x);

using VectorFieldFn = std::function<Vector(const Vector&)>;

struct Flow {
  std::vector<double> t;
  std::vector<Vector> x;
  const Vector& endpoint() const { return x.back(); }
};

/// Classical 4th-order one-step integration of xdot = field(x). The
/// last step is shortened to land exactly on T. Integration aborts at
/// the last valid state if the field returns a non-finite value.
Flow flow(const VectorFieldFn& field, const Vector& x0, double T, double dt);

struct InvariantSetReport {
  std::vector<bool> contained;      // per start
  std::vector<double> escape_time;  // +inf when contained
  bool any_contained = false;
};

/// Heuristic witness of a non-empty invariant set: does some trajectory
/// remain in the closed domain up to time T?
InvariantSetReport invariant_set_check(const VectorFieldFn& field, const DomainGeometry& domain,
                                       const std::vector<Vector>& starts, double T, double dt);

}  // namespace exitlab::switching
