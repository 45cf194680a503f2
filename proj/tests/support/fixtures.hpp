#pragma once

#include <string>

#include "exitlab/model.hpp"

namespace exitlab::testing {

/// Reference two-mode model: D = (-1,1), drifts -x+0.6 and -x-1, unit
/// diffusion, rates gamma_12 = 1, gamma_21 = 2, boundary data 1+x and 5.
/// Averaged field: omega = (2/3, 1/3), f_av(x) = -x + 1/15.
inline const char* kMStarConfig = R"({
  "model": {
    "d": 1, "n": 2,
    "modes": [
      {"drift": ["-x1+0.6"], "sigma": {"kind": "constant", "value": 1.0}},
      {"drift": ["-x1-1"],   "sigma": {"kind": "constant", "value": 1.0}}
    ],
    "rates": [["0", "1"], ["2", "0"]]
  },
  "domain": {"kind": "interval", "params": {"lo": -1.0, "hi": 1.0}},
  "boundary": {"g": ["1+x1", "5"]},
  "experiment": {"x0": [0.06666666666666667]}
})";

inline Problem m_star() { return load_problem(kMStarConfig); }

/// Single-mode restriction of the reference model (mode 1 only).
inline const char* kMStarMode1Config = R"({
  "model": {
    "d": 1, "n": 1,
    "modes": [{"drift": ["-x1+0.6"], "sigma": {"kind": "constant", "value": 1.0}}]
  },
  "domain": {"kind": "interval", "params": {"lo": -1.0, "hi": 1.0}},
  "boundary": {"g": ["1+x1"]},
  "experiment": {"x0": [0.6]}
})";

inline Problem m_star_mode1() { return load_problem(kMStarMode1Config); }

/// Single-mode Ornstein-Uhlenbeck style benchmark: drift -x, unit
/// diffusion on (-1,1); quasipotential V(y) = y^2 from the equilibrium.
inline const char* kOuConfig = R"({
  "model": {
    "d": 1, "n": 1,
    "modes": [{"drift": ["-x1"], "sigma": {"kind": "constant", "value": 1.0}}]
  },
  "domain": {"kind": "interval", "params": {"lo": -1.0, "hi": 1.0}},
  "boundary": {"g": ["x1"]},
  "experiment": {"x0": [0.0]}
})";

inline Problem ou_problem() { return load_problem(kOuConfig); }

/// Mirror-symmetric two-mode model: drifts -x+0.5 and -x-0.5 with equal
/// rates; V(-1) = V(1) by symmetry (degenerate minimum).
inline const char* kSymmetricConfig = R"({
  "model": {
    "d": 1, "n": 2,
    "modes": [
      {"drift": ["-x1+0.5"], "sigma": {"kind": "constant", "value": 1.0}},
      {"drift": ["-x1-0.5"], "sigma": {"kind": "constant", "value": 1.0}}
    ],
    "rates": [["0", "1"], ["1", "0"]]
  },
  "domain": {"kind": "interval", "params": {"lo": -1.0, "hi": 1.0}},
  "boundary": {"g": ["x1", "x1"]},
  "experiment": {"x0": [0.0]}
})";

inline Problem symmetric_problem() { return load_problem(kSymmetricConfig); }

}  // namespace exitlab::testing
