#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "exitlab/quasipotential.hpp"
#include "exitlab/switching.hpp"
#include "support/fixtures.hpp"

using namespace exitlab;
namespace qpm = exitlab::qp;
using exitlab::testing::m_star;
using exitlab::testing::ou_problem;
using exitlab::testing::symmetric_problem;

namespace {

Vector vec1(double v) { return Vector::Constant(1, v); }

}  // namespace

TEST_CASE("gradient-case quasipotential: V(1) = 1 for the OU benchmark") {
  // V(y) = 2(U(y) - U(0)) with U = x^2/2, so V(1) = 1; finite-T penalty
  // decays like exp(-2T), negligible at T = 6.
  Problem p = ou_problem();
  qpm::PathOptResult r =
      qpm::minimize_action_path(p.model, p.domain, vec1(0.0), vec1(1.0), 6.0, 100);
  CHECK(r.value == doctest::Approx(1.0).epsilon(5e-2));
  CHECK(r.value >= 0.0);
}

TEST_CASE("flow-reachable targets cost nothing") {
  // Constant rightward drift: the averaged flow itself crosses y = 1.
  Problem p = load_problem(R"({
    "model": {"d": 1, "n": 1, "modes": [{"drift": ["0.5"], "sigma": 1.0}]},
    "domain": {"kind": "interval", "params": {"lo": -1, "hi": 1}}
  })");
  qpm::PathOptResult r =
      qpm::minimize_action_path(p.model, p.domain, vec1(0.0), vec1(1.0), 2.0, 64);
  CHECK(r.value <= 1e-6);
}

TEST_CASE("node refinement does not increase the minimum") {
  Problem p = ou_problem();
  qpm::PathOptResult coarse =
      qpm::minimize_action_path(p.model, p.domain, vec1(0.0), vec1(1.0), 4.0, 32);
  qpm::PathOptResult fine =
      qpm::minimize_action_path(p.model, p.domain, vec1(0.0), vec1(1.0), 4.0, 64);
  CHECK(fine.value <= coarse.value + 1e-3);
}

TEST_CASE("explicit initial path is honored") {
  Problem p = ou_problem();
  action::DiscretizedPath init;
  const int N = 32;
  for (int i = 0; i < N; ++i) {
    double s = static_cast<double>(i) / (N - 1);
    init.t.push_back(4.0 * s);
    init.phi.push_back(vec1(s * s));  // curved start
  }
  qpm::PathOptResult r =
      qpm::minimize_action_path(p.model, p.domain, vec1(0.0), vec1(1.0), 4.0, N, init);
  CHECK(r.value == doctest::Approx(1.0).epsilon(0.1));
}

TEST_CASE("quasipotential on the symmetric model is degenerate") {
  Problem p = symmetric_problem();
  std::vector<Vector> mesh = {vec1(-1.0), vec1(1.0)};
  qpm::QuasipotentialResult qp = qpm::quasipotential_boundary(
      p.model, p.domain, vec1(0.0), mesh, {2.0, 6.0}, 48);
  CHECK(std::abs(qp.V[0] - qp.V[1]) <= 1e-3);
  CHECK(qp.V[0] >= 0.0);
  CHECK(qp.separation <= 1e-3);  // near-degenerate minimum is visible to callers

  qpm::As1Report as1 = qpm::verify_as1(p.model, p.domain, vec1(0.0), mesh, qp);
  CHECK(as1.inward_ok);
  CHECK(as1.verdict == qpm::Verdict::Degenerate);
}

TEST_CASE("reference model: exits concentrate at +1 with the hand-checked values") {
  // Independent oracle: integrating the nonzero root of
  // lambda(x, p) = 0 gives V(+1) ~ 0.664 and V(-1) ~ 0.801.
  Problem p = m_star();
  Vector x0 = vec1(1.0 / 15.0);
  std::vector<Vector> mesh = {vec1(-1.0), vec1(1.0)};
  qpm::QuasipotentialResult qp = qpm::quasipotential_boundary(
      p.model, p.domain, x0, mesh, {2.0, 4.0, 8.0, 16.0}, 80);
  CHECK(qp.argmin == 1);
  CHECK(qp.ybar[0] == 1.0);
  CHECK(qp.V[1] == doctest::Approx(0.664).epsilon(0.08));
  CHECK(qp.V[0] == doctest::Approx(0.801).epsilon(0.08));
  CHECK(qp.separation == doctest::Approx(qp.V[0] - qp.V[1]).epsilon(1e-12));

  // extremal path: nonnegative accumulation toward the boundary and an
  // outward final velocity
  const auto& path = qp.extremal;
  CHECK((path.phi.front() - x0).norm() <= 1e-12);
  CHECK((path.phi.back() - qp.ybar).norm() <= 1e-12);
  double final_vel = (path.phi.back()[0] - path.phi[path.phi.size() - 2][0]);
  CHECK(final_vel > 0.0);

  qpm::As1Report as1 = qpm::verify_as1(p.model, p.domain, x0, mesh, qp);
  CHECK(as1.verdict == qpm::Verdict::Holds);
  CHECK(as1.worst_margin < 0.0);
}

TEST_CASE("n=1 reduction reproduces the analytic quasipotential on both endpoints") {
  Problem p = ou_problem();
  std::vector<Vector> mesh = {vec1(-1.0), vec1(1.0)};
  qpm::QuasipotentialResult qp = qpm::quasipotential_boundary(
      p.model, p.domain, vec1(0.0), mesh, {2.0, 6.0, 12.0}, 80);
  CHECK(qp.V[0] == doctest::Approx(1.0).epsilon(5e-2));
  CHECK(qp.V[1] == doctest::Approx(1.0).epsilon(5e-2));
}

TEST_CASE("V along the extremal path accumulates monotonically") {
  Problem p = ou_problem();
  qpm::PathOptResult r =
      qpm::minimize_action_path(p.model, p.domain, vec1(0.0), vec1(1.0), 6.0, 64);
  // partial actions of the optimized path are non-decreasing
  double acc = 0.0;
  for (int i = 0; i + 1 < static_cast<int>(r.path.phi.size()); ++i) {
    action::DiscretizedPath seg;
    seg.t = {r.path.t[static_cast<std::size_t>(i)], r.path.t[static_cast<std::size_t>(i) + 1]};
    seg.phi = {r.path.phi[static_cast<std::size_t>(i)], r.path.phi[static_cast<std::size_t>(i) + 1]};
    double v = action::path_action_I(p.model, seg);
    CHECK(v >= -1e-14);
    acc += v;
  }
  CHECK(acc == doctest::Approx(r.value).epsilon(1e-6));
}

TEST_CASE("diffusion rescaling scales V by 1/c^2") {
  Problem p2 = load_problem(R"({
    "model": {"d": 1, "n": 1,
      "modes": [{"drift": ["-x1"], "sigma": {"kind": "constant", "value": 2.0}}]},
    "domain": {"kind": "interval", "params": {"lo": -1, "hi": 1}}
  })");
  qpm::PathOptResult r =
      qpm::minimize_action_path(p2.model, p2.domain, vec1(0.0), vec1(1.0), 6.0, 100);
  CHECK(r.value == doctest::Approx(0.25).epsilon(5e-2));
}

TEST_CASE("as1 failure: outward-pointing averaged field") {
  Problem p = load_problem(R"({
    "model": {"d": 1, "n": 1, "modes": [{"drift": ["x1"], "sigma": 1.0}]},
    "domain": {"kind": "interval", "params": {"lo": -1, "hi": 1}}
  })");
  std::vector<Vector> mesh = {vec1(-1.0), vec1(1.0)};
  qpm::QuasipotentialResult dummy;
  dummy.separation = 1.0;
  qpm::As1Report rep = qpm::verify_as1(p.model, p.domain, vec1(0.0), mesh, dummy);
  CHECK_FALSE(rep.inward_ok);
  CHECK(rep.worst_margin == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(rep.verdict == qpm::Verdict::Fails);
}

TEST_CASE("as2 exit-mode prediction on the reference model") {
  Problem p = m_star();
  qpm::ExitModePrediction pred = qpm::verify_as2(p.model, vec1(1.0), p.domain);
  CHECK(pred.k0 == 0);  // mode 1: pairing -0.4 beats mode 2's -2
  CHECK(pred.pairings[0] == doctest::Approx(-0.4).epsilon(1e-12));
  CHECK(pred.pairings[1] == doctest::Approx(-2.0).epsilon(1e-12));
  REQUIRE(pred.margins.size() == 1);
  CHECK(pred.margins[0] == doctest::Approx(1.6).epsilon(1e-12));
  CHECK(pred.generic);
}

TEST_CASE("as2 degenerates for identical modes and is vacuous for n=1") {
  Problem same = load_problem(R"({
    "model": {"d": 1, "n": 2,
      "modes": [
        {"drift": ["-x1"], "sigma": 1.0},
        {"drift": ["-x1"], "sigma": 1.0}
      ],
      "rates": [["0", "1"], ["1", "0"]]},
    "domain": {"kind": "interval", "params": {"lo": -1, "hi": 1}}
  })");
  qpm::ExitModePrediction tie = qpm::verify_as2(same.model, vec1(1.0), same.domain);
  CHECK_FALSE(tie.generic);

  Problem single = ou_problem();
  qpm::ExitModePrediction solo = qpm::verify_as2(single.model, vec1(1.0), single.domain);
  CHECK(solo.k0 == 0);
  CHECK(solo.generic);  // vacuously: no competing mode
  CHECK(solo.margins.empty());
}

TEST_CASE("equilibrium precondition is enforced") {
  Problem p = ou_problem();
  std::vector<Vector> mesh = {vec1(-1.0), vec1(1.0)};
  CHECK_THROWS_AS(
      qpm::quasipotential_boundary(p.model, p.domain, vec1(0.4), mesh, {2.0}, 32),
      ConfigError);
}
