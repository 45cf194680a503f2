#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "exitlab/action.hpp"
#include "exitlab/switching.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace exitlab;
namespace ac = exitlab::action;
namespace sw = exitlab::switching;
using exitlab::testing::m_star;
using exitlab::testing::ou_problem;

namespace {

Vector vec1(double v) { return Vector::Constant(1, v); }

}  // namespace

TEST_CASE("hamiltonian at (p, alpha) = 0 equals the generator exactly") {
  Problem p = m_star();
  Vector x = vec1(0.3);
  Matrix H = ac::hamiltonian(p.model, x, Vector::Zero(1), Vector::Zero(2));
  Matrix G = sw::generator_matrix(p.model, x);
  CHECK((H - G).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("hamiltonian n=1 reduces to the scalar bracket") {
  Problem p = ou_problem();
  Vector x = vec1(0.4);
  Vector pp = vec1(1.3);
  Vector alpha = vec1(0.7);
  Matrix H = ac::hamiltonian(p.model, x, pp, alpha);
  REQUIRE(H.rows() == 1);
  // p a p / 2 + p ftilde + alpha with a = 1, ftilde = -x
  CHECK(H(0, 0) == doctest::Approx(0.5 * 1.3 * 1.3 + 1.3 * (-0.4) + 0.7).epsilon(1e-14));
}

TEST_CASE("hamiltonian 2-mode hand assembly") {
  // n=2, gamma12=1, gamma21=2, d=1, a=1, drifts 0, p=1, alpha=0:
  // H = [[1/2 - 1, 1], [2, 1/2 - 2]]
  const char* cfg = R"({
    "model": {"d": 1, "n": 2,
      "modes": [
        {"drift": ["0"], "sigma": 1.0},
        {"drift": ["0"], "sigma": 1.0}
      ],
      "rates": [["0", "1"], ["2", "0"]]},
    "domain": {"kind": "interval", "params": {"lo": -1, "hi": 1}}
  })";
  Problem p = load_problem(cfg);
  Matrix H = ac::hamiltonian(p.model, vec1(0.0), vec1(1.0), Vector::Zero(2));
  CHECK(H(0, 0) == doctest::Approx(-0.5).epsilon(1e-15));
  CHECK(H(0, 1) == 1.0);
  CHECK(H(1, 0) == 2.0);
  CHECK(H(1, 1) == doctest::Approx(-1.5).epsilon(1e-15));
}

TEST_CASE("principal eigen of a zero-row-sum generator") {
  Matrix G(2, 2);
  G << -1, 1, 2, -2;
  ac::PrincipalEig e = ac::principal_eigen(G);
  CHECK(std::abs(e.lambda) <= 1e-10);
  CHECK(e.right[0] == doctest::Approx(e.right[1]).epsilon(1e-10));  // constant vector
  CHECK((G * e.right - e.lambda * e.right).cwiseAbs().maxCoeff() <= 1e-10);
  CHECK((e.left.transpose() * G).cwiseAbs().maxCoeff() <= 1e-10);
  CHECK(e.left.dot(e.right) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("principal eigen 1x1") {
  Matrix H(1, 1);
  H << -3.25;
  CHECK(ac::principal_eigen(H).lambda == -3.25);
}

TEST_CASE("principal eigen vs characteristic-polynomial oracle on random 3x3 Metzler") {
  std::mt19937_64 rng(123);
  for (int i = 0; i < 100; ++i) {
    Matrix H = exitlab::testing::random_metzler(rng, 3);
    ac::PrincipalEig e = ac::principal_eigen(H);
    double oracle = exitlab::testing::perron_root_3x3_charpoly(H);
    CHECK(e.lambda == doctest::Approx(oracle).epsilon(1e-9));
    CHECK((H * e.right - e.lambda * e.right).cwiseAbs().maxCoeff() <= 1e-10 * (1 + std::abs(e.lambda)));
    for (int k = 0; k < 3; ++k) {
      CHECK(e.right[k] > 0.0);
      CHECK(e.left[k] > 0.0);
    }
  }
}

TEST_CASE("eigen gradients at the origin recover f_av and omega") {
  Problem p = m_star();
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  for (int i = 0; i < 100; ++i) {
    Vector x = vec1(uni(rng));
    ac::EigGrad g = ac::eigen_and_grad(p.model, x, Vector::Zero(1), Vector::Zero(2));
    CHECK(std::abs(g.lambda) <= 1e-10);
    Vector fav = sw::averaged_field(p.model, x);
    Vector omega = sw::stationary_distribution(sw::generator_matrix(p.model, x));
    CHECK(std::abs(g.grad_p[0] - fav[0]) <= 1e-6);
    CHECK((g.grad_alpha - omega).cwiseAbs().maxCoeff() <= 1e-6);
  }
}

TEST_CASE("eigen gradients match central finite differences") {
  Problem prob = m_star();
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  const double h = 1e-6;
  for (int i = 0; i < 100; ++i) {
    Vector x = vec1(uni(rng));
    Vector p = vec1(2.0 * uni(rng));
    Vector alpha(2);
    alpha << uni(rng), uni(rng);
    ac::HamiltonianEvaluator ev(prob.model, x);
    ac::EigGrad g = ev.eig_grad(p, alpha);

    Vector pp = p, pm = p;
    pp[0] += h;
    pm[0] -= h;
    double fd_p = (ev.eig(pp, alpha).lambda - ev.eig(pm, alpha).lambda) / (2 * h);
    CHECK(std::abs(g.grad_p[0] - fd_p) <= 1e-6 * (1.0 + std::abs(fd_p)));

    for (int k = 0; k < 2; ++k) {
      Vector ap = alpha, am = alpha;
      ap[k] += h;
      am[k] -= h;
      double fd_a = (ev.eig(p, ap).lambda - ev.eig(p, am).lambda) / (2 * h);
      CHECK(std::abs(g.grad_alpha[k] - fd_a) <= 1e-6 * (1.0 + std::abs(fd_a)));
    }
  }
}

TEST_CASE("alpha shift property") {
  Problem prob = m_star();
  ac::HamiltonianEvaluator ev(prob.model, vec1(0.2));
  Vector p = vec1(0.8);
  Vector alpha(2);
  alpha << 0.3, -0.4;
  const double c = 3.7;
  double base = ev.eig(p, alpha).lambda;
  double shifted = ev.eig(p, Vector(alpha.array() + c)).lambda;
  CHECK(shifted == doctest::Approx(base + c).epsilon(1e-10));
  ac::EigGrad g0 = ev.eig_grad(p, alpha);
  ac::EigGrad g1 = ev.eig_grad(p, Vector(alpha.array() + c));
  CHECK((g0.grad_alpha - g1.grad_alpha).cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("lambda is midpoint-convex in (p, alpha)") {
  Problem prob = m_star();
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> uni(-2.0, 2.0);
  std::uniform_real_distribution<double> ux(-0.9, 0.9);
  for (int i = 0; i < 1000; ++i) {
    ac::HamiltonianEvaluator ev(prob.model, vec1(ux(rng)));
    Vector p1 = vec1(uni(rng)), p2 = vec1(uni(rng));
    Vector a1(2), a2(2);
    a1 << uni(rng), uni(rng);
    a2 << uni(rng), uni(rng);
    double mid = ev.eig(0.5 * (p1 + p2), 0.5 * (a1 + a2)).lambda;
    double avg = 0.5 * (ev.eig(p1, a1).lambda + ev.eig(p2, a2).lambda);
    CHECK(mid <= avg + 1e-10);
  }
}

TEST_CASE("eta vanishes at the averaged velocity and stationary occupation") {
  Problem prob = m_star();
  for (double xv : {-0.6, 0.0, 0.45}) {
    Vector x = vec1(xv);
    Vector fav = sw::averaged_field(prob.model, x);
    Vector omega = sw::stationary_distribution(sw::generator_matrix(prob.model, x));
    double eta = ac::legendre_eta(prob.model, x, fav, omega);
    CHECK(eta >= 0.0);
    CHECK(eta <= 1e-8);
  }
}

TEST_CASE("eta is +infinity off the simplex") {
  Problem prob = m_star();
  Vector beta(2);
  beta << 0.5, 0.6;  // sum 1.1
  CHECK(std::isinf(ac::legendre_eta(prob.model, vec1(0.1), vec1(0.0), beta)));
  beta << 1.2, -0.2;  // negative component
  CHECK(std::isinf(ac::legendre_eta(prob.model, vec1(0.1), vec1(0.0), beta)));
}

TEST_CASE("n=1 closed forms: lambda, eta, rho") {
  Problem prob = ou_problem();  // ftilde = -x, a = 1
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> uni(-2.0, 2.0);
  Vector one = Vector::Ones(1);
  for (int i = 0; i < 40; ++i) {
    double xv = 0.9 * std::sin(static_cast<double>(i));
    double qv = uni(rng);
    Vector x = vec1(xv), q = vec1(qv);
    // lambda(x, p, alpha) = p^2/2 + p ftilde + alpha
    ac::HamiltonianEvaluator ev(prob.model, x);
    double pv = uni(rng), av = uni(rng);
    CHECK(ev.eig(vec1(pv), vec1(av)).lambda ==
          doctest::Approx(0.5 * pv * pv - pv * xv + av).epsilon(1e-10));
    // rho(x, q) = (q - ftilde)^2 / 2 = (q + x)^2 / 2
    double rho = ac::legendre_rho(prob.model, x, q);
    CHECK(rho == doctest::Approx(0.5 * (qv + xv) * (qv + xv)).epsilon(1e-10));
    CHECK(rho >= 0.0);
    // eta with the only admissible beta = (1) equals rho
    double eta = ac::legendre_eta(prob.model, x, q, one);
    CHECK(eta == doctest::Approx(rho).epsilon(1e-10));
  }
}

TEST_CASE("rho vanishes on the averaged field") {
  Problem prob = m_star();
  for (double xv : {-0.7, 0.1, 0.6}) {
    Vector x = vec1(xv);
    double rho = ac::legendre_rho(prob.model, x, sw::averaged_field(prob.model, x));
    CHECK(rho >= 0.0);
    CHECK(rho <= 1e-10);
  }
}

namespace {

// The averaged trajectory with occupation running at omega along it.
ac::DiscretizedPath averaged_path(const SwitchingModel& model, const Vector& x0, double T, int N) {
  ac::DiscretizedPath path;
  double dt = T / (N - 1);
  sw::Flow flow = sw::flow([&](const Vector& x) { return sw::averaged_field(model, x); }, x0, T,
                           dt / 8.0);
  auto at_time = [&](double t) {
    // dense flow sampled at t (grid multiple of dt/8)
    std::size_t idx = std::min(flow.x.size() - 1,
                               static_cast<std::size_t>(std::lround(t / (dt / 8.0))));
    return flow.x[idx];
  };
  std::vector<Vector> mu(static_cast<std::size_t>(N), Vector::Zero(model.n));
  path.t.resize(static_cast<std::size_t>(N));
  path.phi.resize(static_cast<std::size_t>(N));
  for (int i = 0; i < N; ++i) {
    path.t[static_cast<std::size_t>(i)] = i * dt;
    path.phi[static_cast<std::size_t>(i)] = at_time(i * dt);
  }
  for (int i = 1; i < N; ++i) {
    Vector mid = at_time((i - 0.5) * dt);
    Vector omega = sw::stationary_distribution(sw::generator_matrix(model, mid));
    omega /= omega.sum();
    mu[static_cast<std::size_t>(i)] = mu[static_cast<std::size_t>(i - 1)] + dt * omega;
  }
  path.mu = std::move(mu);
  return path;
}

}  // namespace

TEST_CASE("averaged trajectory has near-zero action S and I") {
  Problem prob = m_star();
  ac::DiscretizedPath path = averaged_path(prob.model, vec1(0.8), 4.0, 200);
  double S = ac::path_action_S(prob.model, path);
  CHECK(S >= 0.0);
  CHECK(S <= 1e-4);
  double I = ac::path_action_I(prob.model, path);
  CHECK(I >= 0.0);
  CHECK(I <= 1e-4);
}

TEST_CASE("paths violating the occupation constraint cost +infinity") {
  Problem prob = m_star();
  ac::DiscretizedPath path = averaged_path(prob.model, vec1(0.8), 2.0, 50);
  (*path.mu)[20][0] += 0.1;  // breaks sum mu_k(t) = t on segments 19/20
  CHECK(std::isinf(ac::path_action_S(prob.model, path)));
}

TEST_CASE("time-dependent variant degenerates to S for constant rates") {
  Problem prob = m_star();
  ac::DiscretizedPath path = averaged_path(prob.model, vec1(0.5), 2.0, 60);
  // make it a non-trivial path so S > 0
  for (std::size_t i = 0; i < path.phi.size(); ++i)
    path.phi[i][0] += 0.1 * std::sin(3.0 * path.t[i]);
  ac::RatesClock clock;
  clock.n = 2;
  clock.offdiag = [](double) {
    Matrix g(2, 2);
    g << 0, 1, 2, 0;
    return g;
  };
  double S = ac::path_action_S(prob.model, path);
  double S_td = ac::path_action_S_td(prob.model, clock, path);
  CHECK(S > 1e-4);
  CHECK(S_td == doctest::Approx(S).epsilon(1e-12));
}

TEST_CASE("straight-path contraction action: hand-integrated value 7/6") {
  Problem prob = ou_problem();
  const int N = 400;
  ac::DiscretizedPath path;
  for (int i = 0; i < N; ++i) {
    double t = static_cast<double>(i) / (N - 1);
    path.t.push_back(t);
    path.phi.push_back(vec1(t));
  }
  double I = ac::path_action_I(prob.model, path);
  // integral of (1 + t)^2 / 2 over [0, 1] = 7/6
  CHECK(I == doctest::Approx(7.0 / 6.0).epsilon(5e-5));
}

TEST_CASE("refinement N -> 2N changes I at first order or better") {
  Problem prob = ou_problem();
  auto straight = [&](int N) {
    ac::DiscretizedPath path;
    for (int i = 0; i < N; ++i) {
      double t = static_cast<double>(i) / (N - 1);
      path.t.push_back(t);
      path.phi.push_back(vec1(0.3 + 0.5 * t + 0.05 * std::sin(2 * t)));
    }
    return ac::path_action_I(prob.model, path);
  };
  for (int N : {50, 100, 200}) {
    double diff = std::abs(straight(2 * N) - straight(N));
    CHECK(diff < 2.0 / N);
  }
}

TEST_CASE("simplex grid covers the simplex") {
  auto grid = ac::simplex_grid(2, 0.02);
  CHECK(grid.size() == 51);
  for (const auto& b : grid) {
    CHECK(b.sum() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(b.minCoeff() >= 0.0);
  }
  CHECK(ac::simplex_grid(3, 0.1).size() == 66);  // (N+1)(N+2)/2 with N=10
}

TEST_CASE("eta/rho consistency: n=1 simplex is a single point") {
  Problem prob = ou_problem();
  auto grid = ac::simplex_grid(1, 0.02);
  REQUIRE(grid.size() == 1);
  ac::EtaRhoReport rep =
      ac::eta_rho_consistency(prob.model, vec1(0.2), vec1(1.1), grid);
  CHECK(rep.min_eta == doctest::Approx(rep.rho).epsilon(1e-10));
  CHECK(rep.lower_bound_ok);
}

TEST_CASE("eta/rho consistency on the reference model") {
  Problem prob = m_star();
  auto grid = ac::simplex_grid(2, 0.02);
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> ux(-0.9, 0.9);
  std::uniform_real_distribution<double> uq(-2.0, 2.0);
  for (int i = 0; i < 5; ++i) {
    Vector x = vec1(ux(rng));
    Vector q = vec1(uq(rng));
    ac::EtaRhoReport rep = ac::eta_rho_consistency(prob.model, x, q, grid);
    CHECK(rep.lower_bound_ok);
    CHECK(rep.min_eta <= rep.rho + 0.05);
  }
  // the zero case: q = f_av gives rho = 0; the grid minimum of eta sits
  // within the grid-resolution slack of zero (omega is off-grid).
  Vector x = vec1(0.3);
  ac::EtaRhoReport rep =
      ac::eta_rho_consistency(prob.model, x, sw::averaged_field(prob.model, x), grid);
  CHECK(rep.rho <= 1e-10);
  CHECK(rep.min_eta <= 0.05);
}
