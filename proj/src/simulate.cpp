#include "exitlab/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "exitlab/io.hpp"
#include "exitlab/parallel.hpp"
#include "exitlab/rng.hpp"

namespace exitlab::sim {

namespace {

using ordered_json = nlohmann::ordered_json;

// RNG stream layout per (trial, salt): two substreams, one for the
// diffusion noise and one for jump thinning. The salt keeps auxiliary
// runs (pilots, per-point estimates) off the main trial streams.
std::uint64_t stream_id(std::uint64_t trial, int purpose, std::uint64_t salt) {
  return (salt << 40) | (trial << 1) | static_cast<std::uint64_t>(purpose);
}

// Uniform bound on the total switching intensity over the closed
// domain, from a deterministic lattice sample times a safety factor.
double sample_rate_bound(const SwitchingModel& model, const DomainGeometry& domain) {
  if (model.n == 1) return 0.0;
  auto [lo, hi] = domain.bounding_box();
  const int per_axis = std::max(4, static_cast<int>(std::lround(
                                       std::pow(2048.0, 1.0 / model.d))));
  std::vector<double> x(static_cast<std::size_t>(model.d));
  std::vector<double> row(static_cast<std::size_t>(model.n));
  std::vector<int> idx(static_cast<std::size_t>(model.d), 0);
  double worst = 0.0;
  while (true) {
    for (int i = 0; i < model.d; ++i)
      x[static_cast<std::size_t>(i)] =
          lo[i] + (hi[i] - lo[i]) * idx[static_cast<std::size_t>(i)] / (per_axis - 1);
    if (domain.level(x) <= 1e-12) {
      for (int k = 0; k < model.n; ++k) {
        model.rates_row(k, x, row.data());
        double total = std::accumulate(row.begin(), row.end(), 0.0);
        worst = std::max(worst, total);
      }
    }
    int axis = 0;
    while (axis < model.d && ++idx[static_cast<std::size_t>(axis)] == per_axis) {
      idx[static_cast<std::size_t>(axis)] = 0;
      ++axis;
    }
    if (axis == model.d) break;
  }
  if (!(worst > 0.0)) throw NumericsError("could not bound the switching intensity over the domain");
  return 1.5 * worst;
}

struct TrialSummary {
  bool exited = false;
  double tau = 0.0;
  Vector y;
  int exit_mode = 0;
  Vector occupation;
  Vector final_state;
};

class Recorder {
 public:
  virtual ~Recorder() = default;
  virtual void on_grid_point(double t, std::span<const double> x, int mode) = 0;
};

class FullRecorder : public Recorder {
 public:
  TrajectorySample sample;
  void on_grid_point(double t, std::span<const double> x, int mode) override {
    if (sample.t.size() > 20'000'000)
      throw ConfigError("trajectory recording exceeds the memory cap; raise dt or lower horizon");
    sample.t.push_back(t);
    sample.x.push_back(Eigen::Map<const Vector>(x.data(), static_cast<Index>(x.size())));
    sample.mode.push_back(mode);
  }
};

// Specialized stepper for the 1d interval case with constant scalar
// sigma: the acceptance studies burn billions of steps here, so the
// loop works on plain doubles with no span or Vector traffic.
TrialSummary run_trial_1d(const SwitchingModel& model, const DomainGeometry& domain, double eps,
                          double x0, int start_mode, double dt, double horizon,
                          std::uint64_t seed, std::uint64_t trial, std::uint64_t salt,
                          double rate_bound, Recorder* recorder) {
  const int n = model.n;
  const double lo = domain.lo1();
  const double hi = domain.hi1();

  rng::CounterStream noise(seed, stream_id(trial, 0, salt));
  rng::CounterStream jumps(seed, stream_id(trial, 1, salt));

  const fieldlang::Program* drift_prog[16];
  double sigma_scalar[16];
  const fieldlang::Program* rate_prog[16][16];
  for (int k = 0; k < n; ++k) {
    drift_prog[k] = &model.modes[static_cast<std::size_t>(k)].drift.components[0].program;
    sigma_scalar[k] = model.modes[static_cast<std::size_t>(k)].sigma.scalar;
    for (int m = 0; m < n; ++m)
      rate_prog[k][m] =
          k == m ? nullptr
                 : &model.rates[static_cast<std::size_t>(k)][static_cast<std::size_t>(m)]->program;
  }
  const double rate_scale = model.rate_scale;

  double x = x0;
  double occ[16] = {0.0};
  int mode = start_mode;
  double t = 0.0;
  std::uint64_t grid_idx = 0;
  double next_jump = n > 1 ? jumps.exponential(rate_bound) : kInfinity;
  const bool noisy = eps > 0.0;

  if (recorder != nullptr) recorder->on_grid_point(0.0, std::span<const double>(&x, 1), mode);

  auto eval1 = [&](const fieldlang::Program& prog, double xv) {
    fieldlang::EvalResult r = prog.run(std::span<const double>(&xv, 1));
    if (!r.ok()) throw FieldEvalError(std::string("field evaluation: ") + r.error);
    return r.value;
  };

  TrialSummary out;
  while (t < horizon) {
    const double grid_next = dt * static_cast<double>(grid_idx + 1);
    double t_next = std::min(grid_next, horizon);
    bool jump_step = false;
    if (next_jump <= t_next) {
      t_next = next_jump;
      jump_step = true;
    }
    const double h = t_next - t;

    if (h > 0.0) {
      double f = eval1(*drift_prog[mode], x);
      double x_new = x + h * f;
      if (noisy) x_new += sigma_scalar[mode] * std::sqrt(eps * h) * noise.normal();
      occ[mode] += h;
      if (x_new <= lo || x_new >= hi) {
        const double target = x_new >= hi ? hi : lo;
        double s = x_new == x ? 1.0 : std::clamp((target - x) / (x_new - x), 0.0, 1.0);
        out.exited = true;
        out.tau = t + s * h;
        out.y = Vector::Constant(1, target);
        out.exit_mode = mode;
        occ[mode] -= (1.0 - s) * h;
        out.occupation = Eigen::Map<const Vector>(occ, n);
        out.final_state = out.y;
        return out;
      }
      x = x_new;
    }
    t = t_next;

    if (jump_step) {
      double row[16];
      double total = 0.0;
      for (int m = 0; m < n; ++m) {
        row[m] = m == mode ? 0.0 : eval1(*rate_prog[mode][m], x) * rate_scale;
        total += row[m];
      }
      if (total > rate_bound)
        throw NumericsError(
            "switching intensity exceeded the thinning bound; rerun with a larger bound");
      double u = jumps.uniform() * rate_bound;
      if (u < total) {
        double acc = 0.0;
        for (int m = 0; m < n; ++m) {
          acc += row[m];
          if (u < acc) {
            mode = m;
            break;
          }
        }
      }
      next_jump = t + jumps.exponential(rate_bound);
    }

    if (t == grid_next) {
      ++grid_idx;
      if (recorder != nullptr) recorder->on_grid_point(t, std::span<const double>(&x, 1), mode);
    }
  }

  out.exited = false;
  out.tau = horizon;
  out.exit_mode = mode;
  out.occupation = Eigen::Map<const Vector>(occ, n);
  out.final_state = Vector::Constant(1, x);
  return out;
}

// One trial of the Euler-Maruyama + thinning scheme. Within a step the
// order is jump-then-diffuse: a candidate jump at time t is resolved at
// the state X(t-) before the next diffusion substep.
TrialSummary run_trial(const SwitchingModel& model, const DomainGeometry& domain, double eps,
                       const Vector& x0, int start_mode, double dt, double horizon,
                       std::uint64_t seed, std::uint64_t trial, std::uint64_t salt,
                       double rate_bound, Recorder* recorder) {
  const int d = model.d;
  const int n = model.n;
  if (!(dt > 0.0)) throw ConfigError("dt must be positive");
  if (domain.level(x0) > 0.0) throw ConfigError("x0 must lie in the closed domain");
  if (start_mode < 0 || start_mode >= n) throw ConfigError("start mode out of range");

  const bool scalar_sigma_all =
      std::all_of(model.modes.begin(), model.modes.end(), [](const ModeDynamics& m) {
        return m.sigma.kind == SigmaSpec::Kind::ConstantScalar;
      });
  if (d == 1 && n <= 16 && scalar_sigma_all &&
      domain.kind() == DomainGeometry::Kind::Interval) {
    return run_trial_1d(model, domain, eps, x0[0], start_mode, dt, horizon, seed, trial, salt,
                        rate_bound, recorder);
  }

  rng::CounterStream noise(seed, stream_id(trial, 0, salt));
  rng::CounterStream jumps(seed, stream_id(trial, 1, salt));

  std::vector<double> x(x0.data(), x0.data() + d);
  std::vector<double> x_new(static_cast<std::size_t>(d));
  std::vector<double> drift(static_cast<std::size_t>(d));
  std::vector<double> xi(static_cast<std::size_t>(d));
  std::vector<double> row(static_cast<std::size_t>(n));
  Vector occupation = Vector::Zero(n);

  int mode = start_mode;
  double t = 0.0;
  std::uint64_t grid_idx = 0;
  const double noise_on = eps > 0.0 ? 1.0 : 0.0;
  double next_jump = n > 1 ? jumps.exponential(rate_bound) : kInfinity;

  const ModeDynamics* modes = model.modes.data();
  const bool scalar_sigma =
      std::all_of(model.modes.begin(), model.modes.end(), [](const ModeDynamics& m) {
        return m.sigma.kind == SigmaSpec::Kind::ConstantScalar;
      });

  if (recorder != nullptr) recorder->on_grid_point(0.0, x, mode);

  TrialSummary out;
  while (t < horizon) {
    const double grid_next = dt * static_cast<double>(grid_idx + 1);
    double t_next = std::min(grid_next, horizon);
    bool jump_step = false;
    if (next_jump < t_next) {
      t_next = next_jump;
      jump_step = true;
    } else if (next_jump == t_next) {
      jump_step = true;
    }
    const double h = t_next - t;

    if (h > 0.0) {
      const ModeDynamics& md = modes[mode];
      md.drift.eval_into(x, drift.data());
      if (noise_on > 0.0) {
        const double root = std::sqrt(eps * h);
        if (scalar_sigma) {
          const double s = md.sigma.scalar * root;
          for (int i = 0; i < d; ++i)
            x_new[static_cast<std::size_t>(i)] =
                x[static_cast<std::size_t>(i)] + h * drift[static_cast<std::size_t>(i)] +
                s * noise.normal();
        } else {
          for (int i = 0; i < d; ++i) xi[static_cast<std::size_t>(i)] = noise.normal();
          Matrix sg = md.sigma.at(Eigen::Map<const Vector>(x.data(), d));
          for (int i = 0; i < d; ++i) {
            double acc = 0.0;
            for (int j = 0; j < d; ++j) acc += sg(i, j) * xi[static_cast<std::size_t>(j)];
            x_new[static_cast<std::size_t>(i)] =
                x[static_cast<std::size_t>(i)] + h * drift[static_cast<std::size_t>(i)] +
                root * acc;
          }
        }
      } else {
        for (int i = 0; i < d; ++i)
          x_new[static_cast<std::size_t>(i)] =
              x[static_cast<std::size_t>(i)] + h * drift[static_cast<std::size_t>(i)];
      }
      occupation[mode] += h;

      if (domain.level(x_new) >= 0.0) {
        Vector a = Eigen::Map<const Vector>(x.data(), d);
        Vector b = Eigen::Map<const Vector>(x_new.data(), d);
        double s = domain.crossing_fraction(a, b);
        out.exited = true;
        out.tau = t + s * h;
        out.y = domain.project_to_boundary(a + s * (b - a));
        out.exit_mode = mode;
        occupation[mode] -= (1.0 - s) * h;  // only the time until the crossing counts
        out.occupation = occupation;
        out.final_state = out.y;
        return out;
      }
      std::swap(x, x_new);
      t = t_next;
    } else {
      t = t_next;
    }

    if (jump_step) {
      model.rates_row(mode, x, row.data());
      double total = std::accumulate(row.begin(), row.end(), 0.0);
      if (total > rate_bound)
        throw NumericsError(
            "switching intensity exceeded the thinning bound; rerun with a larger bound");
      double u = jumps.uniform() * rate_bound;
      if (u < total) {
        double acc = 0.0;
        int target = mode;
        for (int m = 0; m < n; ++m) {
          acc += row[static_cast<std::size_t>(m)];
          if (u < acc) {
            target = m;
            break;
          }
        }
        mode = target;
      }
      next_jump = t + jumps.exponential(rate_bound);
    }

    if (t == grid_next) {
      ++grid_idx;
      if (recorder != nullptr) recorder->on_grid_point(t, x, mode);
    }
  }

  out.exited = false;
  out.tau = horizon;
  out.exit_mode = mode;
  out.occupation = occupation;
  out.final_state = Eigen::Map<const Vector>(x.data(), d);
  return out;
}

}  // namespace

TrajectorySample simulate_path(const SwitchingModel& model, const DomainGeometry& domain,
                               double eps, const Vector& x0, int start_mode, double dt,
                               double horizon, std::uint64_t seed) {
  if (eps < 0.0) throw ConfigError("eps must be nonnegative");
  const double bound = model.n > 1 ? sample_rate_bound(model, domain) : 0.0;
  FullRecorder rec;
  TrialSummary s = run_trial(model, domain, eps, x0, start_mode, dt, horizon, seed, 0, 0, bound,
                             &rec);
  TrajectorySample sample = std::move(rec.sample);
  sample.occupation = s.occupation;
  sample.exit.kind = s.exited ? ExitEvent::Kind::Exited : ExitEvent::Kind::Censored;
  sample.exit.tau = s.tau;
  sample.exit.mode = s.exit_mode;
  if (s.exited) sample.exit.y = s.y;
  return sample;
}

namespace {

double auto_horizon(const SwitchingModel& model, const DomainGeometry& domain, double eps,
                    const Vector& x0, int start_mode, double dt, std::uint64_t base_seed,
                    double rate_bound) {
  // Pilot trials on a doubling horizon until at least half exit, then
  // 50 mean exit times.
  const int pilot = 192;
  double H = 512.0 * dt;
  for (int round = 0; round < 24; ++round) {
    int exited = 0;
    double sum_tau = 0.0;
    for (int i = 0; i < pilot; ++i) {
      TrialSummary s = run_trial(model, domain, eps, x0, start_mode, dt, H, base_seed,
                                 static_cast<std::uint64_t>(i), /*salt=*/0x9a17, rate_bound,
                                 nullptr);
      if (s.exited) {
        ++exited;
        sum_tau += s.tau;
      }
    }
    if (exited >= pilot / 2) return 50.0 * (sum_tau / exited);
    H *= 4.0;
  }
  throw NumericsError("automatic horizon selection failed: trajectories do not exit");
}

}  // namespace

ExitStatistics run_monte_carlo(const SwitchingModel& model, const DomainGeometry& domain,
                               double eps, const Vector& x0, int start_mode, double dt,
                               double horizon, int trials, std::uint64_t base_seed, double delta,
                               const std::optional<Vector>& ybar_hint, const McSettings& settings,
                               const std::vector<Vector>* boundary_mesh) {
  if (trials < 1) throw ConfigError("trials must be >= 1");
  const double rate_bound = model.n > 1 ? sample_rate_bound(model, domain) : 0.0;
  if (horizon <= 0.0)
    horizon = auto_horizon(model, domain, eps, x0, start_mode, dt, base_seed, rate_bound);

  std::vector<TrialSummary> summaries(static_cast<std::size_t>(trials));
  parallel_for(static_cast<std::size_t>(trials), settings.workers, [&](std::size_t i) {
    summaries[i] = run_trial(model, domain, eps, x0, start_mode, dt, horizon, base_seed,
                             static_cast<std::uint64_t>(i), 0, rate_bound, nullptr);
  });

  ExitStatistics st;
  st.trials = trials;
  st.eps = eps;
  st.dt = dt;
  st.horizon = horizon;
  st.base_seed = base_seed;
  st.x0 = x0;
  st.start_mode = start_mode;
  st.delta = delta;
  st.mesh = boundary_mesh != nullptr ? *boundary_mesh
                                     : domain.boundary_mesh(settings.boundary_mesh_target);
  st.histogram_mass.assign(st.mesh.size(), 0.0);
  st.mode_frequency.assign(static_cast<std::size_t>(model.n), 0.0);
  if (ybar_hint) st.ybar_hint = *ybar_hint;

  double sum_tau = 0.0;
  int concentrated = 0;
  for (const TrialSummary& s : summaries) {  // trial order: deterministic fold
    if (!s.exited) {
      ++st.n_censored;
      continue;
    }
    ++st.n_exited;
    sum_tau += s.tau;
    st.exit_times_sorted.push_back(s.tau);
    st.mode_frequency[static_cast<std::size_t>(s.exit_mode)] += 1.0;
    if (!st.mesh.empty()) {
      std::size_t best = 0;
      double best_d = kInfinity;
      for (std::size_t j = 0; j < st.mesh.size(); ++j) {
        double dd = (s.y - st.mesh[j]).norm();
        if (dd < best_d) {
          best_d = dd;
          best = j;
        }
      }
      st.histogram_mass[best] += 1.0;
    }
    if (ybar_hint && (s.y - *ybar_hint).norm() <= delta) ++concentrated;
  }
  std::sort(st.exit_times_sorted.begin(), st.exit_times_sorted.end());
  st.exit_fraction = static_cast<double>(st.n_exited) / trials;
  st.degenerate = st.n_exited == 0;
  st.mean_exit_time = st.degenerate ? 0.0 : sum_tau / st.n_exited;
  for (double& m : st.histogram_mass) m /= trials;
  if (st.n_exited > 0)
    for (double& f : st.mode_frequency) f /= st.n_exited;
  if (ybar_hint && st.n_exited > 0) {
    st.concentration_fraction = static_cast<double>(concentrated) / st.n_exited;
    st.concentration_se = std::sqrt(std::max(
        st.concentration_fraction * (1.0 - st.concentration_fraction), 1.0 / st.n_exited) /
        st.n_exited);
  }

  // Survival grid out to the practically interesting range.
  double t_max = horizon;
  if (!st.degenerate) {
    std::size_t q = st.exit_times_sorted.size() -
                    std::min<std::size_t>(st.exit_times_sorted.size() - 1,
                                          std::max<std::size_t>(1, st.exit_times_sorted.size() / 100));
    t_max = std::min(horizon, 1.25 * st.exit_times_sorted[q] + dt);
  }
  const int M = std::max(8, settings.survival_points);
  st.survival_t.resize(static_cast<std::size_t>(M));
  st.survival_p.resize(static_cast<std::size_t>(M));
  for (int i = 0; i < M; ++i) {
    double tt = t_max * i / (M - 1);
    st.survival_t[static_cast<std::size_t>(i)] = tt;
    st.survival_p[static_cast<std::size_t>(i)] = st.survival_at(tt);
  }

  // Default tail window from survival levels.
  if (!st.degenerate) {
    double t_lo = -1.0, t_hi = -1.0;
    double lo_level = std::max(settings.window_lo_level, 20.0 / trials);
    for (int i = 0; i < M; ++i) {
      if (t_lo < 0.0 && st.survival_p[static_cast<std::size_t>(i)] <= settings.window_hi_level)
        t_lo = st.survival_t[static_cast<std::size_t>(i)];
      if (st.survival_p[static_cast<std::size_t>(i)] >= lo_level)
        t_hi = st.survival_t[static_cast<std::size_t>(i)];
    }
    if (t_lo >= 0.0 && t_hi > t_lo) {
      try {
        st.tail_rate = estimate_exit_rate(st, t_lo, t_hi);
      } catch (const ExitlabError&) {
        st.tail_rate.ok = false;
      }
    }
  }
  return st;
}

double ExitStatistics::survival_at(double t) const {
  // exited trials with tau > t, plus all censored trials (tau > horizon)
  auto it = std::upper_bound(exit_times_sorted.begin(), exit_times_sorted.end(), t);
  std::size_t later = static_cast<std::size_t>(exit_times_sorted.end() - it);
  double surviving = static_cast<double>(later) + (t < horizon ? n_censored : 0);
  return surviving / trials;
}

RateEstimate estimate_exit_rate(const ExitStatistics& stats, double t_lo, double t_hi) {
  std::vector<double> ts, ys;
  for (std::size_t i = 0; i < stats.survival_t.size(); ++i) {
    double t = stats.survival_t[i];
    double p = stats.survival_p[i];
    if (t < t_lo || t > t_hi || p <= 0.0) continue;
    ts.push_back(t);
    ys.push_back(-std::log(p));
  }
  if (ts.size() < 3)
    throw ConfigError("estimate_exit_rate: fewer than 3 usable grid points in the window");
  const double n = static_cast<double>(ts.size());
  double st = 0.0, sy = 0.0, stt = 0.0, sty = 0.0;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    st += ts[i];
    sy += ys[i];
    stt += ts[i] * ts[i];
    sty += ts[i] * ys[i];
  }
  const double denom = n * stt - st * st;
  if (denom <= 0.0) throw NumericsError("estimate_exit_rate: degenerate time grid");
  RateEstimate est;
  est.lambda = (n * sty - st * sy) / denom;
  const double intercept = (sy - est.lambda * st) / n;
  double ss_res = 0.0;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    double r = ys[i] - (intercept + est.lambda * ts[i]);
    ss_res += r * r;
  }
  est.se = ts.size() > 2 ? std::sqrt(ss_res / (n - 2.0) / (stt - st * st / n)) : 0.0;
  est.t_lo = t_lo;
  est.t_hi = t_hi;
  est.points = static_cast<int>(ts.size());
  est.ok = true;
  return est;
}

TrajectorySample pdmp_simulate(const SwitchingModel& model, const DomainGeometry& domain,
                               const Vector& x0, int start_mode, double dt, double horizon,
                               std::uint64_t seed) {
  const int d = model.d;
  const int n = model.n;
  if (!(dt > 0.0)) throw ConfigError("dt must be positive");
  if (domain.level(x0) > 0.0) throw ConfigError("x0 must lie in the closed domain");
  rng::CounterStream jumps(seed, stream_id(0, 1, 0));

  TrajectorySample sample;
  Vector x = x0;
  int mode = start_mode;
  double t = 0.0;
  Vector occupation = Vector::Zero(n);
  sample.t.push_back(0.0);
  sample.x.push_back(x);
  sample.mode.push_back(mode);

  std::vector<double> row(static_cast<std::size_t>(n));
  auto intensity = [&](const Vector& state) {
    if (n == 1) return 0.0;
    model.rates_row(mode, std::span<const double>(state.data(), static_cast<std::size_t>(d)),
                    row.data());
    return std::accumulate(row.begin(), row.end(), 0.0);
  };
  auto rk4 = [&](const Vector& state, double h) {
    const VectorField& f = model.modes[static_cast<std::size_t>(mode)].drift;
    Vector k1 = f(state);
    Vector k2 = f(state + 0.5 * h * k1);
    Vector k3 = f(state + 0.5 * h * k2);
    Vector k4 = f(state + h * k3);
    return Vector(state + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4));
  };

  double target = n > 1 ? jumps.exponential(1.0) : kInfinity;
  double accumulated = 0.0;
  double s_prev = intensity(x);

  while (t < horizon) {
    const double h = std::min(dt, horizon - t);
    Vector x_next = rk4(x, h);
    double s_next = intensity(x_next);
    double increment = 0.5 * (s_prev + s_next) * h;

    if (domain.level(x_next) >= 0.0) {
      double s = domain.crossing_fraction(x, x_next);
      occupation[mode] += s * h;
      sample.exit.kind = ExitEvent::Kind::Exited;
      sample.exit.tau = t + s * h;
      sample.exit.y = domain.project_to_boundary(x + s * (x_next - x));
      sample.exit.mode = mode;
      sample.occupation = occupation;
      return sample;
    }

    if (accumulated + increment >= target && n > 1) {
      // time-change inversion within the step (linear in the integrated rate)
      double frac = increment > 0.0 ? (target - accumulated) / increment : 0.0;
      frac = std::clamp(frac, 0.0, 1.0);
      double hj = frac * h;
      Vector xj = rk4(x, hj);
      occupation[mode] += hj;
      t += hj;
      x = xj;
      // select the target mode proportionally to the rates at the jump state
      model.rates_row(mode, std::span<const double>(x.data(), static_cast<std::size_t>(d)),
                      row.data());
      double total = std::accumulate(row.begin(), row.end(), 0.0);
      double u = jumps.uniform() * total;
      double acc = 0.0;
      for (int m = 0; m < n; ++m) {
        acc += row[static_cast<std::size_t>(m)];
        if (u < acc) {
          mode = m;
          break;
        }
      }
      target = jumps.exponential(1.0);
      accumulated = 0.0;
      s_prev = intensity(x);
      continue;
    }

    accumulated += increment;
    occupation[mode] += h;
    t += h;
    x = x_next;
    s_prev = s_next;
    if (sample.t.size() > 20'000'000)
      throw ConfigError("trajectory recording exceeds the memory cap; raise dt or lower horizon");
    sample.t.push_back(t);
    sample.x.push_back(x);
    sample.mode.push_back(mode);
  }

  sample.exit.kind = ExitEvent::Kind::Censored;
  sample.exit.tau = horizon;
  sample.exit.mode = mode;
  sample.occupation = occupation;
  return sample;
}

std::vector<PointEstimate> stochastic_representation_estimate(
    const SwitchingModel& model, const DomainGeometry& domain, double eps,
    const std::vector<Vector>& points, int start_mode, const BoundaryData& boundary, int trials,
    std::uint64_t base_seed, double dt, double horizon, int workers) {
  for (const Vector& x : points)
    if (domain.level(x) >= 0.0) throw ConfigError("probe points must lie inside the domain");
  const double rate_bound = model.n > 1 ? sample_rate_bound(model, domain) : 0.0;

  std::vector<PointEstimate> out(points.size());
  const std::size_t total = points.size() * static_cast<std::size_t>(trials);
  std::vector<double> values(total, 0.0);
  std::vector<char> exited(total, 0);

  parallel_for(total, workers, [&](std::size_t task) {
    const std::size_t pt = task / static_cast<std::size_t>(trials);
    const std::size_t trial = task % static_cast<std::size_t>(trials);
    TrialSummary s = run_trial(model, domain, eps, points[pt], start_mode, dt, horizon, base_seed,
                               trial, /*salt=*/pt + 1, rate_bound, nullptr);
    if (s.exited) {
      values[task] = boundary.value(s.exit_mode, s.y);
      exited[task] = 1;
    }
  });

  for (std::size_t pt = 0; pt < points.size(); ++pt) {
    PointEstimate& est = out[pt];
    est.x = points[pt];
    est.start_mode = start_mode;
    double sum = 0.0, sum2 = 0.0;
    for (int i = 0; i < trials; ++i) {
      std::size_t task = pt * static_cast<std::size_t>(trials) + static_cast<std::size_t>(i);
      if (!exited[task]) {
        ++est.n_censored;
        continue;
      }
      ++est.n_exited;
      sum += values[task];
      sum2 += values[task] * values[task];
    }
    if (est.n_exited > 0) {
      est.mean = sum / est.n_exited;
      double var = std::max(0.0, sum2 / est.n_exited - est.mean * est.mean);
      est.se = std::sqrt(var / est.n_exited);
    }
    est.horizon_too_short = est.n_censored > trials / 2;
  }
  return out;
}

std::string ExitStatistics::to_json() const {
  ordered_json j;
  j["trials"] = trials;
  j["n_exited"] = n_exited;
  j["n_censored"] = n_censored;
  j["exit_fraction"] = exit_fraction;
  j["degenerate"] = degenerate;
  if (!degenerate) j["mean_exit_time"] = mean_exit_time;
  j["eps"] = eps;
  j["dt"] = dt;
  j["horizon"] = horizon;
  j["seed"] = base_seed;
  j["x0"] = std::vector<double>(x0.data(), x0.data() + x0.size());
  j["start_mode"] = start_mode + 1;
  j["mode_frequency"] = mode_frequency;
  if (ybar_hint.size() > 0) {
    j["ybar_hint"] = std::vector<double>(ybar_hint.data(), ybar_hint.data() + ybar_hint.size());
    j["delta"] = delta;
    j["concentration_fraction"] = concentration_fraction;
    j["concentration_se"] = concentration_se;
  }
  if (tail_rate.ok) {
    j["tail_rate"] = {{"lambda", tail_rate.lambda},
                      {"se", tail_rate.se},
                      {"window", {tail_rate.t_lo, tail_rate.t_hi}},
                      {"points", tail_rate.points}};
  }
  ordered_json hist = ordered_json::array();
  for (std::size_t i = 0; i < mesh.size(); ++i) {
    ordered_json row;
    row["y"] = std::vector<double>(mesh[i].data(), mesh[i].data() + mesh[i].size());
    row["mass"] = histogram_mass[i];
    hist.push_back(row);
  }
  j["exit_place_histogram"] = hist;
  return j.dump(2);
}

std::string ExitStatistics::survival_csv() const {
  io::CsvWriter csv({"t", "survival"});
  for (std::size_t i = 0; i < survival_t.size(); ++i) csv.row({survival_t[i], survival_p[i]});
  return csv.str();
}

std::string ExitStatistics::histogram_csv() const {
  std::vector<std::string> header;
  const int d = mesh.empty() ? 0 : static_cast<int>(mesh[0].size());
  for (int i = 1; i <= d; ++i) header.push_back("y" + std::to_string(i));
  header.push_back("mass");
  io::CsvWriter csv(header);
  for (std::size_t i = 0; i < mesh.size(); ++i) {
    std::vector<double> row(mesh[i].data(), mesh[i].data() + mesh[i].size());
    row.push_back(histogram_mass[i]);
    csv.row(row);
  }
  return csv.str();
}

}  // namespace exitlab::sim
