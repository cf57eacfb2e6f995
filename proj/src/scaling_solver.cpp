#include "gapctl/scaling.hpp"

#include "gapctl/numfmt.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <ostream>
#include <random>

namespace gapctl {

namespace {

constexpr double kPi = 3.14159265358979323846;

// Base-trajectory data on the rate grid plus the B/C bounds.
struct BaseTables {
  double step = 0.001;
  std::vector<JointVector> speed;  // |qd_b|
  std::vector<JointVector> accel;  // |qdd_b|
  double accel_bound = 0.0;
  double speed_bound = 0.0;

  BaseTables(const Trajectory& base, double rate_step) : step(rate_step) {
    const auto n = static_cast<std::size_t>(std::ceil(base.duration() / step)) + 1;
    speed.resize(n);
    accel.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double s = std::min(base.duration(), static_cast<double>(i) * step);
      speed[i] = base.sample(s).speed.cwiseAbs();
      accel[i] = base.acceleration(s).cwiseAbs();
    }
    accel_bound = base.max_abs_acceleration().maxCoeff();
    speed_bound = base.max_abs_speed().maxCoeff();
  }
  std::size_t size() const { return speed.size(); }

  // Largest |dr/dsigma| at grid point i and rate r keeping |qdd_s| within the headroom.
  double slope_limit(std::size_t i, double r, double headroom) const {
    double lim = std::numeric_limits<double>::infinity();
    for (int j = 0; j < kJoints; ++j) {
      const double room = accel_bound - r * r * accel[i][j];
      if (room <= 0.0) return 0.0;
      if (speed[i][j] > 0.0) lim = std::min(lim, headroom * room / (r * speed[i][j]));
    }
    return lim;
  }
};

class Solver {
 public:
  explicit Solver(const ScalingProblem& p)
      : p_(p), tables_(p.base, p.rate_step), law_(p.deviation_law()) {
    p_.validate();
  }

  const BaseTables& tables() const { return tables_; }

  // c on the critical segment and on the c * max_gap of base time after it,
  // so gaps starting inside the segment end before the ramp does.
  std::vector<double> target_static(double c) const {
    std::vector<double> g(tables_.size(), 1.0);
    const double end = p_.segment_end + c * p_.max_gap;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double s = static_cast<double>(i) * tables_.step;
      if (s >= p_.segment_start - tables_.step && s <= end + tables_.step) g[i] = c;
    }
    return g;
  }

  // Step III: slope-limited envelope below the target.
  PathRate shape(const std::vector<double>& target) const {
    PathRate r{tables_.step, target};
    auto& v = r.values;
    const double dx = tables_.step;
    const double k = p_.ramp_headroom;
    // The limit falls as the rate grows, so also bound it at the predicted end of the step.
    auto rise = [&](std::size_t from, std::size_t to, double rate) {
      const double s0 = tables_.slope_limit(from, rate, k);
      const double r1 = rate + s0 * dx;
      const double s1 = std::min({s0, tables_.slope_limit(from, r1, k), tables_.slope_limit(to, r1, k)});
      return rate + s1 * dx;
    };
    for (std::size_t i = 0; i + 1 < v.size(); ++i) v[i + 1] = std::min(v[i + 1], rise(i, i + 1, v[i]));
    for (std::size_t i = v.size() - 1; i-- > 0;) v[i] = std::min(v[i], rise(i + 1, i, v[i + 1]));
    return r;
  }

  ScaledTrajectory build(const PathRate& rate) const {
    return ScaledTrajectory(p_.base, scaling_from_path_rate(rate, p_.base.duration()));
  }

  // Max |qdd_s| and |qd_s| over scaling intervals k in [k0, k1), sampled `sub` times each.
  std::pair<double, double> limits(const ScaledTrajectory& s, std::size_t k0, std::size_t k1,
                                   int sub) const {
    const TimeScaling& ts = s.scaling();
    const double h = ts.step();
    const auto last = static_cast<std::size_t>(std::ceil(ts.duration() / h));
    k1 = std::min(k1, last);
    double amax = 0.0, vmax = 0.0;
    for (std::size_t k = k0; k < k1; ++k) {
      const double slope = (ts.rates()[k + 1] - ts.rates()[k]) / h;
      for (int m = 0; m <= sub; ++m) {
        const double t = std::min(ts.duration(), (static_cast<double>(k) + static_cast<double>(m) / sub) * h);
        const double sigma = ts.position(t);
        const double r = ts.rates()[k] + slope * (t - static_cast<double>(k) * h);
        const JointSample b = p_.base.sample(sigma);
        const JointVector acc = slope * b.speed + r * r * p_.base.acceleration(sigma);
        amax = std::max(amax, acc.cwiseAbs().maxCoeff());
        vmax = std::max(vmax, r * b.speed.cwiseAbs().maxCoeff());
      }
    }
    return {amax, vmax};
  }

  bool limits_ok(const ScaledTrajectory& s, std::size_t k0, std::size_t k1) const {
    const auto [a, v] = limits(s, k0, k1, 2);
    return a <= tables_.accel_bound * (1.0 + 1e-12) && v <= tables_.speed_bound * (1.0 + 1e-12);
  }

  double search_limit() const { return p_.deflation * p_.effective_limit(); }

  bool deviation_ok(const ScaledTrajectory& s,
                    std::optional<std::pair<double, double>> window = std::nullopt) const {
    const double lim = search_limit();
    return gap_deviation(s, p_.max_gap, p_.segment_start, p_.segment_end, law_, p_.grid, lim, window)
               .value <= lim;
  }

  bool feasible(const PathRate& rate) const {
    const ScaledTrajectory s = build(rate);
    return limits_ok(s, 0, s.scaling().rates().size()) && deviation_ok(s);
  }

  ScalingSolution finish(PathRate rate, double c, const PathRate* incumbent) const {
    ScalingSolution sol;
    sol.scaling = scaling_from_path_rate(rate, p_.base.duration());
    sol.rate = std::move(rate);
    sol.critical_rate = c;
    if (incumbent && !incumbent->values.empty() && feasible(*incumbent)) {
      TimeScaling alt = scaling_from_path_rate(*incumbent, p_.base.duration());
      if (alt.duration() < sol.scaling.duration()) {
        sol.scaling = std::move(alt);
        sol.rate = *incumbent;
        sol.used_incumbent = true;
      }
    }
    return sol;
  }

  const ScalingProblem& problem() const { return p_; }

 private:
  ScalingProblem p_;
  BaseTables tables_;
  DeviationLaw law_;
};

ScalingSolution static_stage(const Solver& solver, double& c_out, PathRate& rate_out) {
  const ScalingProblem& p = solver.problem();
  PathRate identity{p.rate_step, std::vector<double>(solver.tables().size(), 1.0)};
  if (solver.feasible(identity)) {
    c_out = 1.0;
    rate_out = identity;
    return {};
  }
  const long n = std::max(1L, std::lround(1.0 / p.rate_resolution));
  long lo = 0, hi = n;  // lo: best feasible so far (0 = none), hi: infeasible
  PathRate best;
  while (hi - lo > 1) {
    const long mid = lo + (hi - lo) / 2;
    PathRate r = solver.shape(solver.target_static(static_cast<double>(mid) / n));
    if (solver.feasible(r)) {
      lo = mid;
      best = std::move(r);
    } else {
      hi = mid;
    }
  }
  if (lo == 0) throw InfeasibleScaling("no constant rate on the resolution grid meets the constraints");
  c_out = static_cast<double>(lo) / n;
  rate_out = std::move(best);
  return {};
}

}  // namespace

ScalingProblem ScalingProblem::centered(const Trajectory& base, const ArmModel& arm, double max_gap,
                                        double limit, double fraction) {
  ScalingProblem p;
  p.base = base;
  p.arm = &arm;
  p.max_gap = max_gap;
  p.limit = limit;
  const double T = base.duration();
  p.segment_start = 0.5 * (1.0 - fraction) * T;
  p.segment_end = 0.5 * (1.0 + fraction) * T;
  return p;
}

DeviationLaw ScalingProblem::deviation_law() const {
  DeviationLaw d;
  d.law = law;
  d.arm = arm;
  d.model = model;
  d.selection = selection;
  d.selection.max_gap = max_gap;
  return d;
}

void ScalingProblem::validate() const {
  if (!arm) throw std::invalid_argument("ScalingProblem: arm model missing");
  if (!(max_gap > 0.0) || !(effective_limit() > 0.0))
    throw std::invalid_argument("ScalingProblem: max gap and limit must be positive");
  if (!(segment_start >= 0.0 && segment_start < segment_end && segment_end <= base.duration() + 1e-12))
    throw std::invalid_argument("ScalingProblem: critical segment outside the trajectory");
  if (law == ExtrapolationLaw::Adaptive && !model)
    throw std::invalid_argument("ScalingProblem: adaptive law needs a model");
  if (!(rate_resolution > 0.0 && rate_resolution < 1.0) || !(rate_step > 0.0))
    throw std::invalid_argument("ScalingProblem: bad rate grid");
}

ScalingSolution solve_static(const ScalingProblem& problem, const PathRate* incumbent) {
  const Solver solver(problem);
  double c = 1.0;
  PathRate rate;
  static_stage(solver, c, rate);
  return solver.finish(std::move(rate), c, incumbent);
}

ScalingSolution solve_varying(const ScalingProblem& problem, std::uint64_t seed,
                              const PathRate* incumbent) {
  const Solver solver(problem);
  double c = 1.0;
  PathRate rate;
  static_stage(solver, c, rate);
  if (c >= 1.0) return solver.finish(std::move(rate), c, incumbent);

  const auto& tab = solver.tables();
  const PathRate static_rate = rate;
  std::vector<double> target = solver.target_static(c);
  const std::vector<double> static_target = target;

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> pick(problem.segment_start, problem.segment_end);
  const RandomSearch& rs = problem.search;
  double raise = rs.initial_raise;
  int consecutive = 0, since_decay = 0;
  std::size_t proposals = 0, accepted = 0;

  while (consecutive < rs.stop_after) {
    ++proposals;
    const double center = pick(rng);
    const double half = 0.5 * rs.window * rate.at(center);
    std::vector<double> trial = target;
    const auto i0 = static_cast<std::size_t>(std::max(0.0, std::floor((center - half) / tab.step)));
    const auto i1 = std::min(trial.size() - 1, static_cast<std::size_t>(std::ceil((center + half) / tab.step)));
    for (std::size_t i = i0; i <= i1; ++i) {
      const double x = (static_cast<double>(i) * tab.step - center) / half;
      if (std::abs(x) < 1.0) trial[i] = std::min(1.0, trial[i] + raise * 0.5 * (1.0 + std::cos(kPi * x)));
    }
    PathRate shaped = solver.shape(trial);

    // Region where the rate changed, in base then scaled time.
    std::size_t lo = shaped.values.size(), hi = 0;
    for (std::size_t i = 0; i < shaped.values.size(); ++i)
      if (shaped.values[i] != rate.values[i]) {
        lo = std::min(lo, i);
        hi = i;
      }
    bool ok = lo <= hi;
    if (ok) {
      const ScaledTrajectory cand = solver.build(shaped);
      const TimeScaling& ts = cand.scaling();
      const double t0 = ts.inverse(static_cast<double>(lo) * tab.step);
      const double t1 = ts.inverse(static_cast<double>(hi + 1) * tab.step);
      const auto k0 = static_cast<std::size_t>(std::max(0.0, std::floor(t0 / ts.step()) - 1.0));
      const auto k1 = static_cast<std::size_t>(std::ceil(t1 / ts.step())) + 2;
      ok = solver.limits_ok(cand, k0, k1) &&
           solver.deviation_ok(cand, std::make_pair(t0 - problem.max_gap - problem.grid.start_step,
                                                    t1 + problem.grid.start_step));
      if (ok) {
        target = std::move(trial);
        rate = std::move(shaped);
        ++accepted;
        consecutive = 0;
      }
    }
    if (!ok) {
      ++consecutive;
      if (++since_decay >= rs.decay_every) {
        raise *= rs.decay;
        since_decay = 0;
      }
    }
  }

  // Step IV: the windowed checks above are local; confirm globally, backing
  // off toward the static solution if needed.
  double theta = 1.0;
  while (!solver.feasible(rate)) {
    theta *= 0.8;
    if (theta < 1e-3) {
      rate = static_rate;
      break;
    }
    std::vector<double> blend(target.size());
    for (std::size_t i = 0; i < blend.size(); ++i)
      blend[i] = static_target[i] + theta * (target[i] - static_target[i]);
    rate = solver.shape(blend);
  }

  ScalingSolution sol = solver.finish(std::move(rate), c, incumbent);
  sol.proposals = proposals;
  sol.accepted = accepted;
  return sol;
}

ScalingSolution solve(const ScalingProblem& problem, std::uint64_t seed, const PathRate* incumbent) {
  return problem.mode == ScalingMode::Static ? solve_static(problem, incumbent)
                                             : solve_varying(problem, seed, incumbent);
}

ConstraintReport verify_constraints(const ScaledTrajectory& scaled, const ScalingProblem& problem,
                                    const VerifyGrid& grid) {
  problem.validate();
  ConstraintReport rep;
  const DeviationGrid dg{grid.start_step, grid.delta_steps};
  const GapDeviation d = gap_deviation(scaled, problem.max_gap, problem.segment_start,
                                       problem.segment_end, problem.deviation_law(), dg);
  rep.deviation = {d.value <= problem.effective_limit(), d.value, problem.effective_limit()};

  const Trajectory& base = problem.base;
  const double a_bound = base.max_abs_acceleration().maxCoeff();
  const double v_bound = base.max_abs_speed().maxCoeff();
  const TimeScaling& ts = scaled.scaling();
  const double h = ts.step();
  const auto n = static_cast<std::size_t>(std::ceil(ts.duration() / h));
  double amax = 0.0, vmax = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double slope = (ts.rates()[k + 1] - ts.rates()[k]) / h;
    for (int m = 0; m <= grid.substeps; ++m) {
      const double t = std::min(ts.duration(), (static_cast<double>(k) + static_cast<double>(m) / grid.substeps) * h);
      const double sigma = ts.position(t);
      const double r = ts.rates()[k] + slope * (t - static_cast<double>(k) * h);
      const JointSample b = base.sample(sigma);
      amax = std::max(amax, (slope * b.speed + r * r * base.acceleration(sigma)).cwiseAbs().maxCoeff());
      vmax = std::max(vmax, r * b.speed.cwiseAbs().maxCoeff());
    }
  }
  const double tol = 1e-12;
  rep.acceleration = {amax <= a_bound * (1.0 + tol), amax, a_bound};
  rep.speed = {vmax <= v_bound * (1.0 + tol), vmax, v_bound};
  return rep;
}

void write_scaling_sidecar(std::ostream& out, const ScalingProblem& problem,
                           const ScalingSolution& solution, const ConstraintReport& report) {
  auto check = [](const ConstraintCheck& c) {
    return nlohmann::json{{"pass", c.pass}, {"value", c.value}, {"limit", c.limit}, {"margin", c.margin()}};
  };
  nlohmann::json j = {
      {"format", "gapctl-scaling"},
      {"version", 1},
      {"max_gap", problem.max_gap},
      {"limit", problem.limit},
      {"limit_offset", problem.limit_offset},
      {"segment", {problem.segment_start, problem.segment_end}},
      {"mode", problem.mode == ScalingMode::Static ? "static" : "varying"},
      {"law", problem.law == ExtrapolationLaw::SpeedJHold ? "speedj_hold" : "adaptive"},
      {"critical_rate", solution.critical_rate},
      {"base_duration", solution.scaling.base_duration()},
      {"duration", solution.duration()},
      {"step", solution.scaling.step()},
      {"rate", solution.scaling.rates()},
      {"verification",
       {{"deviation", check(report.deviation)},
        {"acceleration", check(report.acceleration)},
        {"speed", check(report.speed)}}}};
  out << j.dump(1) << '\n';
}

}  // namespace gapctl
