#include "gapctl/control_sim.hpp"

#include "gapctl/extrapolation.hpp"
#include "gapctl/numfmt.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <ostream>
#include <stdexcept>

namespace gapctl {

double deviation(const Pose& planned, const Pose& actual) {
  return (planned.position - actual.position).norm();
}

GapSchedule::GapSchedule(std::vector<Gap> gaps, double max_gap) : gaps_(std::move(gaps)) {
  std::sort(gaps_.begin(), gaps_.end(), [](const Gap& a, const Gap& b) { return a.start < b.start; });
  for (std::size_t i = 0; i < gaps_.size(); ++i) {
    const Gap& g = gaps_[i];
    if (!std::isfinite(g.start) || !(g.duration > 0.0))
      throw std::invalid_argument("GapSchedule: gaps need a finite start and positive duration");
    if (g.duration > max_gap + 1e-12)
      throw std::invalid_argument("GapSchedule: gap longer than the maximum gap");
    if (i > 0 && gaps_[i - 1].start + gaps_[i - 1].duration > g.start)
      throw std::invalid_argument("GapSchedule: gaps overlap");
  }
}

bool GapSchedule::in_gap(double t) const {
  auto it = std::upper_bound(gaps_.begin(), gaps_.end(), t,
                             [](double x, const Gap& g) { return x < g.start; });
  if (it == gaps_.begin()) return false;
  return std::prev(it)->contains(t);
}

LocalState local_step(const LocalState& state, const SpeedCommand& active, const ArmModel& model,
                      double dt) {
  LocalState next = state;
  next.singular = false;
  JointVector target;
  if (active.kind == CommandKind::SpeedL) {
    const auto qd = damped_joint_speed(model, state.q, active.args);
    if (qd) {
      target = *qd;
    } else {
      target = state.qd;
      next.singular = true;
    }
  } else {
    target = active.args;
  }
  const JointVector step = model.accel_limit * dt;
  next.qd = state.qd + (target - state.qd).cwiseMax(-step).cwiseMin(step);
  next.q = state.q + dt * next.qd;
  return next;
}

SimResult run_simulation(const TimedPath& plan, const GapSchedule& gaps, const CommandPolicy& policy,
                         const ArmModel& model, const SimOptions& options) {
  if (!(options.gain > 0.0)) throw std::invalid_argument("run_simulation: gain must be positive");
  if (policy.kind == PolicyKind::MethodAB && !policy.model)
    throw std::invalid_argument("run_simulation: Method-A+B policy needs a model");
  const double dt = kControlPeriod;
  const double horizon = plan.duration() + options.tail;
  const auto n = static_cast<std::size_t>(std::ceil(horizon / dt - 1e-9));

  const JointSample start = plan.sample(0.0);
  if (!model.within_limits(start.position))
    throw std::invalid_argument("run_simulation: plan starts outside the joint limits");

  SimResult r;
  r.time.reserve(n + 1);
  r.positions.reserve(n + 1);
  r.deviation.reserve(n + 1);
  r.kinds.reserve(n + 1);
  r.gap.reserve(n + 1);

  LocalState state{start.position, start.speed, false};
  SpeedCommand active;
  active.args = start.speed;
  LogHistory log(dt);
  log.append({state.q, state.qd});

  // Forecast shared by both sides for the last delivered SPEEDJ_AI command.
  std::optional<SpeedProfile> ai_profile;
  double ai_anchor = 0.0;
  const double max_gap = policy.selection.max_gap;

  for (std::size_t k = 0;; ++k) {
    const double t = static_cast<double>(k) * dt;
    const bool in_gap = gaps.in_gap(t);
    const JointVector planned = plan.sample(t).position;
    const double d = (tool_position(model, planned) - tool_position(model, state.q)).norm();
    r.time.push_back(t);
    r.positions.push_back(state.q);
    r.deviation.push_back(d);
    r.gap.push_back(in_gap);
    r.max_deviation = std::max(r.max_deviation, d);
    if (k == n) {
      r.kinds.push_back(active.kind);
      break;
    }

    if (!in_gap) {
      const JointVector qd_cmd =
          (plan.sample(t + dt).position - planned) / dt + options.gain * (planned - state.q);
      SpeedCommand cmd;
      std::optional<SpeedProfile> profile;
      switch (policy.kind) {
        case PolicyKind::AlwaysSpeedJ:
          cmd.kind = CommandKind::SpeedJ;
          cmd.args = qd_cmd;
          break;
        case PolicyKind::AlwaysSpeedL:
          cmd.kind = CommandKind::SpeedL;
          cmd.args = jacobian(model, state.q) * qd_cmd;
          break;
        case PolicyKind::MethodA:
          cmd = get_command(model, qd_cmd, state.q, policy.selection, &plan, t);
          break;
        case PolicyKind::MethodAB:
          profile = forecast(*policy.model, log, t, max_gap);
          cmd = get_command(model, qd_cmd, state.q, policy.selection, &plan, t, &*profile);
          break;
      }
      cmd.timestamp = t;
      cmd.sequence = k;
      active = cmd;
      ++r.kind_counts[static_cast<int>(cmd.kind)];
      if (cmd.kind == CommandKind::SpeedJAi) {
        ai_profile = std::move(profile);
        ai_anchor = t;
      } else {
        ai_profile.reset();
      }
    }
    r.kinds.push_back(active.kind);

    SpeedCommand applied = active;
    if (in_gap && active.kind == CommandKind::SpeedJAi && ai_profile) {
      const double a = t - ai_anchor;
      if (a + dt > ai_profile->horizon())
        ai_profile = forecast(*policy.model, log, ai_anchor, 2.0 * (a + dt));
      applied.kind = CommandKind::SpeedJ;
      applied.args = (ai_profile->position(a + dt) - ai_profile->position(a)) / dt;
    }
    state = local_step(state, applied, model, dt);
    if (state.singular) ++r.singular_ticks;
    log.append({state.q, state.qd});
  }
  return r;
}

void write_sim_csv(std::ostream& out, const SimResult& result) {
  out << "t,d,command_kind,gap_flag\n";
  for (std::size_t i = 0; i < result.time.size(); ++i)
    out << format_double(result.time[i]) << ',' << format_double(result.deviation[i]) << ','
        << to_string(result.kinds[i]) << ',' << (result.gap[i] ? 1 : 0) << '\n';
}

}  // namespace gapctl
