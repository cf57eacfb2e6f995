#include "gapctl/command_selection.hpp"

#include "gapctl/control_sim.hpp"
#include "gapctl/extrapolation.hpp"

#include <algorithm>
#include <cmath>

namespace gapctl {

namespace {

Eigen::Vector3d reference_position(const ArmModel& model, const TimedPath* plan, double t,
                                   const Eigen::Vector3d& frozen) {
  return plan ? tool_position(model, plan->sample(t).position) : frozen;
}

JointVector ai_position(const JointVector& q, const SpeedProfile& forecast, double delta) {
  return q + (forecast.position(delta) - forecast.position(0.0));
}

}  // namespace

double sweep_deviation(const ArmModel& model, CommandKind kind, const JointVector& qd,
                       const JointVector& q, const TimedPath* plan, double t,
                       const SpeedProfile* forecast, double max_gap, int steps) {
  const Eigen::Vector3d p0 = tool_position(model, q);
  const Eigen::Vector3d v = (jacobian(model, q) * qd).head<3>();
  double worst = 0.0;
  for (int k = 0; k <= steps; ++k) {
    const double delta = max_gap * k / steps;
    const Eigen::Vector3d ref = reference_position(model, plan, t + delta, p0);
    Eigen::Vector3d p;
    switch (kind) {
      case CommandKind::SpeedJ: p = tool_position(model, q + delta * qd); break;
      case CommandKind::SpeedL: p = p0 + delta * v; break;
      case CommandKind::SpeedJAi:
        p = forecast ? tool_position(model, ai_position(q, *forecast, delta))
                     : tool_position(model, q + delta * qd);
        break;
    }
    worst = std::max(worst, (ref - p).norm());
  }
  return worst;
}

SpeedCommand get_command(const ArmModel& model, const JointVector& qd, const JointVector& q,
                         const SelectionParams& params, const TimedPath* plan, double t,
                         const SpeedProfile* forecast, SelectionTrace* trace) {
  SelectionTrace local;
  SelectionTrace& tr = trace ? *trace : local;
  tr = SelectionTrace{};

  SpeedCommand joint;
  joint.kind = CommandKind::SpeedJ;
  joint.args = qd;
  joint.timestamp = t;

  const Matrix6d j = jacobian(model, q);
  const Twist v = j * qd;
  const Pose p0 = forward_kinematics(model, q);

  const double e1 = params.short_term_horizon;
  const Eigen::Vector3d short_j = tool_position(model, q + e1 * qd);
  const Eigen::Vector3d short_c = p0.position + e1 * v.head<3>();
  if ((short_j - short_c).norm() > params.short_term_tolerance) {
    tr.short_term_rejected = true;
    return joint;
  }

  const double qd_l1 = qd.cwiseAbs().sum();
  double dj = 0.0, dc = 0.0, dai = 0.0;
  for (int k = 0; k <= params.sweep_steps; ++k) {
    const double delta = params.max_gap * k / params.sweep_steps;
    const Eigen::Vector3d ref = reference_position(model, plan, t + delta, p0.position);
    const Eigen::Vector3d pj = tool_position(model, q + delta * qd);
    const Pose pc = advance_pose(p0, v, delta);

    const auto s = inverse_kinematics_closest(model, pc, q);
    if (!s || (*s - q).cwiseAbs().sum() > params.ik_growth_factor * delta * qd_l1) {
      tr.ik_rejected = true;
      return joint;
    }
    dj = std::max(dj, (ref - pj).norm());
    dc = std::max(dc, (ref - pc.position).norm());
    if (forecast) dai = std::max(dai, (ref - tool_position(model, ai_position(q, *forecast, delta))).norm());
  }

  tr.speedj = dj;
  tr.speedl = dc;
  if (forecast) tr.ai = dai;

  CommandKind best = CommandKind::SpeedJ;
  double best_d = dj;
  if (forecast && dai < best_d) {
    best = CommandKind::SpeedJAi;
    best_d = dai;
  }
  if (dc < best_d) best = CommandKind::SpeedL;
  tr.kind = best;

  SpeedCommand out = joint;
  out.kind = best;
  if (best == CommandKind::SpeedL) out.args = v;
  return out;
}

}  // namespace gapctl
