#pragma once

#include "gapctl/command.hpp"
#include "gapctl/kinematics.hpp"

#include <optional>

namespace gapctl {

class SpeedProfile;

struct SelectionParams {
  /// Short-term check horizon [s] and tolerance [m].
  double short_term_horizon = 0.002;
  double short_term_tolerance = 1e-6;
  /// IK growth bound: reject SPEEDL if ||s - q||_1 > factor * delta * ||qd||_1.
  double ik_growth_factor = 10.0;
  /// Largest gap the selection guards against [s].
  double max_gap = 0.2;
  /// Sweep delta = 0, max_gap/steps, ..., max_gap.
  int sweep_steps = 10;
};

struct SelectionTrace {
  double speedj = 0.0;
  double speedl = 0.0;
  std::optional<double> ai;
  bool short_term_rejected = false;
  bool ik_rejected = false;
  CommandKind kind = CommandKind::SpeedJ;
};

/// Chooses the command kind whose hypothetical gap of up to `max_gap` would
/// deviate least from the plan (or from the frozen current pose when `plan`
/// is null). SPEEDL is ruled out when its short-term motion differs from
/// SPEEDJ or when its straight-line extrapolation is unreachable. Ties go
/// SPEEDJ, then SPEEDJ_AI, then SPEEDL. `forecast` enables SPEEDJ_AI.
SpeedCommand get_command(const ArmModel& model, const JointVector& qd, const JointVector& q,
                         const SelectionParams& params, const TimedPath* plan, double t,
                         const SpeedProfile* forecast = nullptr, SelectionTrace* trace = nullptr);

/// Max deviation of one extrapolation kind over delta = k * max_gap / steps.
double sweep_deviation(const ArmModel& model, CommandKind kind, const JointVector& qd,
                       const JointVector& q, const TimedPath* plan, double t,
                       const SpeedProfile* forecast, double max_gap, int steps);

}  // namespace gapctl
