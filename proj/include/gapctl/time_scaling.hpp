#pragma once

#include "gapctl/trajectory.hpp"

#include <stdexcept>
#include <vector>

namespace gapctl {

class InvalidScaling : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Monotone time map s(t) from scaled time to base time, given by samples of
/// its derivative on a uniform grid (piecewise linear between samples).
class TimeScaling {
 public:
  static constexpr double kStep = 0.002;

  TimeScaling() = default;
  /// rate[k] = ds/dt at t = k * step. Throws InvalidScaling unless every
  /// sample is in (0, 1] and s reaches base_duration within the samples.
  TimeScaling(std::vector<double> rate, double base_duration, double step = kStep);

  /// ds/dt = c everywhere.
  static TimeScaling constant(double c, double base_duration, double step = kStep);

  double step() const { return step_; }
  double base_duration() const { return base_duration_; }
  /// Scaled duration, s^-1(base_duration).
  double duration() const { return duration_; }
  const std::vector<double>& rates() const { return rate_; }

  double position(double t) const;  ///< s(t), clamped to [0, T_s]
  double rate(double t) const;      ///< ds/dt
  double slope(double t) const;     ///< d2s/dt2 on the grid interval holding t
  double inverse(double sigma) const;

 private:
  std::size_t interval(double t) const;

  double step_ = kStep;
  double base_duration_ = 0.0;
  double duration_ = 0.0;
  std::vector<double> rate_;
  std::vector<double> cumulative_;
};

/// Rate as a function of base time, sampled on a uniform base-time grid.
struct PathRate {
  double step = 0.001;
  std::vector<double> values;
  double at(double sigma) const;
};

/// Integrates ds/dt = r(s) on the scaled grid (implicit trapezoid).
TimeScaling scaling_from_path_rate(const PathRate& rate, double base_duration,
                                   double step = TimeScaling::kStep);

/// q_s(t) = q_b(s(t)), qd_s = sdot * qd_b(s), qdd_s = sddot * qd_b(s) + sdot^2 * qdd_b(s).
class ScaledTrajectory final : public TimedPath {
 public:
  ScaledTrajectory() = default;
  ScaledTrajectory(Trajectory base, TimeScaling scaling);

  double duration() const override { return scaling_.duration(); }
  JointSample sample(double t) const override;
  JointVector acceleration(double t) const override;

  const Trajectory& base() const { return base_; }
  const TimeScaling& scaling() const { return scaling_; }

 private:
  Trajectory base_;
  TimeScaling scaling_;
};

/// Throws InvalidScaling if the scaling does not cover the base duration.
ScaledTrajectory apply_scaling(const Trajectory& base, const TimeScaling& scaling);

}  // namespace gapctl
