#pragma once

#include "gapctl/command.hpp"
#include "gapctl/command_selection.hpp"
#include "gapctl/kinematics.hpp"

#include <array>
#include <iosfwd>
#include <vector>

namespace gapctl {

class MlpModel;

/// Euclidean distance between tool positions [m].
double deviation(const Pose& planned, const Pose& actual);

struct Gap {
  double start = 0.0;
  double duration = 0.0;
  bool contains(double t) const { return t >= start && t < start + duration; }
};

class GapSchedule {
 public:
  GapSchedule() = default;
  /// Throws std::invalid_argument on overlapping or negative gaps, or gaps longer than `max_gap`.
  explicit GapSchedule(std::vector<Gap> gaps, double max_gap = 1e300);
  bool in_gap(double t) const;
  const std::vector<Gap>& gaps() const { return gaps_; }

 private:
  std::vector<Gap> gaps_;
};

enum class PolicyKind { AlwaysSpeedJ, AlwaysSpeedL, MethodA, MethodAB };

struct CommandPolicy {
  PolicyKind kind = PolicyKind::AlwaysSpeedJ;
  SelectionParams selection{};
  /// Required for MethodAB.
  const MlpModel* model = nullptr;
};

struct LocalState {
  JointVector q = JointVector::Zero();
  JointVector qd = JointVector::Zero();
  /// Set when a SPEEDL tick hit a singular Jacobian and the previous speeds were held.
  bool singular = false;
};

/// One 2 ms tick of the robot-side controller under the active command.
/// Speed set point: SPEEDJ args directly, SPEEDL via the damped inverse
/// Jacobian at the current q. The change of speed is limited per joint by
/// accel_limit * dt, then positions advance with the new speed.
LocalState local_step(const LocalState& state, const SpeedCommand& active, const ArmModel& model,
                      double dt = kControlPeriod);

struct SimOptions {
  double gain = 5.0;
  /// Extra simulated time after the plan ends [s].
  double tail = 0.0;
};

struct SimResult {
  std::vector<double> time;
  std::vector<JointVector> positions;
  std::vector<double> deviation;
  /// Kind of the command governing each tick (the held one during gaps).
  std::vector<CommandKind> kinds;
  std::vector<bool> gap;
  double max_deviation = 0.0;
  /// Delivered commands per kind, indexed by CommandKind.
  std::array<std::size_t, kCommandKinds> kind_counts{};
  std::size_t singular_ticks = 0;
};

/// Closed-loop run: each tick the remote controller sends feed-forward plus
/// gain * (planned - actual) joint speed, the policy turns it into a command,
/// and the robot receives it unless the tick falls in a gap.
SimResult run_simulation(const TimedPath& plan, const GapSchedule& gaps, const CommandPolicy& policy,
                         const ArmModel& model, const SimOptions& options = {});

/// Columns: t, d, command_kind, gap_flag.
void write_sim_csv(std::ostream& out, const SimResult& result);

}  // namespace gapctl
