#pragma once

#include "gapctl/command_selection.hpp"
#include "gapctl/time_scaling.hpp"

#include <array>
#include <cstdint>
#include <iosfwd>
#include <limits>
#include <optional>
#include <stdexcept>

namespace gapctl {

class MlpModel;

/// How the robot moves during a gap.
/// SpeedJHold: the last joint speeds are held.
/// Adaptive: the command kind chosen by get_command (with the model's forecast)
/// governs the gap; SPEEDJ_AI follows the forecast.
enum class ExtrapolationLaw { SpeedJHold, Adaptive };

enum class ScalingMode { Static, Varying };

struct DeviationGrid {
  double start_step = 0.010;  ///< spacing of gap starts, scaled time [s]
  int delta_steps = 10;       ///< gap length grid: max_gap / delta_steps
};

struct DeviationLaw {
  ExtrapolationLaw law = ExtrapolationLaw::SpeedJHold;
  const ArmModel* arm = nullptr;
  const MlpModel* model = nullptr;  ///< required for Adaptive
  SelectionParams selection{};      ///< max_gap is taken from the evaluation
};

struct GapDeviation {
  double value = 0.0;
  double worst_start = 0.0;
  std::size_t starts = 0;
  bool aborted = false;
  /// Kinds governing the evaluated gap starts (Adaptive only).
  std::array<std::size_t, kCommandKinds> kinds{};
};

/// max over gap starts t in [s^-1(seg_start), s^-1(seg_end)] and delta in
/// [0, max_gap] of |FK(q_s(t + delta)) - FK(qhat(t + delta))|. Stops early
/// once the running maximum exceeds `abort_above`. With a finite
/// `abort_above`, an adaptive law and a delta grid equal to the selection
/// sweep, per-start values at or below the threshold may be replaced by an
/// upper bound that is still at or below it; the pass/fail outcome is exact.
/// `window`, if given, restricts the starts further to a scaled-time interval.
GapDeviation gap_deviation(const ScaledTrajectory& scaled, double max_gap, double seg_start,
                           double seg_end, const DeviationLaw& law, const DeviationGrid& grid,
                           double abort_above = std::numeric_limits<double>::infinity(),
                           std::optional<std::pair<double, double>> window = std::nullopt);

struct RandomSearch {
  double initial_raise = 0.2;
  double decay = 0.8;
  int decay_every = 50;
  int stop_after = 500;
  /// Raise window length in scaled time [s].
  double window = 0.5;
};

struct ScalingProblem {
  Trajectory base;
  const ArmModel* arm = nullptr;
  double max_gap = 0.2;   ///< Delta [s]
  double limit = 5e-4;    ///< L [m]
  /// Subtracted from L (e.g. robot inaccuracy).
  double limit_offset = 0.0;
  double segment_start = 0.0;
  double segment_end = 0.0;
  ScalingMode mode = ScalingMode::Static;
  ExtrapolationLaw law = ExtrapolationLaw::SpeedJHold;
  const MlpModel* model = nullptr;
  SelectionParams selection{};
  DeviationGrid grid{};
  /// L is multiplied by this during the search.
  double deflation = 0.95;
  /// Fraction of the acceleration headroom used by ramps.
  double ramp_headroom = 0.95;
  double rate_resolution = 1e-3;
  /// Base-time grid of the rate profile [s].
  double rate_step = 0.001;
  RandomSearch search{};

  /// Critical segment = middle half of the base trajectory.
  static ScalingProblem centered(const Trajectory& base, const ArmModel& arm, double max_gap,
                                 double limit, double fraction = 0.5);
  double effective_limit() const { return limit - limit_offset; }
  DeviationLaw deviation_law() const;
  /// Throws std::invalid_argument when inconsistent.
  void validate() const;
};

class InfeasibleScaling : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ScalingSolution {
  TimeScaling scaling;
  PathRate rate;
  /// Constant rate on the critical segment found by the static stage.
  double critical_rate = 1.0;
  std::size_t proposals = 0;
  std::size_t accepted = 0;
  /// The supplied incumbent was feasible and shorter than the search result.
  bool used_incumbent = false;
  double duration() const { return scaling.duration(); }
};

/// Largest c on the resolution grid with ds/dt = c on the critical segment,
/// acceleration-limited ramps back to 1 outside, meeting constraints A-C.
/// `incumbent`, if feasible for this problem and shorter, is returned instead.
ScalingSolution solve_static(const ScalingProblem& problem, const PathRate* incumbent = nullptr);

/// Static solution refined by seeded random local raises of the rate.
ScalingSolution solve_varying(const ScalingProblem& problem, std::uint64_t seed,
                              const PathRate* incumbent = nullptr);

ScalingSolution solve(const ScalingProblem& problem, std::uint64_t seed,
                      const PathRate* incumbent = nullptr);

struct ConstraintCheck {
  bool pass = false;
  double value = 0.0;
  double limit = 0.0;
  double margin() const { return limit - value; }
};

struct ConstraintReport {
  ConstraintCheck deviation;     ///< A
  ConstraintCheck acceleration;  ///< B
  ConstraintCheck speed;         ///< C
  bool all_pass() const { return deviation.pass && acceleration.pass && speed.pass; }
};

struct VerifyGrid {
  double start_step = 0.001;
  int delta_steps = 100;
  /// Samples per scaling grid interval for B and C.
  int substeps = 10;
};

/// Checks A against the undeflated limit and B/C against the base maxima.
ConstraintReport verify_constraints(const ScaledTrajectory& scaled, const ScalingProblem& problem,
                                    const VerifyGrid& grid = {});

/// Sidecar: rate samples plus the verification report, as JSON.
void write_scaling_sidecar(std::ostream& out, const ScalingProblem& problem,
                           const ScalingSolution& solution, const ConstraintReport& report);

}  // namespace gapctl
