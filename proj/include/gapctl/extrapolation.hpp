#pragma once

#include "gapctl/command.hpp"
#include "gapctl/mlp.hpp"

#include <vector>

namespace gapctl {

/// Joint position/speed history queried at arbitrary past times t >= 0.
class HistorySource {
 public:
  virtual ~HistorySource() = default;
  virtual JointSample at(double t) const = 0;
  /// Position used to pad history before t = 0.
  virtual JointVector start_position() const = 0;
};

class PathHistory final : public HistorySource {
 public:
  explicit PathHistory(const TimedPath& path) : path_(path) {}
  JointSample at(double t) const override { return path_.sample(t); }
  JointVector start_position() const override { return path_.sample(0.0).position; }

 private:
  const TimedPath& path_;
};

/// Uniformly sampled log (sample k at k * step), linearly interpolated.
class LogHistory final : public HistorySource {
 public:
  explicit LogHistory(double step = kControlPeriod) : step_(step) {}
  void append(const JointSample& s) { samples_.push_back(s); }
  void clear() { samples_.clear(); }
  std::size_t size() const { return samples_.size(); }
  JointSample at(double t) const override;
  JointVector start_position() const override;

 private:
  double step_;
  std::vector<JointSample> samples_;
};

/// Rows sampled at t - alpha_i; rows with t - alpha_i < 0 hold the start
/// position and zero speed.
HistoryMatrix build_history(const HistorySource& source, double t);

/// Piecewise-linear joint speeds on knots after `start_time`, positions by
/// exact integration from `start_position`.
class SpeedProfile {
 public:
  SpeedProfile() = default;
  SpeedProfile(double start_time, const JointVector& start_position);

  /// Appends a knot; offsets must increase.
  void push(double offset, const JointVector& speed);

  double start_time() const { return start_time_; }
  double horizon() const { return offsets_.empty() ? 0.0 : offsets_.back(); }
  const std::vector<double>& offsets() const { return offsets_; }
  const std::vector<JointVector>& speeds() const { return speeds_; }
  /// Held constant past the last knot.
  JointVector speed(double offset) const;
  JointVector position(double offset) const;

  int windows = 0;
  /// Largest |speed| mismatch between consecutive prediction windows at their seam.
  double max_seam_jump = 0.0;

 private:
  std::size_t piece(double offset) const;

  double start_time_ = 0.0;
  JointVector start_position_ = JointVector::Zero();
  std::vector<double> offsets_;
  std::vector<JointVector> speeds_;
  std::vector<JointVector> positions_;
};

/// Model-predicted speeds over [t0, t0 + horizon]. Beyond one 200 ms window
/// the history is rebuilt from earlier predictions and the model is applied
/// again; each later window contributes its outputs from the second row on.
SpeedProfile forecast(const MlpModel& model, const HistorySource& source, double t0, double horizon);

/// Artificial SPEEDJ commands every 2 ms from `gap_start`. Command k carries
/// the mean predicted speed over [k dt, (k + 1) dt].
std::vector<SpeedCommand> extrapolate(const MlpModel& model, const HistorySource& source,
                                      double gap_start, double horizon);

}  // namespace gapctl
