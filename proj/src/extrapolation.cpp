#include "gapctl/extrapolation.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace gapctl {

namespace {

constexpr double kWindow = kPredictionOffsets.back();

// Real history up to t0, predicted motion after it.
class ExtendedHistory final : public HistorySource {
 public:
  ExtendedHistory(const HistorySource& base, const SpeedProfile& profile)
      : base_(base), profile_(profile) {}
  JointSample at(double t) const override {
    const double offset = t - profile_.start_time();
    if (offset <= 0.0) return base_.at(t);
    return {profile_.position(offset), profile_.speed(offset)};
  }
  JointVector start_position() const override { return base_.start_position(); }

 private:
  const HistorySource& base_;
  const SpeedProfile& profile_;
};

}  // namespace

SpeedProfile::SpeedProfile(double start_time, const JointVector& start_position)
    : start_time_(start_time), start_position_(start_position) {}

void SpeedProfile::push(double offset, const JointVector& speed) {
  if (offsets_.empty()) {
    offsets_.push_back(offset);
    speeds_.push_back(speed);
    positions_.push_back(start_position_ + offset * speed);
    return;
  }
  if (!(offset > offsets_.back())) throw std::invalid_argument("SpeedProfile: offsets must increase");
  const double h = offset - offsets_.back();
  positions_.push_back(positions_.back() + 0.5 * h * (speeds_.back() + speed));
  offsets_.push_back(offset);
  speeds_.push_back(speed);
}

std::size_t SpeedProfile::piece(double offset) const {
  const auto it = std::upper_bound(offsets_.begin(), offsets_.end(), offset);
  return static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, it - offsets_.begin() - 1));
}

JointVector SpeedProfile::speed(double offset) const {
  if (offsets_.empty()) return JointVector::Zero();
  if (offset <= offsets_.front()) return speeds_.front();
  if (offset >= offsets_.back()) return speeds_.back();
  const std::size_t k = piece(offset);
  const double w = (offset - offsets_[k]) / (offsets_[k + 1] - offsets_[k]);
  return (1.0 - w) * speeds_[k] + w * speeds_[k + 1];
}

JointVector SpeedProfile::position(double offset) const {
  if (offsets_.empty()) return start_position_;
  if (offset <= offsets_.front()) return start_position_ + offset * speeds_.front();
  if (offset >= offsets_.back()) return positions_.back() + (offset - offsets_.back()) * speeds_.back();
  const std::size_t k = piece(offset);
  const double tau = offset - offsets_[k];
  const double h = offsets_[k + 1] - offsets_[k];
  const JointVector slope = (speeds_[k + 1] - speeds_[k]) / h;
  return positions_[k] + tau * speeds_[k] + 0.5 * tau * tau * slope;
}

SpeedProfile forecast(const MlpModel& model, const HistorySource& source, double t0, double horizon) {
  if (!(horizon > 0.0)) throw std::invalid_argument("forecast: horizon must be positive");
  const int windows = std::max(1, static_cast<int>(std::ceil(horizon / kWindow - 1e-9)));
  SpeedProfile profile(t0, source.at(t0).position);
  const ExtendedHistory extended(source, profile);

  for (int w = 0; w < windows; ++w) {
    const double anchor = t0 + w * kWindow;
    const PredictionMatrix pred =
        model.predict(build_history(w == 0 ? source : extended, anchor));
    if (w > 0) {
      const JointVector seam = pred.row(0).transpose() - profile.speeds().back();
      profile.max_seam_jump = std::max(profile.max_seam_jump, seam.cwiseAbs().maxCoeff());
    }
    for (int r = (w == 0 ? 0 : 1); r < kPredictionRows; ++r)
      profile.push(w * kWindow + kPredictionOffsets[r], pred.row(r).transpose());
  }
  profile.windows = windows;
  return profile;
}

std::vector<SpeedCommand> extrapolate(const MlpModel& model, const HistorySource& source,
                                      double gap_start, double horizon) {
  const SpeedProfile profile = forecast(model, source, gap_start, horizon);
  const auto n = static_cast<std::size_t>(std::llround(horizon / kControlPeriod));
  std::vector<SpeedCommand> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double a = k * kControlPeriod;
    out[k].kind = CommandKind::SpeedJ;
    out[k].timestamp = gap_start + a;
    out[k].sequence = k;
    out[k].args = (profile.position(a + kControlPeriod) - profile.position(a)) / kControlPeriod;
  }
  return out;
}

}  // namespace gapctl
