#include "gapctl/extrapolation.hpp"

#include <algorithm>
#include <cmath>

namespace gapctl {

JointSample LogHistory::at(double t) const {
  if (samples_.empty()) return {};
  if (t <= 0.0) return samples_.front();
  const double x = t / step_;
  const auto k = static_cast<std::size_t>(std::floor(x));
  if (k + 1 >= samples_.size()) return samples_.back();
  const double w = x - static_cast<double>(k);
  if (w == 0.0) return samples_[k];
  JointSample s;
  s.position = (1.0 - w) * samples_[k].position + w * samples_[k + 1].position;
  s.speed = (1.0 - w) * samples_[k].speed + w * samples_[k + 1].speed;
  return s;
}

JointVector LogHistory::start_position() const {
  return samples_.empty() ? JointVector::Zero() : samples_.front().position;
}

HistoryMatrix build_history(const HistorySource& source, double t) {
  HistoryMatrix h;
  const JointVector start = source.start_position();
  for (int i = 0; i < kHistoryRows; ++i) {
    const double ti = t - kHistoryOffsets[i];
    JointSample s;
    if (ti < 0.0) {
      s.position = start;
      s.speed.setZero();
    } else {
      s = source.at(ti);
    }
    h.block<1, kJoints>(i, 0) = s.position.transpose();
    h.block<1, kJoints>(i, kJoints) = s.speed.transpose();
  }
  return h;
}

}  // namespace gapctl
