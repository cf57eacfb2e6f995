#include "gapctl/time_scaling.hpp"

#include <algorithm>
#include <cmath>

namespace gapctl {

TimeScaling::TimeScaling(std::vector<double> rate, double base_duration, double step)
    : step_(step), base_duration_(base_duration), rate_(std::move(rate)) {
  if (!(step_ > 0.0) || !(base_duration_ > 0.0))
    throw InvalidScaling("TimeScaling: step and base duration must be positive");
  if (rate_.size() < 2) throw InvalidScaling("TimeScaling: need at least two rate samples");
  for (double r : rate_)
    if (!(r > 0.0 && r <= 1.0)) throw InvalidScaling("TimeScaling: rate outside (0, 1]");

  cumulative_.resize(rate_.size());
  cumulative_[0] = 0.0;
  // compensated sum keeps s(t) within a few ulp over long profiles
  double sum = 0.0, carry = 0.0;
  for (std::size_t k = 1; k < rate_.size(); ++k) {
    const double x = 0.5 * step_ * (rate_[k - 1] + rate_[k]);
    const double t = sum + x;
    carry += std::abs(sum) >= std::abs(x) ? (sum - t) + x : (x - t) + sum;
    sum = t;
    cumulative_[k] = sum + carry;
  }
  if (cumulative_.back() < base_duration_)
    throw InvalidScaling("TimeScaling: samples end before the base trajectory does");

  const auto it = std::lower_bound(cumulative_.begin(), cumulative_.end(), base_duration_);
  const std::size_t k = static_cast<std::size_t>(std::max<std::ptrdiff_t>(1, it - cumulative_.begin())) - 1;
  // s_k + r_k tau + 0.5 a tau^2 = T_b on [0, step]
  const double a = (rate_[k + 1] - rate_[k]) / step_;
  const double rem = base_duration_ - cumulative_[k];
  double tau;
  if (std::abs(a) < 1e-300) {
    tau = rem / rate_[k];
  } else {
    const double disc = std::max(0.0, rate_[k] * rate_[k] + 2.0 * a * rem);
    tau = 2.0 * rem / (rate_[k] + std::sqrt(disc));
  }
  duration_ = static_cast<double>(k) * step_ + std::clamp(tau, 0.0, step_);
}

TimeScaling TimeScaling::constant(double c, double base_duration, double step) {
  if (!(c > 0.0 && c <= 1.0)) throw InvalidScaling("TimeScaling::constant: rate outside (0, 1]");
  const auto n = static_cast<std::size_t>(std::ceil(base_duration / (c * step))) + 2;
  TimeScaling s(std::vector<double>(n, c), base_duration, step);
  s.duration_ = base_duration / c;
  return s;
}

std::size_t TimeScaling::interval(double t) const {
  const double x = std::floor(t / step_);
  if (x <= 0.0) return 0;
  return std::min(static_cast<std::size_t>(x), rate_.size() - 2);
}

double TimeScaling::position(double t) const {
  t = std::clamp(t, 0.0, duration_);
  if (t == duration_) return base_duration_;
  const std::size_t k = interval(t);
  const double tau = t - static_cast<double>(k) * step_;
  const double a = (rate_[k + 1] - rate_[k]) / step_;
  return std::min(base_duration_, cumulative_[k] + tau * (rate_[k] + 0.5 * a * tau));
}

double TimeScaling::rate(double t) const {
  t = std::clamp(t, 0.0, duration_);
  const std::size_t k = interval(t);
  const double w = (t - static_cast<double>(k) * step_) / step_;
  return (1.0 - w) * rate_[k] + w * rate_[k + 1];
}

double TimeScaling::slope(double t) const {
  t = std::clamp(t, 0.0, duration_);
  const std::size_t k = interval(t);
  return (rate_[k + 1] - rate_[k]) / step_;
}

double TimeScaling::inverse(double sigma) const {
  if (sigma <= 0.0) return 0.0;
  if (sigma >= base_duration_) return duration_;
  const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), sigma);
  const std::size_t k = static_cast<std::size_t>(it - cumulative_.begin()) - 1;
  const double a = (rate_[k + 1] - rate_[k]) / step_;
  const double rem = sigma - cumulative_[k];
  const double disc = std::max(0.0, rate_[k] * rate_[k] + 2.0 * a * rem);
  const double tau = 2.0 * rem / (rate_[k] + std::sqrt(disc));
  return std::min(duration_, static_cast<double>(k) * step_ + std::clamp(tau, 0.0, step_));
}

double PathRate::at(double sigma) const {
  if (values.empty()) return 1.0;
  const double x = sigma / step;
  if (x <= 0.0) return values.front();
  const auto k = static_cast<std::size_t>(x);
  if (k + 1 >= values.size()) return values.back();
  const double w = x - static_cast<double>(k);
  return (1.0 - w) * values[k] + w * values[k + 1];
}

TimeScaling scaling_from_path_rate(const PathRate& rate, double base_duration, double step) {
  std::vector<double> r{rate.at(0.0)};
  double s = 0.0;
  while (s < base_duration) {
    const double r0 = r.back();
    double next = s + step * r0;
    for (int it = 0; it < 4; ++it) next = s + 0.5 * step * (r0 + rate.at(next));
    const double r1 = std::clamp(rate.at(next), 1e-9, 1.0);
    r.push_back(r1);
    s += 0.5 * step * (r0 + r1);
  }
  r.push_back(r.back());
  return TimeScaling(std::move(r), base_duration, step);
}

ScaledTrajectory::ScaledTrajectory(Trajectory base, TimeScaling scaling)
    : base_(std::move(base)), scaling_(std::move(scaling)) {
  if (std::abs(scaling_.base_duration() - base_.duration()) > 1e-9 * std::max(1.0, base_.duration()))
    throw InvalidScaling("ScaledTrajectory: scaling and trajectory durations differ");
}

JointSample ScaledTrajectory::sample(double t) const {
  const double tc = std::clamp(t, 0.0, scaling_.duration());
  JointSample out = base_.sample(scaling_.position(tc));
  out.speed *= scaling_.rate(tc);
  return out;
}

JointVector ScaledTrajectory::acceleration(double t) const {
  const double tc = std::clamp(t, 0.0, scaling_.duration());
  const double sigma = scaling_.position(tc);
  const double r = scaling_.rate(tc);
  return scaling_.slope(tc) * base_.sample(sigma).speed + r * r * base_.acceleration(sigma);
}

ScaledTrajectory apply_scaling(const Trajectory& base, const TimeScaling& scaling) {
  return ScaledTrajectory(base, scaling);
}

}  // namespace gapctl
