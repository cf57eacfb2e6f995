#pragma once

#include <Eigen/Core>

#include <stdexcept>
#include <string>

namespace gapctl {

inline constexpr int kJoints = 6;

/// Joint positions [rad] or joint speeds [rad/s]; the same shape serves both.
using JointVector = Eigen::Matrix<double, kJoints, 1>;
/// Cartesian twist: linear velocity [m/s] on top, angular velocity [rad/s] below.
using Twist = Eigen::Matrix<double, 6, 1>;
using Matrix6d = Eigen::Matrix<double, 6, 6>;

/// Tick period of the local controller.
inline constexpr double kControlPeriod = 0.002;

struct JointSample {
  JointVector position = JointVector::Zero();
  JointVector speed = JointVector::Zero();
};

/// Anything that maps time to joint position and speed on [0, duration].
/// Implemented by planned splines and by time-scaled views of them.
class TimedPath {
 public:
  virtual ~TimedPath() = default;
  virtual double duration() const = 0;
  /// Clamped to [0, duration].
  virtual JointSample sample(double t) const = 0;
  virtual JointVector acceleration(double t) const = 0;
};

class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::size_t line)
      : std::runtime_error(what + " (line " + std::to_string(line) + ")"), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

}  // namespace gapctl
