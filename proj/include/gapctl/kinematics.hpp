#pragma once

#include "gapctl/types.hpp"

#include <Eigen/Geometry>

#include <array>
#include <filesystem>
#include <optional>
#include <string>

namespace gapctl {

/// Tool pose. Orientation is kept as a rotation matrix; `rotation_vector()`
/// gives the canonical axis-angle form (angle in [0, pi]).
struct Pose {
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();

  Eigen::Vector3d rotation_vector() const;
  static Pose from_xyz_rotvec(const Eigen::Vector3d& xyz, const Eigen::Vector3d& rotvec);
};

/// Standard Denavit-Hartenberg row: Rz(theta + offset) Tz(d) Tx(a) Rx(alpha).
struct DhRow {
  double a = 0.0;
  double d = 0.0;
  double alpha = 0.0;
  double offset = 0.0;
};

struct ArmModel {
  std::string name = "ur5e";
  std::array<DhRow, kJoints> dh{};
  JointVector speed_limit = JointVector::Constant(3.14159265358979323846);
  JointVector accel_limit = JointVector::Constant(1.4);
  JointVector lower_limit = JointVector::Constant(-2.0 * 3.14159265358979323846);
  JointVector upper_limit = JointVector::Constant(2.0 * 3.14159265358979323846);

  /// Sum of |a| and |d| over all links; no pose farther than this from the base is reachable.
  double reach() const;
  bool within_limits(const JointVector& q) const;

  static ArmModel ur5e();
  /// Key-value text format, see config/ur5e.arm.
  static ArmModel load(const std::filesystem::path& path);
  static ArmModel parse(const std::string& text);
  std::string serialize() const;
};

Pose forward_kinematics(const ArmModel& model, const JointVector& q);
/// Tool position only; skips the final orientation product.
Eigen::Vector3d tool_position(const ArmModel& model, const JointVector& q);

/// Geometric Jacobian in the base frame: twist = J(q) * qd.
Matrix6d jacobian(const ArmModel& model, const JointVector& q);
/// Same, also returning the tool pose from the shared transform chain.
Matrix6d jacobian(const ArmModel& model, const JointVector& q, Pose& tool);

double min_singular_value(const Matrix6d& j);
/// min_singular_value(j) < threshold, skipping the decomposition when
/// |det j| / |j|_F^5 (a lower bound on it) already clears the threshold.
bool is_singular(const Matrix6d& j, double threshold);

/// Rotation log map (axis * angle).
Eigen::Vector3d rotation_log(const Eigen::Matrix3d& r);
Eigen::Matrix3d rotation_exp(const Eigen::Vector3d& w);

/// Spatial error twist taking `from` to `to`: position difference and rotation log.
Twist pose_error(const Pose& from, const Pose& to);

/// Pose reached by moving with constant spatial twist for `dt` seconds.
Pose advance_pose(const Pose& start, const Twist& twist, double dt);

struct IkOptions {
  double damping = 1e-3;
  int max_iterations = 200;
  double tolerance = 1e-10;
  double singular_threshold = 1e-6;
  double max_step = 0.5;
};

/// Damped least-squares IK seeded at `seed`; converges to the branch nearest
/// the seed. Empty when the target is out of reach, iteration enters a
/// singular region, or the solution leaves the joint limits.
std::optional<JointVector> inverse_kinematics_closest(const ArmModel& model, const Pose& target,
                                                      const JointVector& seed,
                                                      const IkOptions& options = {});

/// Joint speed reproducing a Cartesian twist: (J^T J + lambda^2 I)^-1 J^T v.
/// Empty when J is singular below `singular_threshold`.
std::optional<JointVector> damped_joint_speed(const ArmModel& model, const JointVector& q,
                                              const Twist& twist, double damping = 1e-4,
                                              double singular_threshold = 1e-6);

}  // namespace gapctl
