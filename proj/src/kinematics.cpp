#include "gapctl/kinematics.hpp"

#include <Eigen/Dense>

#include <cmath>

namespace gapctl {

namespace {

constexpr double kPi = 3.14159265358979323846;

// Row-major 3x4 homogeneous transform without the constant last row.
struct Frame {
  Eigen::Matrix3d r = Eigen::Matrix3d::Identity();
  Eigen::Vector3d p = Eigen::Vector3d::Zero();
};

inline Frame dh_frame(const DhRow& row, double q) {
  const double th = q + row.offset;
  const double ct = std::cos(th), st = std::sin(th);
  const double ca = std::cos(row.alpha), sa = std::sin(row.alpha);
  Frame f;
  f.r << ct, -st * ca, st * sa,
         st, ct * ca, -ct * sa,
         0.0, sa, ca;
  f.p << row.a * ct, row.a * st, row.d;
  return f;
}

inline void compose(Frame& acc, const Frame& next) {
  acc.p += acc.r * next.p;
  acc.r = acc.r * next.r;
}

}  // namespace

Eigen::Vector3d Pose::rotation_vector() const { return rotation_log(rotation); }

Pose Pose::from_xyz_rotvec(const Eigen::Vector3d& xyz, const Eigen::Vector3d& rotvec) {
  Pose p;
  p.position = xyz;
  p.rotation = rotation_exp(rotvec);
  return p;
}

double ArmModel::reach() const {
  double sum = 0.0;
  for (const auto& row : dh) sum += std::abs(row.a) + std::abs(row.d);
  return sum;
}

bool ArmModel::within_limits(const JointVector& q) const {
  return q.allFinite() && (q.array() >= lower_limit.array()).all() &&
         (q.array() <= upper_limit.array()).all();
}

ArmModel ArmModel::ur5e() {
  ArmModel m;
  m.name = "ur5e";
  m.dh = {{{0.0, 0.1625, kPi / 2, 0.0},
           {-0.425, 0.0, 0.0, 0.0},
           {-0.3922, 0.0, 0.0, 0.0},
           {0.0, 0.1333, kPi / 2, 0.0},
           {0.0, 0.0997, -kPi / 2, 0.0},
           {0.0, 0.0996, 0.0, 0.0}}};
  m.speed_limit = JointVector::Constant(kPi);
  m.accel_limit = JointVector::Constant(1.4);
  return m;
}

Pose forward_kinematics(const ArmModel& model, const JointVector& q) {
  Frame acc;
  for (int i = 0; i < kJoints; ++i) compose(acc, dh_frame(model.dh[i], q[i]));
  Pose out;
  out.position = acc.p;
  out.rotation = acc.r;
  return out;
}

Eigen::Vector3d tool_position(const ArmModel& model, const JointVector& q) {
  Frame acc;
  for (int i = 0; i < kJoints - 1; ++i) compose(acc, dh_frame(model.dh[i], q[i]));
  const Frame last = dh_frame(model.dh[kJoints - 1], q[kJoints - 1]);
  return acc.p + acc.r * last.p;
}

Matrix6d jacobian(const ArmModel& model, const JointVector& q) {
  Pose unused;
  return jacobian(model, q, unused);
}

Matrix6d jacobian(const ArmModel& model, const JointVector& q, Pose& tool) {
  std::array<Eigen::Vector3d, kJoints> origin;
  std::array<Eigen::Vector3d, kJoints> axis;
  Frame acc;
  for (int i = 0; i < kJoints; ++i) {
    origin[i] = acc.p;
    axis[i] = acc.r.col(2);
    compose(acc, dh_frame(model.dh[i], q[i]));
  }
  Matrix6d j;
  for (int i = 0; i < kJoints; ++i) {
    j.block<3, 1>(0, i) = axis[i].cross(acc.p - origin[i]);
    j.block<3, 1>(3, i) = axis[i];
  }
  tool.position = acc.p;
  tool.rotation = acc.r;
  return j;
}

double min_singular_value(const Matrix6d& j) {
  Eigen::SelfAdjointEigenSolver<Matrix6d> eig(j.transpose() * j, Eigen::EigenvaluesOnly);
  return std::sqrt(std::max(0.0, eig.eigenvalues()[0]));
}

bool is_singular(const Matrix6d& j, double threshold) {
  const double f = j.norm();
  const double f5 = f * f * f * f * f;
  if (f5 > 0.0 && std::abs(j.partialPivLu().determinant()) >= threshold * f5) return false;
  return min_singular_value(j) < threshold;
}

Eigen::Vector3d rotation_log(const Eigen::Matrix3d& r) {
  const Eigen::AngleAxisd aa(r);
  double angle = aa.angle();
  Eigen::Vector3d axis = aa.axis();
  if (angle > kPi) {
    angle = 2.0 * kPi - angle;
    axis = -axis;
  }
  return axis * angle;
}

Eigen::Matrix3d rotation_exp(const Eigen::Vector3d& w) {
  const double angle = w.norm();
  if (angle < 1e-300) return Eigen::Matrix3d::Identity();
  return Eigen::AngleAxisd(angle, w / angle).toRotationMatrix();
}

Twist pose_error(const Pose& from, const Pose& to) {
  Twist e;
  e.head<3>() = to.position - from.position;
  e.tail<3>() = rotation_log(to.rotation * from.rotation.transpose());
  return e;
}

Pose advance_pose(const Pose& start, const Twist& twist, double dt) {
  Pose p;
  p.position = start.position + dt * twist.head<3>();
  p.rotation = rotation_exp(dt * twist.tail<3>()) * start.rotation;
  return p;
}

std::optional<JointVector> inverse_kinematics_closest(const ArmModel& model, const Pose& target,
                                                      const JointVector& seed,
                                                      const IkOptions& options) {
  if (!target.position.allFinite() || !seed.allFinite()) return std::nullopt;
  if (target.position.norm() > model.reach()) return std::nullopt;

  JointVector q = seed;
  const double lambda2 = options.damping * options.damping;
  for (int it = 0; it <= options.max_iterations; ++it) {
    Pose current;
    const Matrix6d j = jacobian(model, q, current);
    const Twist e = pose_error(current, target);
    if (e.head<3>().norm() < options.tolerance && e.tail<3>().norm() < options.tolerance) {
      if (!model.within_limits(q)) return std::nullopt;
      return q;
    }
    if (it == options.max_iterations) break;
    if (is_singular(j, options.singular_threshold)) return std::nullopt;
    const Matrix6d jjt = j * j.transpose() + lambda2 * Matrix6d::Identity();
    JointVector dq = j.transpose() * jjt.ldlt().solve(e);
    const double largest = dq.cwiseAbs().maxCoeff();
    if (largest > options.max_step) dq *= options.max_step / largest;
    q += dq;
  }
  return std::nullopt;
}

std::optional<JointVector> damped_joint_speed(const ArmModel& model, const JointVector& q,
                                              const Twist& twist, double damping,
                                              double singular_threshold) {
  const Matrix6d j = jacobian(model, q);
  if (is_singular(j, singular_threshold)) return std::nullopt;
  const Matrix6d jtj = j.transpose() * j + damping * damping * Matrix6d::Identity();
  return JointVector(jtj.ldlt().solve(j.transpose() * twist));
}

}  // namespace gapctl
