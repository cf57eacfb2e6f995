#include "gapctl/trajectory.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace gapctl {

namespace {

constexpr double kPi = 3.14159265358979323846;

double max_speed_on_segment(const Trajectory::Segment& s, double h, int j) {
  const double c1 = s.c[1][j], c2 = s.c[2][j], c3 = s.c[3][j];
  auto v = [&](double tau) { return c1 + tau * (2.0 * c2 + 3.0 * c3 * tau); };
  double m = std::max(std::abs(v(0.0)), std::abs(v(h)));
  if (c3 != 0.0) {
    const double tau = -c2 / (3.0 * c3);
    if (tau > 0.0 && tau < h) m = std::max(m, std::abs(v(tau)));
  }
  return m;
}

double max_accel_on_segment(const Trajectory::Segment& s, double h, int j) {
  const double a0 = 2.0 * s.c[2][j];
  const double a1 = 2.0 * s.c[2][j] + 6.0 * s.c[3][j] * h;
  return std::max(std::abs(a0), std::abs(a1));
}

}  // namespace

JointVector home_configuration() {
  JointVector q;
  q << -kPi / 2, -kPi / 2, kPi / 2, -kPi / 2, -kPi / 2, 0.0;
  return q;
}

std::vector<Pose> generate_waypoints(const ArmModel& model, std::uint64_t seed, int count,
                                     const WorkspaceBox& box, int max_retries) {
  if (count < 2) throw std::invalid_argument("generate_waypoints: count must be at least 2");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uy(box.y_min, box.y_max);
  std::uniform_real_distribution<double> uz(box.z_min, box.z_max);
  std::bernoulli_distribution side(0.5);
  const JointVector home = home_configuration();

  std::vector<Pose> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) {
    bool accepted = false;
    for (int attempt = 0; attempt <= max_retries && !accepted; ++attempt) {
      Pose p;
      p.position << (side(rng) ? box.x_surface : -box.x_surface), uy(rng), uz(rng);
      p.rotation = box.tool_rotation;
      if (inverse_kinematics_closest(model, p, home)) {
        out.push_back(p);
        accepted = true;
      }
    }
    if (!accepted) throw std::runtime_error("generate_waypoints: no reachable sample after retries");
  }
  return out;
}

Trajectory::Trajectory(std::vector<double> knots, std::vector<Segment> segments)
    : knots_(std::move(knots)), segments_(std::move(segments)) {
  if (knots_.size() < 2 || segments_.size() + 1 != knots_.size())
    throw std::invalid_argument("Trajectory: need n+1 knots for n segments");
  if (knots_.front() != 0.0) throw std::invalid_argument("Trajectory: first knot must be 0");
  for (std::size_t i = 1; i < knots_.size(); ++i)
    if (!(knots_[i] > knots_[i - 1])) throw std::invalid_argument("Trajectory: knots not increasing");
}

Trajectory Trajectory::clamped_spline(const std::vector<double>& t,
                                      const std::vector<JointVector>& p) {
  const std::size_t n = p.size() - 1;
  if (p.size() < 2 || t.size() != p.size())
    throw std::invalid_argument("clamped_spline: need matching knots and at least two points");

  std::vector<double> h(n);
  for (std::size_t i = 0; i < n; ++i) h[i] = t[i + 1] - t[i];

  // Tridiagonal system for interior knot speeds (end speeds are zero).
  std::vector<JointVector> v(n + 1, JointVector::Zero());
  if (n >= 2) {
    const std::size_t m = n - 1;
    std::vector<double> sub(m), diag(m), sup(m);
    std::vector<JointVector> rhs(m);
    for (std::size_t k = 0; k < m; ++k) {
      const std::size_t i = k + 1;
      sub[k] = h[i];
      diag[k] = 2.0 * (h[i - 1] + h[i]);
      sup[k] = h[i - 1];
      rhs[k] = 3.0 * (h[i] * (p[i] - p[i - 1]) / h[i - 1] + h[i - 1] * (p[i + 1] - p[i]) / h[i]);
    }
    for (std::size_t k = 1; k < m; ++k) {
      const double w = sub[k] / diag[k - 1];
      diag[k] -= w * sup[k - 1];
      rhs[k] -= w * rhs[k - 1];
    }
    v[m] = rhs[m - 1] / diag[m - 1];
    for (std::size_t k = m - 1; k-- > 0;) v[k + 1] = (rhs[k] - sup[k] * v[k + 2]) / diag[k];
  }

  std::vector<Segment> segs(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double hi = h[i];
    const JointVector dp = p[i + 1] - p[i];
    segs[i].c[0] = p[i];
    segs[i].c[1] = v[i];
    segs[i].c[2] = (3.0 * dp / hi - 2.0 * v[i] - v[i + 1]) / hi;
    segs[i].c[3] = (-2.0 * dp / hi + v[i] + v[i + 1]) / (hi * hi);
  }
  return Trajectory(t, std::move(segs));
}

std::size_t Trajectory::segment_index(double t) const {
  const auto it = std::upper_bound(knots_.begin(), knots_.end(), t);
  const auto idx = static_cast<std::ptrdiff_t>(it - knots_.begin()) - 1;
  return static_cast<std::size_t>(
      std::clamp<std::ptrdiff_t>(idx, 0, static_cast<std::ptrdiff_t>(segments_.size()) - 1));
}

JointSample Trajectory::sample(double t) const {
  JointSample out;
  if (segments_.empty()) return out;
  if (t >= knots_.back()) {
    out.position = waypoint(knots_.size() - 1);
    const auto& s = segments_.back();
    const double h = knots_.back() - knots_[knots_.size() - 2];
    out.speed = s.c[1] + h * (2.0 * s.c[2] + 3.0 * h * s.c[3]);
    return out;
  }
  if (t < 0.0) t = 0.0;
  const std::size_t k = segment_index(t);
  const auto& s = segments_[k];
  const double tau = t - knots_[k];
  out.position = s.c[0] + tau * (s.c[1] + tau * (s.c[2] + tau * s.c[3]));
  out.speed = s.c[1] + tau * (2.0 * s.c[2] + 3.0 * tau * s.c[3]);
  return out;
}

JointVector Trajectory::acceleration(double t) const {
  if (segments_.empty()) return JointVector::Zero();
  t = std::clamp(t, 0.0, knots_.back());
  const std::size_t k = segment_index(t);
  const auto& s = segments_[k];
  const double tau = t - knots_[k];
  return 2.0 * s.c[2] + 6.0 * tau * s.c[3];
}

JointVector Trajectory::waypoint(std::size_t i) const {
  if (i < segments_.size()) return segments_[i].c[0];
  const auto& s = segments_.back();
  const double h = knots_.back() - knots_[knots_.size() - 2];
  return s.c[0] + h * (s.c[1] + h * (s.c[2] + h * s.c[3]));
}

JointVector Trajectory::max_abs_speed() const {
  JointVector m = JointVector::Zero();
  for (std::size_t k = 0; k < segments_.size(); ++k) {
    const double h = knots_[k + 1] - knots_[k];
    for (int j = 0; j < kJoints; ++j) m[j] = std::max(m[j], max_speed_on_segment(segments_[k], h, j));
  }
  return m;
}

JointVector Trajectory::max_abs_acceleration() const {
  JointVector m = JointVector::Zero();
  for (std::size_t k = 0; k < segments_.size(); ++k) {
    const double h = knots_[k + 1] - knots_[k];
    for (int j = 0; j < kJoints; ++j) m[j] = std::max(m[j], max_accel_on_segment(segments_[k], h, j));
  }
  return m;
}

Trajectory time_joint_spline(const std::vector<JointVector>& points, const ArmModel& model,
                             const PlanOptions& options) {
  if (points.size() < 2) throw std::invalid_argument("time_joint_spline: need at least two points");
  const JointVector speed_cap = options.speed_fraction * model.speed_limit;
  const JointVector accel_cap = model.accel_limit;

  std::vector<double> base(points.size() - 1);
  for (std::size_t i = 0; i + 1 < points.size(); ++i) {
    const JointVector dq = (points[i + 1] - points[i]).cwiseAbs();
    base[i] = std::max(options.min_segment, dq.cwiseQuotient(speed_cap).maxCoeff());
  }

  auto build = [&](double stretch) {
    std::vector<double> t(points.size(), 0.0);
    for (std::size_t i = 0; i < base.size(); ++i) t[i + 1] = t[i] + stretch * base[i];
    return Trajectory::clamped_spline(t, points);
  };
  auto feasible = [&](const Trajectory& tr) {
    return (tr.max_abs_speed().array() <= speed_cap.array()).all() &&
           (tr.max_abs_acceleration().array() <= accel_cap.array()).all();
  };

  double lo = 0.0;
  for (double b : base) lo = std::max(lo, options.min_segment / b);
  Trajectory at_lo = build(lo);
  if (feasible(at_lo)) return at_lo;

  double hi = std::max(1.0, lo);
  Trajectory at_hi = build(hi);
  while (!feasible(at_hi)) {
    lo = hi;
    hi *= 2.0;
    at_hi = build(hi);
  }
  while (hi - lo > 1e-9 * hi) {
    const double mid = 0.5 * (lo + hi);
    Trajectory trial = build(mid);
    if (feasible(trial)) {
      hi = mid;
      at_hi = std::move(trial);
    } else {
      lo = mid;
    }
  }
  return at_hi;
}

Trajectory plan_trajectory(const std::vector<Pose>& waypoints, const ArmModel& model,
                           const PlanOptions& options) {
  if (waypoints.size() < 2) throw std::invalid_argument("plan_trajectory: need at least two waypoints");
  std::vector<JointVector> joints;
  joints.reserve(waypoints.size());
  JointVector seed = home_configuration();
  for (const auto& w : waypoints) {
    auto q = inverse_kinematics_closest(model, w, seed);
    if (!q) q = inverse_kinematics_closest(model, w, home_configuration());
    if (!q) throw std::runtime_error("plan_trajectory: waypoint has no IK solution");
    joints.push_back(*q);
    seed = *q;
  }
  return time_joint_spline(joints, model, options);
}

bool is_realizable(const Trajectory& traj, const ArmModel& model, double min_sigma) {
  const double T = traj.duration();
  const int n = static_cast<int>(std::ceil(T / 0.02));
  for (int i = 0; i <= n; ++i) {
    const double t = std::min(T, i * 0.02);
    const JointVector q = traj.sample(t).position;
    if (!model.within_limits(q)) return false;
    if (min_singular_value(jacobian(model, q)) < min_sigma) return false;
  }
  return true;
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
  // splitmix64 over a mixed key
  std::uint64_t z = master ^ (stream + 0x9e3779b97f4a7c15ULL + (master << 6) + (master >> 2));
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::vector<ArchiveEntry> generate_trajectories(const ArmModel& model,
                                                const GenerationOptions& options) {
  std::vector<ArchiveEntry> out;
  out.reserve(options.count);
  for (std::size_t i = 0; i < options.count; ++i) {
    bool done = false;
    for (int attempt = 0; attempt < options.max_attempts && !done; ++attempt) {
      const std::uint64_t seed =
          derive_seed(options.master_seed, (static_cast<std::uint64_t>(i) << 16) | attempt);
      try {
        const auto wps = generate_waypoints(model, seed, options.waypoints, options.box);
        Trajectory tr = plan_trajectory(wps, model, options.plan);
        if (!is_realizable(tr, model)) continue;
        out.push_back(ArchiveEntry{seed, i, std::move(tr)});
        done = true;
      } catch (const std::runtime_error&) {
        // unreachable sample or failed plan: draw again
      }
    }
    if (!done) throw std::runtime_error("generate_trajectories: attempts exhausted for index " + std::to_string(i));
  }
  return out;
}

}  // namespace gapctl
