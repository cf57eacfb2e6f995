#pragma once

#include "gapctl/kinematics.hpp"
#include "gapctl/types.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace gapctl {

/// Waypoint sampling region: the two planes x = +/-x_surface bounded in y and z.
struct WorkspaceBox {
  double x_surface = 0.4;
  double y_min = 0.1;
  double y_max = 0.7;
  double z_min = -0.3;
  double z_max = 0.6;
  /// Tool orientation used for every waypoint (tool axis pointing down).
  Eigen::Matrix3d tool_rotation = (Eigen::Matrix3d() << 1, 0, 0, 0, -1, 0, 0, 0, -1).finished();
};

/// Seed configuration for waypoint IK: elbow up, tool down, in front of the base.
JointVector home_configuration();

/// Samples `count` reachable poses on the workspace surfaces. The surface is
/// drawn independently per waypoint. Each rejected sample is redrawn up to
/// `max_retries` times before giving up with std::runtime_error.
std::vector<Pose> generate_waypoints(const ArmModel& model, std::uint64_t seed, int count,
                                     const WorkspaceBox& box = {}, int max_retries = 100);

/// Joint-space cubic spline, C2 inside, zero speed at both ends.
class Trajectory final : public TimedPath {
 public:
  /// q(t_k + tau) = c[0] + c[1] tau + c[2] tau^2 + c[3] tau^3
  struct Segment {
    std::array<JointVector, 4> c;
  };

  Trajectory() = default;
  Trajectory(std::vector<double> knots, std::vector<Segment> segments);

  /// Clamped cubic spline (zero end speeds) through `points` at `knot_times`.
  static Trajectory clamped_spline(const std::vector<double>& knot_times,
                                   const std::vector<JointVector>& points);

  double duration() const override { return knots_.empty() ? 0.0 : knots_.back(); }
  JointSample sample(double t) const override;
  JointVector acceleration(double t) const override;

  const std::vector<double>& knots() const { return knots_; }
  const std::vector<Segment>& segments() const { return segments_; }
  JointVector waypoint(std::size_t i) const;
  std::size_t waypoint_count() const { return knots_.size(); }

  /// Exact per-joint maxima of |qd| and |qdd| over [0, T].
  JointVector max_abs_speed() const;
  JointVector max_abs_acceleration() const;

 private:
  std::size_t segment_index(double t) const;

  std::vector<double> knots_;
  std::vector<Segment> segments_;
};

struct PlanOptions {
  /// Speed cap as a fraction of each joint's speed limit.
  double speed_fraction = 0.25;
  /// Floor on each segment's duration [s].
  double min_segment = 0.1;
};

/// Times a joint-space spline through `points` as fast as the speed and
/// acceleration caps allow, by bisection on one global stretch factor.
Trajectory time_joint_spline(const std::vector<JointVector>& points, const ArmModel& model,
                             const PlanOptions& options = {});

/// IK of every waypoint (seeded by the previous solution), then timing.
/// Throws std::runtime_error when a waypoint has no IK solution.
Trajectory plan_trajectory(const std::vector<Pose>& waypoints, const ArmModel& model,
                           const PlanOptions& options = {});

/// Joint limits hold along the whole trajectory and the Jacobian stays away from
/// singularity (smallest singular value at least `min_sigma`, sampled every 20 ms).
bool is_realizable(const Trajectory& traj, const ArmModel& model, double min_sigma = 0.01);

// -- serialization -----------------------------------------------------------

void write_trajectory(std::ostream& out, const Trajectory& traj);
/// Throws FormatError on malformed input.
Trajectory read_trajectory(std::istream& in);
void save_trajectory(const std::filesystem::path& path, const Trajectory& traj);
Trajectory load_trajectory(const std::filesystem::path& path);

struct ArchiveEntry {
  std::uint64_t seed = 0;
  std::size_t index = 0;
  Trajectory trajectory;
};

struct GenerationOptions {
  std::uint64_t master_seed = 1;
  std::size_t count = 100;
  int waypoints = 9;
  WorkspaceBox box{};
  PlanOptions plan{};
  /// Upper bound on attempts per accepted trajectory before giving up.
  int max_attempts = 50;
};

/// Deterministic batch generation; trajectory i uses a stream derived from
/// (master_seed, i) and attempts are redrawn until the result is realizable.
std::vector<ArchiveEntry> generate_trajectories(const ArmModel& model,
                                                const GenerationOptions& options);

std::filesystem::path archive_file_name(std::uint64_t seed, std::size_t index);
/// Writes traj_<seed>_<index>.traj files plus manifest.json.
void write_archive(const std::filesystem::path& dir, const std::vector<ArchiveEntry>& entries,
                   const GenerationOptions& options, const ArmModel& model);
std::vector<ArchiveEntry> read_archive(const std::filesystem::path& dir);

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream);

}  // namespace gapctl
