#include "gapctl/scaling.hpp"

#include "gapctl/extrapolation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace gapctl {

namespace {

// Planned tool positions on the lattice t0 + j * unit, computed on demand.
class PlannedCache {
 public:
  PlannedCache(const ScaledTrajectory& path, const ArmModel& arm, double t0, double unit)
      : path_(path), arm_(arm), t0_(t0), unit_(unit) {}

  const Eigen::Vector3d& at(std::size_t j) {
    if (j >= values_.size()) {
      values_.resize(j + 1);
      known_.resize(j + 1, false);
    }
    if (!known_[j]) {
      values_[j] = tool_position(arm_, path_.sample(t0_ + static_cast<double>(j) * unit_).position);
      known_[j] = true;
    }
    return values_[j];
  }

 private:
  const ScaledTrajectory& path_;
  const ArmModel& arm_;
  double t0_;
  double unit_;
  std::vector<Eigen::Vector3d> values_;
  std::vector<bool> known_;
};

}  // namespace

GapDeviation gap_deviation(const ScaledTrajectory& scaled, double max_gap, double seg_start,
                           double seg_end, const DeviationLaw& law, const DeviationGrid& grid,
                           double abort_above, std::optional<std::pair<double, double>> window) {
  if (!law.arm) throw std::invalid_argument("gap_deviation: arm model missing");
  if (law.law == ExtrapolationLaw::Adaptive && !law.model)
    throw std::invalid_argument("gap_deviation: adaptive law needs a model");
  if (!(max_gap > 0.0) || grid.delta_steps < 1 || !(grid.start_step > 0.0))
    throw std::invalid_argument("gap_deviation: bad grid");

  const ArmModel& arm = *law.arm;
  const TimeScaling& ts = scaled.scaling();
  const double t_lo = ts.inverse(seg_start);
  const double t_hi = ts.inverse(seg_end);
  const double dstep = max_gap / grid.delta_steps;

  // Shared lattice for starts and gap offsets, in integer nanoseconds.
  const auto start_ns = std::llround(grid.start_step * 1e9);
  const auto delta_ns = std::llround(dstep * 1e9);
  const bool lattice = start_ns > 0 && delta_ns > 0 &&
                       std::abs(start_ns * 1e-9 - grid.start_step) < 1e-15 &&
                       std::abs(delta_ns * 1e-9 - dstep) < 1e-15;
  const long long unit_ns = lattice ? std::gcd(start_ns, delta_ns) : 1;
  const long long per_start = lattice ? start_ns / unit_ns : 0;
  const long long per_delta = lattice ? delta_ns / unit_ns : 0;

  const auto n_grid = static_cast<long long>(std::floor((t_hi - t_lo) / grid.start_step + 1e-9));
  long long i_min = 0, i_max = n_grid;
  bool include_end = t_hi - (t_lo + n_grid * grid.start_step) > 1e-12;
  if (window) {
    i_min = std::max(0LL, static_cast<long long>(std::ceil((window->first - t_lo) / grid.start_step - 1e-9)));
    i_max = std::min(n_grid, static_cast<long long>(std::floor((window->second - t_lo) / grid.start_step + 1e-9)));
    include_end = include_end && t_hi >= window->first && t_hi <= window->second;
  }

  const double base_t = t_lo + static_cast<double>(i_min) * grid.start_step;
  PlannedCache cache(scaled, arm, base_t, unit_ns * 1e-9);

  SelectionParams sel = law.selection;
  sel.max_gap = max_gap;
  const PathHistory history(scaled);

  GapDeviation out;
  // With matching grids the selected kind's deviation lies in
  // [min(D_J, D_AI, D_L), D_J], so the selection itself is only needed when
  // the threshold falls inside that interval.
  const bool bounded = law.law == ExtrapolationLaw::Adaptive && std::isfinite(abort_above) &&
                       grid.delta_steps == sel.sweep_steps;
  std::vector<Eigen::Vector3d> planned(grid.delta_steps + 1);

  auto evaluate = [&](double t, long long grid_index) {
    const JointSample st = scaled.sample(t);
    for (int k = 0; k <= grid.delta_steps; ++k)
      planned[k] = grid_index >= 0
                       ? cache.at(static_cast<std::size_t>((grid_index - i_min) * per_start + k * per_delta))
                       : tool_position(arm, scaled.sample(t + dstep * k).position);

    auto hold = [&] {
      double d = 0.0;
      for (int k = 0; k <= grid.delta_steps; ++k)
        d = std::max(d, (planned[k] - tool_position(arm, st.position + dstep * k * st.speed)).norm());
      return d;
    };
    auto line = [&] {
      const Eigen::Vector3d p0 = tool_position(arm, st.position);
      const Eigen::Vector3d v = (jacobian(arm, st.position) * st.speed).head<3>();
      double d = 0.0;
      for (int k = 0; k <= grid.delta_steps; ++k) d = std::max(d, (planned[k] - (p0 + dstep * k * v)).norm());
      return d;
    };
    auto predicted = [&](const SpeedProfile& profile) {
      const JointVector base_pos = profile.position(0.0);
      double d = 0.0;
      for (int k = 0; k <= grid.delta_steps; ++k)
        d = std::max(d, (planned[k] - tool_position(arm, st.position + (profile.position(dstep * k) - base_pos)))
                            .norm());
      return d;
    };

    double worst;
    if (law.law == ExtrapolationLaw::SpeedJHold) {
      worst = hold();
    } else {
      const SpeedProfile profile = forecast(*law.model, history, t, max_gap);
      const double dj = hold();
      std::optional<double> resolved;
      if (bounded) {
        if (dj <= abort_above) {
          resolved = dj;
        } else {
          const double lower = std::min({dj, predicted(profile), line()});
          if (lower > abort_above) resolved = lower;
        }
      }
      if (resolved) {
        worst = *resolved;
      } else {
        const CommandKind kind = get_command(arm, st.speed, st.position, sel, &scaled, t, &profile).kind;
        ++out.kinds[static_cast<int>(kind)];
        worst = kind == CommandKind::SpeedJ ? dj : (kind == CommandKind::SpeedL ? line() : predicted(profile));
      }
    }
    ++out.starts;
    if (worst > out.value) {
      out.value = worst;
      out.worst_start = t;
    }
    return out.value <= abort_above;
  };

  for (long long i = i_min; i <= i_max; ++i) {
    const double t = t_lo + static_cast<double>(i) * grid.start_step;
    if (!evaluate(t, lattice ? i : -1)) {
      out.aborted = true;
      return out;
    }
  }
  if (include_end && !evaluate(t_hi, -1)) out.aborted = true;
  return out;
}

}  // namespace gapctl
