#pragma once

#include "gapctl/control_sim.hpp"
#include "gapctl/mlp.hpp"
#include "gapctl/scaling.hpp"
#include "gapctl/trajectory.hpp"
#include "gapctl/training.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace gapctl {

struct ExperimentConfig {
  std::uint64_t seed = 1;
  /// Arm description file; empty selects the built-in UR5e.
  std::filesystem::path arm;
  std::filesystem::path output = "out";
  /// Checkpoint path; empty means <output>/model.bin.
  std::filesystem::path model;
  /// Worker threads for per-trajectory work; 0 uses the hardware count.
  unsigned threads = 0;

  // generation
  std::size_t train_trajectories = 500;
  std::size_t validation_trajectories = 200;
  int waypoints = 9;

  // training
  TrainingConfig training{};
  int layers = 3;
  std::size_t parameter_budget = 50354;
  /// Extra model sizes (parameters) trained with `layers` hidden layers.
  std::vector<std::size_t> size_sweep{4000, 16000};
  std::vector<int> depth_sweep{2, 3, 5, 7};
  /// Extra training-set sizes (trajectories) at the main architecture.
  std::vector<std::size_t> data_sweep{40, 100};

  // scaling
  std::size_t scale_trajectories = 50;
  std::vector<double> gaps{0.05, 0.1, 0.15, 0.2};
  std::vector<double> limits{1e-4, 5e-4, 1e-3};
  ScalingMode mode = ScalingMode::Static;
  /// Also solve with the adaptive (model-based) law; needs a checkpoint.
  bool ai_law = true;
  double critical_fraction = 0.5;
  double limit_offset = 0.0;
  /// Trajectories whose solutions are re-checked on the fine grid (0 = none).
  std::size_t verify_trajectories = 0;
  /// Laws re-checked on the fine grid; the adaptive check is costly.
  bool verify_ai = false;
  VerifyGrid verify_grid{};
  std::size_t fraction_trajectories = 10;
  double fraction_limit = 5e-4;
  /// Gap length for the unscaled deviation histogram and limit for the
  /// supported-gap histogram; a step of 0 skips both.
  double histogram_gap = 0.2;
  double histogram_limit = 5e-4;
  double histogram_step = 0.01;
  bool sidecars = false;

  // simulation
  std::size_t simulate_trajectory = 0;
  /// Gap starts [s]; empty places two gaps at 1/3 and 2/3 of the duration.
  std::vector<double> simulate_gap_starts;
  double simulate_gap = 0.2;
  double gain = 5.0;
  /// Policy of the adaptive run: "method_a" or "method_ab".
  std::string policy = "method_ab";

  std::filesystem::path model_path() const;
  std::filesystem::path archive_dir() const { return output / "archive"; }
  /// Throws std::invalid_argument on empty grids or inconsistent values.
  void validate() const;
  nlohmann::json to_json() const;
};

/// One pass/fail verification with the measured value and its bound.
struct Check {
  std::string name;
  bool pass = false;
  double value = 0.0;
  double bound = 0.0;
  std::string detail;
};

bool all_pass(const std::vector<Check>& checks);
void print_checks(std::ostream& out, const std::vector<Check>& checks);
nlohmann::json checks_to_json(const std::vector<Check>& checks);
std::vector<Check> checks_from_json(const nlohmann::json& j);

ArmModel load_arm(const ExperimentConfig& config);

struct TrajectorySplit {
  std::vector<ArchiveEntry> training;
  std::vector<ArchiveEntry> validation;
};

GenerationOptions generation_options(const ExperimentConfig& config);

/// The first train_trajectories entries train, the rest validate.
TrajectorySplit generate_split(const ExperimentConfig& config, const ArmModel& arm);
TrajectorySplit split_archive(const ExperimentConfig& config, std::vector<ArchiveEntry> entries);
/// Reads the archive under the output directory, or generates it when missing.
TrajectorySplit load_or_generate(const ExperimentConfig& config, const ArmModel& arm,
                                 std::ostream* log = nullptr);

std::vector<const TimedPath*> path_pointers(const std::vector<ArchiveEntry>& entries,
                                            std::size_t limit = static_cast<std::size_t>(-1));

/// Count, joint limits, speed and acceleration caps, and singularity distance.
std::vector<Check> check_archive(const ExperimentConfig& config, const ArmModel& arm,
                                 const TrajectorySplit& split);

// -- training -----------------------------------------------------------------

struct TrainRun {
  int layers = 0;
  int width = 0;
  std::size_t parameters = 0;
  std::size_t trajectories = 0;
  double validation_l1 = 0.0;
  double baseline_l1 = 0.0;
  int best_epoch = 0;
  int epochs = 0;
};

struct TrainReport {
  TrainingResult main;
  TrainRun main_run;
  std::vector<TrainRun> size_runs;
  std::vector<TrainRun> depth_runs;
  std::vector<TrainRun> data_runs;
  std::vector<Check> checks;
};

/// Main model plus the size, depth and data sweeps. Identical architectures
/// and training sets are trained once.
TrainReport run_training(const ExperimentConfig& config, const ArmModel& arm,
                         const TrajectorySplit& split, std::ostream* log = nullptr);

/// Model checkpoint, training_curve.csv, size_sweep.csv, depth_sweep.csv,
/// data_sweep.csv. Returns the written files.
std::vector<std::filesystem::path> write_training_outputs(const ExperimentConfig& config,
                                                          const TrainReport& report);

// -- scaling ------------------------------------------------------------------

struct ScaleCell {
  std::size_t trajectory = 0;
  double limit = 0.0;
  double gap = 0.0;
  ExtrapolationLaw law = ExtrapolationLaw::SpeedJHold;
  bool feasible = false;
  double base_duration = 0.0;
  double duration = 0.0;
  double critical_rate = 0.0;
  bool used_incumbent = false;
  std::optional<ConstraintReport> verification;
};

struct FractionRow {
  double gap = 0.0;
  std::array<std::size_t, kCommandKinds> counts{};
  double share(CommandKind k) const;
};

struct UnscaledLimits {
  std::size_t trajectory = 0;
  /// Deviation with the unscaled trajectory at histogram_gap [m].
  double hold_deviation = 0.0;
  double ai_deviation = 0.0;
  /// Largest gap on the histogram grid meeting histogram_limit unscaled [s].
  double hold_gap = 0.0;
  double ai_gap = 0.0;
};

struct ScaleReport {
  std::vector<ScaleCell> cells;
  std::vector<FractionRow> fractions;
  std::vector<UnscaledLimits> unscaled;
  std::vector<Check> checks;

  /// Mean scaled duration over feasible cells; NaN when none.
  double mean_duration(ExtrapolationLaw law, double limit, double gap) const;
  /// 'A' feasible unscaled with held joint speeds, 'B' only with the adaptive
  /// law, 'C' needs scaling, '-' infeasible.
  char region(std::size_t trajectory, double limit, double gap) const;
};

/// Solves every (trajectory, L, Delta, law) cell of the validation prefix.
/// The adaptive solve is seeded with the hold solution as incumbent.
ScaleReport run_scaling(const ExperimentConfig& config, const ArmModel& arm,
                        const std::vector<ArchiveEntry>& trajectories, const MlpModel* model,
                        std::ostream* log = nullptr);

/// durations.csv, mean_durations.csv, regions.csv, fractions.csv,
/// unscaled_limits.csv, unscaled_histograms.csv.
std::vector<std::filesystem::path> write_scaling_outputs(const ExperimentConfig& config,
                                                         const ScaleReport& report);

// -- simulation ---------------------------------------------------------------

struct GapSummary {
  Gap gap;
  double speedj = 0.0;
  double speedl = 0.0;
  double adaptive = 0.0;
};

struct SimulateReport {
  double duration = 0.0;
  SimResult speedj;
  SimResult speedl;
  SimResult adaptive;
  /// Adaptive policy without gaps.
  double no_gap_deviation = 0.0;
  std::vector<GapSummary> gaps;
  std::vector<Check> checks;
};

/// The three policies on one validation trajectory under the same gaps.
SimulateReport run_simulate(const ExperimentConfig& config, const ArmModel& arm,
                            const Trajectory& plan, const MlpModel* model);

/// simulation.csv (side by side) and simulation_gaps.csv.
std::vector<std::filesystem::path> write_simulation_outputs(const ExperimentConfig& config,
                                                            const SimulateReport& report);

// -- bookkeeping --------------------------------------------------------------

/// Merges one command's entry into <output>/manifest.json: config, seed,
/// producing modules and files, check results.
void record_run(const ExperimentConfig& config, const std::string& command,
                const std::vector<std::filesystem::path>& files,
                const std::vector<std::string>& modules, const std::vector<Check>& checks);

/// Checks recorded by earlier commands, read from the manifest.
std::vector<Check> recorded_checks(const ExperimentConfig& config, const std::string& command);

/// Kinematics round trips and telemetry encoding, quick enough for every run.
std::vector<Check> self_checks(const ArmModel& arm, std::uint64_t seed, std::size_t samples = 200);

}  // namespace gapctl
