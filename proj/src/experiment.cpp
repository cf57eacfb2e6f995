#include "gapctl/experiment.hpp"

#include "gapctl/extrapolation.hpp"
#include "gapctl/numfmt.hpp"
#include "gapctl/telemetry.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <thread>
#include <tuple>

namespace gapctl {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kPi = 3.14159265358979323846;

const char* law_name(ExtrapolationLaw law) {
  return law == ExtrapolationLaw::SpeedJHold ? "hold" : "ai";
}

const char* mode_name(ScalingMode mode) { return mode == ScalingMode::Static ? "static" : "varying"; }

std::string fmt(double v) { return format_double(v); }

template <class F>
void parallel_for(std::size_t n, unsigned threads, F&& body) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, n));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < threads; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          body(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
          next = n;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

class Logger {
 public:
  explicit Logger(std::ostream* out) : out_(out) {}
  template <class... Args>
  void line(const Args&... args) {
    if (!out_) return;
    std::lock_guard lock(mutex_);
    ((*out_) << ... << args) << '\n';
    out_->flush();
  }

 private:
  std::ostream* out_;
  std::mutex mutex_;
};

std::ofstream open_output(const fs::path& path) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

bool unscaled_cell(const ScaleCell& c) {
  return std::abs(c.duration - c.base_duration) <= 1e-9 * c.base_duration;
}

/// Bin edge on the decimal grid, free of accumulated float noise.
double bin_edge(std::size_t b, double width) { return std::round(b * width * 1e12) / 1e12; }

Check make_check(std::string name, bool pass, double value, double bound, std::string detail = {}) {
  return Check{std::move(name), pass, value, bound, std::move(detail)};
}

}  // namespace

// -- config -------------------------------------------------------------------

fs::path ExperimentConfig::model_path() const {
  return model.empty() ? output / "model.bin" : model;
}

void ExperimentConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("config: " + m); };
  if (train_trajectories == 0 || validation_trajectories == 0) fail("trajectory counts must be positive");
  if (waypoints < 2) fail("need at least two waypoints");
  if (layers < 1 || parameter_budget == 0) fail("model needs layers and a parameter budget");
  if (gaps.empty() || limits.empty()) fail("gap and limit grids must be non-empty");
  for (double g : gaps)
    if (!(g > 0.0)) fail("gaps must be positive");
  for (double l : limits)
    if (!(l > limit_offset)) fail("limits must exceed the limit offset");
  if (!(critical_fraction > 0.0 && critical_fraction <= 1.0)) fail("critical fraction must be in (0, 1]");
  if (scale_trajectories == 0) fail("scale_trajectories must be positive");
  if (!(simulate_gap > 0.0)) fail("simulate_gap must be positive");
  if (policy != "method_a" && policy != "method_ab") fail("policy must be method_a or method_ab");
  if (histogram_step < 0.0) fail("histogram_step must not be negative");
  for (int d : depth_sweep)
    if (d < 1) fail("depth sweep entries must be positive");
}

json ExperimentConfig::to_json() const {
  const auto& t = training;
  return json{
      {"seed", seed},
      {"arm", arm.empty() ? "builtin:ur5e" : arm.string()},
      {"output", output.string()},
      {"model", model_path().string()},
      {"train_trajectories", train_trajectories},
      {"validation_trajectories", validation_trajectories},
      {"waypoints", waypoints},
      {"training",
       {{"segments", t.segments},
        {"validation_segments", t.validation_segments},
        {"batch", t.batch},
        {"max_epochs", t.max_epochs},
        {"learning_rate", t.learning_rate},
        {"plateau_patience", t.plateau_patience},
        {"plateau_factor", t.plateau_factor},
        {"min_learning_rate", t.min_learning_rate},
        {"early_stop_patience", t.early_stop_patience},
        {"seed", t.seed},
        {"slowdown_fraction", t.slowdown_fraction},
        {"slowdown_min", t.slowdown_min}}},
      {"layers", layers},
      {"parameter_budget", parameter_budget},
      {"size_sweep", size_sweep},
      {"depth_sweep", depth_sweep},
      {"data_sweep", data_sweep},
      {"scale_trajectories", scale_trajectories},
      {"gaps", gaps},
      {"limits", limits},
      {"mode", mode_name(mode)},
      {"ai_law", ai_law},
      {"critical_fraction", critical_fraction},
      {"limit_offset", limit_offset},
      {"verify_trajectories", verify_trajectories},
      {"verify_ai", verify_ai},
      {"verify_grid",
       {{"start_step", verify_grid.start_step},
        {"delta_steps", verify_grid.delta_steps},
        {"substeps", verify_grid.substeps}}},
      {"fraction_trajectories", fraction_trajectories},
      {"fraction_limit", fraction_limit},
      {"histogram_gap", histogram_gap},
      {"histogram_limit", histogram_limit},
      {"histogram_step", histogram_step},
      {"simulate_trajectory", simulate_trajectory},
      {"simulate_gap_starts", simulate_gap_starts},
      {"simulate_gap", simulate_gap},
      {"gain", gain},
      {"policy", policy},
  };
}

// -- checks -------------------------------------------------------------------

bool all_pass(const std::vector<Check>& checks) {
  return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.pass; });
}

void print_checks(std::ostream& out, const std::vector<Check>& checks) {
  for (const auto& c : checks) {
    out << (c.pass ? "PASS " : "FAIL ") << c.name << "  value=" << fmt(c.value)
        << " bound=" << fmt(c.bound);
    if (!c.detail.empty()) out << "  (" << c.detail << ")";
    out << '\n';
  }
}

json checks_to_json(const std::vector<Check>& checks) {
  json arr = json::array();
  for (const auto& c : checks)
    arr.push_back({{"name", c.name}, {"pass", c.pass}, {"value", c.value}, {"bound", c.bound},
                   {"detail", c.detail}});
  return arr;
}

std::vector<Check> checks_from_json(const json& j) {
  std::vector<Check> out;
  for (const auto& c : j)
    out.push_back(Check{c.at("name").get<std::string>(), c.at("pass").get<bool>(),
                        c.at("value").get<double>(), c.at("bound").get<double>(),
                        c.value("detail", std::string{})});
  return out;
}

// -- trajectories -------------------------------------------------------------

ArmModel load_arm(const ExperimentConfig& config) {
  return config.arm.empty() ? ArmModel::ur5e() : ArmModel::load(config.arm);
}

TrajectorySplit split_archive(const ExperimentConfig& config, std::vector<ArchiveEntry> entries) {
  if (entries.size() != config.train_trajectories + config.validation_trajectories)
    throw std::runtime_error("archive holds " + std::to_string(entries.size()) +
                             " trajectories, config asks for " +
                             std::to_string(config.train_trajectories + config.validation_trajectories));
  std::sort(entries.begin(), entries.end(),
            [](const ArchiveEntry& a, const ArchiveEntry& b) { return a.index < b.index; });
  TrajectorySplit s;
  const auto cut = entries.begin() + static_cast<std::ptrdiff_t>(config.train_trajectories);
  s.training.assign(std::make_move_iterator(entries.begin()), std::make_move_iterator(cut));
  s.validation.assign(std::make_move_iterator(cut), std::make_move_iterator(entries.end()));
  return s;
}

GenerationOptions generation_options(const ExperimentConfig& config) {
  GenerationOptions g;
  g.master_seed = config.seed;
  g.count = config.train_trajectories + config.validation_trajectories;
  g.waypoints = config.waypoints;
  return g;
}

TrajectorySplit generate_split(const ExperimentConfig& config, const ArmModel& arm) {
  return split_archive(config, generate_trajectories(arm, generation_options(config)));
}

TrajectorySplit load_or_generate(const ExperimentConfig& config, const ArmModel& arm,
                                 std::ostream* log) {
  const fs::path dir = config.archive_dir();
  if (fs::exists(dir / "manifest.json")) {
    std::ifstream in(dir / "manifest.json");
    const json m = json::parse(in);
    const bool same = m.value("master_seed", std::uint64_t{0}) == config.seed &&
                      m.value("count", std::size_t{0}) ==
                          config.train_trajectories + config.validation_trajectories &&
                      m.value("waypoints", 0) == config.waypoints;
    if (same) {
      if (log) *log << "reading archive " << dir.string() << '\n';
      return split_archive(config, read_archive(dir));
    }
    if (log) *log << "archive in " << dir.string() << " was made with other settings, regenerating\n";
  } else if (log) {
    *log << "no archive in " << dir.string() << ", generating\n";
  }
  return generate_split(config, arm);
}

std::vector<const TimedPath*> path_pointers(const std::vector<ArchiveEntry>& entries,
                                            std::size_t limit) {
  std::vector<const TimedPath*> out;
  for (std::size_t i = 0; i < entries.size() && i < limit; ++i) out.push_back(&entries[i].trajectory);
  return out;
}

std::vector<Check> check_archive(const ExperimentConfig& config, const ArmModel& arm,
                                 const TrajectorySplit& split) {
  std::vector<Check> out;
  const std::size_t want = config.train_trajectories + config.validation_trajectories;
  const std::size_t have = split.training.size() + split.validation.size();
  out.push_back(make_check("archive.count", have == want, static_cast<double>(have),
                           static_cast<double>(want)));

  const PlanOptions plan{};
  const JointVector speed_cap = plan.speed_fraction * arm.speed_limit;
  std::size_t violations = 0;
  for (const auto* part : {&split.training, &split.validation}) {
    for (const auto& e : *part) {
      const Trajectory& tr = e.trajectory;
      const bool ok = (tr.max_abs_speed().array() <= speed_cap.array() * (1.0 + 1e-9)).all() &&
                      (tr.max_abs_acceleration().array() <= arm.accel_limit.array() * (1.0 + 1e-9)).all() &&
                      is_realizable(tr, arm);
      if (!ok) ++violations;
    }
  }
  out.push_back(make_check("archive.limits", violations == 0, static_cast<double>(violations), 0.0,
                           "trajectories breaking speed, acceleration, joint or singularity limits"));
  return out;
}

// -- training -----------------------------------------------------------------

TrainReport run_training(const ExperimentConfig& config, const ArmModel& arm,
                         const TrajectorySplit& split, std::ostream* log) {
  Logger logger(log);
  const auto validation = path_pointers(split.validation);
  std::map<std::tuple<int, int, std::size_t>, TrainRun> done;
  TrainReport report;

  auto run = [&](int layers, std::size_t budget, std::size_t trajectories, bool keep) {
    const int width = width_for_budget(layers, budget);
    trajectories = std::min(trajectories, split.training.size());
    const auto key = std::make_tuple(layers, width, trajectories);
    if (!keep) {
      if (auto it = done.find(key); it != done.end()) return it->second;
    }
    TrainingConfig tc = config.training;
    tc.hidden.assign(static_cast<std::size_t>(layers), width);
    logger.line("training ", layers, "x", width, " on ", trajectories, " trajectories");
    TrainingResult res = train(tc, path_pointers(split.training, trajectories), validation, arm);
    TrainRun r;
    r.layers = layers;
    r.width = width;
    r.parameters = mlp_parameter_count(kHistoryFeatures, layers, width, kPredictionOutputs);
    r.trajectories = trajectories;
    r.validation_l1 = res.best_validation_l1;
    r.baseline_l1 = res.baseline_l1;
    r.best_epoch = res.best_epoch;
    r.epochs = static_cast<int>(res.curve.size());
    logger.line("  validation L1 ", r.validation_l1, " deg/s, baseline ", r.baseline_l1,
                " deg/s, best epoch ", r.best_epoch);
    done[key] = r;
    if (keep) report.main = std::move(res);
    return r;
  };

  const std::size_t all = split.training.size();
  report.main_run = run(config.layers, config.parameter_budget, all, true);
  for (std::size_t b : config.size_sweep) report.size_runs.push_back(run(config.layers, b, all, false));
  for (int d : config.depth_sweep) report.depth_runs.push_back(run(d, config.parameter_budget, all, false));
  for (std::size_t n : config.data_sweep)
    report.data_runs.push_back(run(config.layers, config.parameter_budget, n, false));

  const auto& m = report.main_run;
  double min_ratio = m.baseline_l1 / m.validation_l1;
  for (const auto& r : report.size_runs)
    if (r.parameters >= 4000) min_ratio = std::min(min_ratio, r.baseline_l1 / r.validation_l1);
  report.checks.push_back(make_check("train.baseline_ratio", min_ratio >= 5.0, min_ratio, 5.0,
                                     "baseline / model loss, models with at least 4k parameters"));

  if (report.depth_runs.size() >= 2) {
    double lo = 1e300, hi = 0.0;
    for (const auto& r : report.depth_runs) {
      lo = std::min(lo, r.validation_l1);
      hi = std::max(hi, r.validation_l1);
    }
    const double spread = (hi - lo) / lo;
    report.checks.push_back(make_check("train.depth_spread", spread < 0.25, spread, 0.25,
                                       "(max - min) / min loss across depths"));
  }
  double worst = 0.0;
  bool any = false;
  for (const auto& r : report.data_runs) {
    if (r.trajectories < 40) continue;
    worst = std::max(worst, r.validation_l1 / m.validation_l1);
    any = true;
  }
  if (any)
    report.checks.push_back(make_check("train.data_efficiency", worst <= 2.0, worst, 2.0,
                                       "loss with fewer trajectories / loss with all"));
  return report;
}

std::vector<fs::path> write_training_outputs(const ExperimentConfig& config, const TrainReport& report) {
  std::vector<fs::path> files;
  fs::create_directories(config.output);
  fs::create_directories(config.model_path().parent_path().empty() ? fs::path(".")
                                                                   : config.model_path().parent_path());
  report.main.model.save(config.model_path());
  files.push_back(config.model_path());

  {
    const fs::path p = config.output / "training_curve.csv";
    auto out = open_output(p);
    write_training_csv(out, report.main);
    files.push_back(p);
  }
  auto write_runs = [&](const std::string& name, std::vector<TrainRun> runs, auto order) {
    std::sort(runs.begin(), runs.end(), order);
    const fs::path p = config.output / name;
    auto out = open_output(p);
    out << "layers,width,parameters,trajectories,validation_l1,baseline_l1,ratio,best_epoch,epochs\n";
    for (const auto& r : runs)
      out << r.layers << ',' << r.width << ',' << r.parameters << ',' << r.trajectories << ','
          << fmt(r.validation_l1) << ',' << fmt(r.baseline_l1) << ','
          << fmt(r.baseline_l1 / r.validation_l1) << ',' << r.best_epoch << ',' << r.epochs << '\n';
    files.push_back(p);
  };
  auto with_main = [&](std::vector<TrainRun> v) {
    const auto& m = report.main_run;
    const bool present = std::any_of(v.begin(), v.end(), [&](const TrainRun& r) {
      return r.layers == m.layers && r.width == m.width && r.trajectories == m.trajectories;
    });
    if (!present) v.push_back(m);
    return v;
  };
  write_runs("size_sweep.csv", with_main(report.size_runs),
             [](const TrainRun& a, const TrainRun& b) { return a.parameters < b.parameters; });
  write_runs("depth_sweep.csv", report.depth_runs,
             [](const TrainRun& a, const TrainRun& b) { return a.layers < b.layers; });
  write_runs("data_sweep.csv", with_main(report.data_runs),
             [](const TrainRun& a, const TrainRun& b) { return a.trajectories < b.trajectories; });
  return files;
}

// -- scaling ------------------------------------------------------------------

double FractionRow::share(CommandKind k) const {
  std::size_t total = 0;
  for (auto c : counts) total += c;
  return total ? static_cast<double>(counts[static_cast<int>(k)]) / static_cast<double>(total) : 0.0;
}

double ScaleReport::mean_duration(ExtrapolationLaw law, double limit, double gap) const {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& c : cells) {
    if (c.law != law || c.limit != limit || c.gap != gap || !c.feasible) continue;
    sum += c.duration;
    ++n;
  }
  return n ? sum / static_cast<double>(n) : std::nan("");
}

char ScaleReport::region(std::size_t trajectory, double limit, double gap) const {
  bool hold_unscaled = false, ai_unscaled = false, feasible = false;
  for (const auto& c : cells) {
    if (c.trajectory != trajectory || c.limit != limit || c.gap != gap || !c.feasible) continue;
    feasible = true;
    const bool unscaled = unscaled_cell(c);
    if (c.law == ExtrapolationLaw::SpeedJHold) hold_unscaled = hold_unscaled || unscaled;
    else ai_unscaled = ai_unscaled || unscaled;
  }
  if (hold_unscaled) return 'A';
  if (ai_unscaled) return 'B';
  return feasible ? 'C' : '-';
}

namespace {

ScalingProblem make_problem(const ExperimentConfig& config, const ArmModel& arm, const Trajectory& base,
                            double gap, double limit, ExtrapolationLaw law, const MlpModel* model) {
  ScalingProblem p = ScalingProblem::centered(base, arm, gap, limit, config.critical_fraction);
  p.limit_offset = config.limit_offset;
  p.mode = config.mode;
  p.law = law;
  p.model = model;
  return p;
}

void write_sidecar(const ExperimentConfig& config, std::size_t trajectory, const ScaleCell& cell,
                   const ScalingProblem& problem, const ScalingSolution& sol,
                   const ConstraintReport& report) {
  const fs::path dir = config.output / "scaled";
  fs::create_directories(dir);
  std::ostringstream stem;
  stem << "traj" << std::setw(4) << std::setfill('0') << trajectory << '_' << law_name(cell.law) << "_L"
       << fmt(cell.limit * 1e3) << "mm_D" << fmt(cell.gap * 1e3) << "ms";
  save_trajectory(dir / (stem.str() + ".traj"), problem.base);
  auto out = open_output(dir / (stem.str() + ".json"));
  write_scaling_sidecar(out, problem, sol, report);
}

/// Largest multiple of `step` up to `cap` for which the unscaled deviation stays within `limit`.
double supported_gap(const ScaledTrajectory& unscaled, const ScalingProblem& problem, double limit,
                     double step, double cap) {
  double best = 0.0;
  const int n = static_cast<int>(std::floor(cap / step + 1e-9));
  for (int k = 1; k <= n; ++k) {
    const double gap = k * step;
    DeviationLaw law = problem.deviation_law();
    law.selection.max_gap = gap;
    const auto d = gap_deviation(unscaled, gap, problem.segment_start, problem.segment_end, law,
                                 problem.grid, limit);
    if (d.aborted || d.value > limit) break;
    best = gap;
  }
  return best;
}

}  // namespace

ScaleReport run_scaling(const ExperimentConfig& config, const ArmModel& arm,
                        const std::vector<ArchiveEntry>& trajectories, const MlpModel* model,
                        std::ostream* log) {
  config.validate();
  const bool ai = config.ai_law && model != nullptr;
  if (config.ai_law && !model) throw std::invalid_argument("run_scaling: adaptive law needs a model");
  const std::size_t n = std::min(config.scale_trajectories, trajectories.size());
  std::vector<double> gaps = config.gaps, limits = config.limits;
  std::sort(gaps.begin(), gaps.end());
  std::sort(limits.begin(), limits.end());
  const bool fraction_in_grid =
      std::find(limits.begin(), limits.end(), config.fraction_limit) != limits.end();

  struct PerTrajectory {
    std::vector<ScaleCell> cells;
    std::vector<std::array<std::size_t, kCommandKinds>> fractions;
    std::optional<UnscaledLimits> unscaled;
  };
  std::vector<PerTrajectory> results(n);
  Logger logger(log);

  parallel_for(n, config.threads, [&](std::size_t i) {
    const Trajectory& base = trajectories[i].trajectory;
    PerTrajectory& out = results[i];
    out.fractions.assign(gaps.size(), {});
    const std::uint64_t seed = derive_seed(config.seed, 0x5ca1e000ULL + i);
    const bool want_fraction = ai && i < config.fraction_trajectories;

    auto simulate_fraction = [&](std::size_t gi, const ScaledTrajectory& scaled) {
      CommandPolicy pol;
      pol.kind = PolicyKind::MethodAB;
      pol.model = model;
      pol.selection.max_gap = gaps[gi];
      const SimResult r = run_simulation(scaled, GapSchedule{}, pol, arm, SimOptions{config.gain, 0.0});
      for (int k = 0; k < kCommandKinds; ++k) out.fractions[gi][k] += r.kind_counts[k];
    };

    for (double limit : limits) {
      for (std::size_t gi = 0; gi < gaps.size(); ++gi) {
        const double gap = gaps[gi];
        std::optional<ScalingSolution> hold_solution;
        for (ExtrapolationLaw law : {ExtrapolationLaw::SpeedJHold, ExtrapolationLaw::Adaptive}) {
          if (law == ExtrapolationLaw::Adaptive && !ai) continue;
          const ScalingProblem problem = make_problem(config, arm, base, gap, limit, law, model);
          ScaleCell cell;
          cell.trajectory = i;
          cell.limit = limit;
          cell.gap = gap;
          cell.law = law;
          cell.base_duration = base.duration();
          std::optional<ScalingSolution> sol;
          try {
            const PathRate* incumbent =
                (law == ExtrapolationLaw::Adaptive && hold_solution) ? &hold_solution->rate : nullptr;
            sol = solve(problem, seed, incumbent);
          } catch (const InfeasibleScaling&) {
          }
          if (sol) {
            cell.feasible = true;
            cell.duration = sol->duration();
            cell.critical_rate = sol->critical_rate;
            cell.used_incumbent = sol->used_incumbent;
            const bool verify = i < config.verify_trajectories &&
                                (law == ExtrapolationLaw::SpeedJHold || config.verify_ai);
            if (verify || config.sidecars || (want_fraction && law == ExtrapolationLaw::Adaptive &&
                                              limit == config.fraction_limit)) {
              const ScaledTrajectory scaled(base, sol->scaling);
              if (verify) cell.verification = verify_constraints(scaled, problem, config.verify_grid);
              if (config.sidecars) {
                const ConstraintReport rep = cell.verification
                                                 ? *cell.verification
                                                 : verify_constraints(scaled, problem, VerifyGrid{0.01, 10, 1});
                write_sidecar(config, i, cell, problem, *sol, rep);
              }
              if (want_fraction && law == ExtrapolationLaw::Adaptive && limit == config.fraction_limit)
                simulate_fraction(gi, scaled);
            }
          }
          if (law == ExtrapolationLaw::SpeedJHold) hold_solution = sol;
          out.cells.push_back(cell);
        }
      }
    }

    if (want_fraction && !fraction_in_grid) {
      for (std::size_t gi = 0; gi < gaps.size(); ++gi) {
        const ScalingProblem hold =
            make_problem(config, arm, base, gaps[gi], config.fraction_limit, ExtrapolationLaw::SpeedJHold, model);
        const ScalingProblem problem = make_problem(config, arm, base, gaps[gi], config.fraction_limit,
                                                    ExtrapolationLaw::Adaptive, model);
        try {
          const ScalingSolution h = solve(hold, seed);
          const ScalingSolution s = solve(problem, seed, &h.rate);
          simulate_fraction(gi, ScaledTrajectory(base, s.scaling));
        } catch (const InfeasibleScaling&) {
        }
      }
    }

    if (config.histogram_step > 0.0) {
      UnscaledLimits u;
      u.trajectory = i;
      const ScaledTrajectory unscaled(base, TimeScaling::constant(1.0, base.duration()));
      const double cap = std::max(config.histogram_gap, gaps.back());
      for (ExtrapolationLaw law : {ExtrapolationLaw::SpeedJHold, ExtrapolationLaw::Adaptive}) {
        if (law == ExtrapolationLaw::Adaptive && !ai) continue;
        const ScalingProblem p =
            make_problem(config, arm, base, config.histogram_gap, config.histogram_limit, law, model);
        const double d =
            gap_deviation(unscaled, p.max_gap, p.segment_start, p.segment_end, p.deviation_law(), p.grid).value;
        const double g = supported_gap(unscaled, p, config.histogram_limit, config.histogram_step, cap);
        if (law == ExtrapolationLaw::SpeedJHold) {
          u.hold_deviation = d;
          u.hold_gap = g;
        } else {
          u.ai_deviation = d;
          u.ai_gap = g;
        }
      }
      out.unscaled = u;
    }

    double worst_ratio = 0.0;
    for (const auto& c : out.cells)
      if (c.feasible) worst_ratio = std::max(worst_ratio, c.duration / c.base_duration);
    logger.line("trajectory ", i, ": ", out.cells.size(), " cells, longest scaled / base ",
                fmt(worst_ratio));
  });

  ScaleReport report;
  for (std::size_t gi = 0; gi < gaps.size(); ++gi) report.fractions.push_back(FractionRow{gaps[gi], {}});
  for (auto& r : results) {
    report.cells.insert(report.cells.end(), r.cells.begin(), r.cells.end());
    for (std::size_t gi = 0; gi < gaps.size(); ++gi)
      for (int k = 0; k < kCommandKinds; ++k) report.fractions[gi].counts[k] += r.fractions[gi][k];
    if (r.unscaled) report.unscaled.push_back(*r.unscaled);
  }

  // trends of the mean durations
  std::vector<ExtrapolationLaw> laws{ExtrapolationLaw::SpeedJHold};
  if (ai) laws.push_back(ExtrapolationLaw::Adaptive);
  std::size_t gap_violations = 0, limit_violations = 0;
  for (auto law : laws) {
    for (double l : limits)
      for (std::size_t gi = 1; gi < gaps.size(); ++gi)
        if (report.mean_duration(law, l, gaps[gi]) < report.mean_duration(law, l, gaps[gi - 1]) * (1 - 1e-12))
          ++gap_violations;
    for (double g : gaps)
      for (std::size_t li = 1; li < limits.size(); ++li)
        if (report.mean_duration(law, limits[li], g) > report.mean_duration(law, limits[li - 1], g) * (1 + 1e-12))
          ++limit_violations;
  }
  report.checks.push_back(make_check("scale.duration_nondecreasing_in_gap", gap_violations == 0,
                                     static_cast<double>(gap_violations), 0.0));
  report.checks.push_back(make_check("scale.duration_nonincreasing_in_limit", limit_violations == 0,
                                     static_cast<double>(limit_violations), 0.0));

  std::size_t infeasible = 0;
  for (const auto& c : report.cells) infeasible += c.feasible ? 0 : 1;

  if (ai) {
    std::size_t mean_violations = 0, cell_violations = 0;
    double best_ratio = 1e300;
    for (double l : limits)
      for (double g : gaps) {
        const double h = report.mean_duration(ExtrapolationLaw::SpeedJHold, l, g);
        const double a = report.mean_duration(ExtrapolationLaw::Adaptive, l, g);
        if (!(a <= h)) ++mean_violations;
        best_ratio = std::min(best_ratio, a / h);
      }
    for (std::size_t k = 0; k + 1 < report.cells.size(); ++k) {
      const auto& h = report.cells[k];
      const auto& a = report.cells[k + 1];
      if (h.law != ExtrapolationLaw::SpeedJHold || a.law != ExtrapolationLaw::Adaptive) continue;
      if (h.feasible && (!a.feasible || a.duration > h.duration)) ++cell_violations;
    }
    report.checks.push_back(make_check("scale.ai_mean_at_or_below_hold", mean_violations == 0,
                                       static_cast<double>(mean_violations), 0.0));
    report.checks.push_back(make_check("scale.ai_per_trajectory_at_or_below_hold", cell_violations == 0,
                                       static_cast<double>(cell_violations), 0.0));
    report.checks.push_back(make_check("scale.best_ai_to_hold_ratio", best_ratio <= 0.8, best_ratio, 0.8,
                                       "smallest mean AI / mean hold duration over the grid"));

    std::size_t nesting = 0;
    for (std::size_t i = 0; i < n; ++i)
      for (double l : limits)
        for (double g : gaps) {
          bool hold_unscaled = false, ai_unscaled = false, ai_feasible = false;
          for (const auto& c : report.cells) {
            if (c.trajectory != i || c.limit != l || c.gap != g || !c.feasible) continue;
            const bool unscaled = unscaled_cell(c);
            if (c.law == ExtrapolationLaw::SpeedJHold) hold_unscaled = unscaled;
            else {
              ai_unscaled = unscaled;
              ai_feasible = true;
            }
          }
          if ((hold_unscaled && !ai_unscaled) || (ai_unscaled && !ai_feasible)) ++nesting;
        }
    report.checks.push_back(make_check("scale.regions_nested", nesting == 0, static_cast<double>(nesting), 0.0));

    if (config.fraction_trajectories > 0) {
      double share = 0.0;
      for (const auto& f : report.fractions) share += f.share(CommandKind::SpeedJAi);
      share /= static_cast<double>(report.fractions.size());
      report.checks.push_back(make_check("scale.ai_command_share", share >= 0.85, share, 0.85,
                                         "mean over the gap grid at L = " + fmt(config.fraction_limit * 1e3) + " mm"));
    }
  }

  std::size_t verified = 0, failed = 0;
  for (const auto& c : report.cells) {
    if (!c.verification) continue;
    ++verified;
    if (!c.verification->all_pass()) ++failed;
  }
  if (verified > 0)
    report.checks.push_back(make_check("scale.fine_grid_verification", failed == 0, static_cast<double>(failed),
                                       0.0, std::to_string(verified) + " solutions re-checked"));
  report.checks.push_back(make_check("scale.infeasible_cells", true, static_cast<double>(infeasible), 0.0,
                                     "informational"));
  return report;
}

std::vector<fs::path> write_scaling_outputs(const ExperimentConfig& config, const ScaleReport& report) {
  std::vector<fs::path> files;
  std::set<double> limit_set, gap_set;
  std::set<std::size_t> traj_set;
  bool ai = false;
  for (const auto& c : report.cells) {
    limit_set.insert(c.limit);
    gap_set.insert(c.gap);
    traj_set.insert(c.trajectory);
    ai = ai || c.law == ExtrapolationLaw::Adaptive;
  }

  {
    const fs::path p = config.output / "durations.csv";
    auto out = open_output(p);
    out << "trajectory,law,mode,limit_m,gap_s,feasible,base_duration,duration,critical_rate,used_incumbent,"
           "verify_pass,deviation,acceleration,speed\n";
    for (const auto& c : report.cells) {
      out << c.trajectory << ',' << law_name(c.law) << ',' << mode_name(config.mode) << ',' << fmt(c.limit)
          << ',' << fmt(c.gap) << ',' << (c.feasible ? 1 : 0) << ',' << fmt(c.base_duration) << ','
          << fmt(c.duration) << ',' << fmt(c.critical_rate) << ',' << (c.used_incumbent ? 1 : 0) << ',';
      if (c.verification) {
        const auto& v = *c.verification;
        out << (v.all_pass() ? 1 : 0) << ',' << fmt(v.deviation.value) << ',' << fmt(v.acceleration.value)
            << ',' << fmt(v.speed.value);
      } else {
        out << ",,,";
      }
      out << '\n';
    }
    files.push_back(p);
  }
  {
    const fs::path p = config.output / "mean_durations.csv";
    auto out = open_output(p);
    out << "law,mode,limit_m,gap_s,mean_duration,mean_base_duration,feasible,trajectories\n";
    for (auto law : {ExtrapolationLaw::SpeedJHold, ExtrapolationLaw::Adaptive}) {
      if (law == ExtrapolationLaw::Adaptive && !ai) continue;
      for (double l : limit_set)
        for (double g : gap_set) {
          double base = 0.0;
          std::size_t total = 0, feasible = 0;
          for (const auto& c : report.cells) {
            if (c.law != law || c.limit != l || c.gap != g) continue;
            ++total;
            if (c.feasible) {
              ++feasible;
              base += c.base_duration;
            }
          }
          out << law_name(law) << ',' << mode_name(config.mode) << ',' << fmt(l) << ',' << fmt(g) << ','
              << fmt(report.mean_duration(law, l, g)) << ','
              << fmt(feasible ? base / static_cast<double>(feasible) : std::nan("")) << ',' << feasible << ','
              << total << '\n';
        }
    }
    files.push_back(p);
  }
  {
    const fs::path p = config.output / "regions.csv";
    auto out = open_output(p);
    out << "trajectory,limit_m,gap_s,region\n";
    for (std::size_t t : traj_set)
      for (double l : limit_set)
        for (double g : gap_set) out << t << ',' << fmt(l) << ',' << fmt(g) << ',' << report.region(t, l, g) << '\n';
    files.push_back(p);
  }
  if (ai && !report.fractions.empty()) {
    const fs::path p = config.output / "fractions.csv";
    auto out = open_output(p);
    out << "gap_s,speedj,speedl,speedj_ai,commands\n";
    double sj = 0, sl = 0, sa = 0;
    for (const auto& f : report.fractions) {
      std::size_t total = 0;
      for (auto c : f.counts) total += c;
      out << fmt(f.gap) << ',' << fmt(f.share(CommandKind::SpeedJ)) << ',' << fmt(f.share(CommandKind::SpeedL))
          << ',' << fmt(f.share(CommandKind::SpeedJAi)) << ',' << total << '\n';
      sj += f.share(CommandKind::SpeedJ);
      sl += f.share(CommandKind::SpeedL);
      sa += f.share(CommandKind::SpeedJAi);
    }
    const double k = static_cast<double>(report.fractions.size());
    out << "avg," << fmt(sj / k) << ',' << fmt(sl / k) << ',' << fmt(sa / k) << ",\n";
    files.push_back(p);
  }
  if (!report.unscaled.empty()) {
    {
      const fs::path p = config.output / "unscaled_limits.csv";
      auto out = open_output(p);
      out << "trajectory,hold_deviation_m,ai_deviation_m,hold_gap_s,ai_gap_s\n";
      for (const auto& u : report.unscaled)
        out << u.trajectory << ',' << fmt(u.hold_deviation) << ',' << (ai ? fmt(u.ai_deviation) : "") << ','
            << fmt(u.hold_gap) << ',' << (ai ? fmt(u.ai_gap) : "") << '\n';
      files.push_back(p);
    }
    const fs::path p = config.output / "unscaled_histograms.csv";
    auto out = open_output(p);
    out << "quantity,law,bin_start,bin_end,count\n";
    auto emit = [&](const char* quantity, const char* law, const std::vector<double>& values, double width) {
      const double top = *std::max_element(values.begin(), values.end());
      const std::size_t bins = static_cast<std::size_t>(std::floor(top / width + 1e-9)) + 1;
      const Histogram h = make_histogram(values, HistogramSpec{0.0, width, bins});
      for (std::size_t b = 0; b < bins; ++b)
        out << quantity << ',' << law << ',' << fmt(bin_edge(b, width)) << ',' << fmt(bin_edge(b + 1, width)) << ','
            << h.counts[b] << '\n';
    };
    std::vector<double> hd, ad, hg, ag;
    for (const auto& u : report.unscaled) {
      hd.push_back(u.hold_deviation);
      ad.push_back(u.ai_deviation);
      hg.push_back(u.hold_gap);
      ag.push_back(u.ai_gap);
    }
    emit("deviation_m", "hold", hd, 1e-4);
    if (ai) emit("deviation_m", "ai", ad, 1e-4);
    emit("gap_s", "hold", hg, config.histogram_step);
    if (ai) emit("gap_s", "ai", ag, config.histogram_step);
    files.push_back(p);
  }
  return files;
}

// -- simulation ---------------------------------------------------------------

SimulateReport run_simulate(const ExperimentConfig& config, const ArmModel& arm, const Trajectory& plan,
                            const MlpModel* model) {
  config.validate();
  SimulateReport rep;
  rep.duration = plan.duration();
  std::vector<double> starts = config.simulate_gap_starts;
  if (starts.empty()) starts = {plan.duration() / 3.0, 2.0 * plan.duration() / 3.0};
  std::vector<Gap> gaps;
  for (double s : starts) gaps.push_back(Gap{s, config.simulate_gap});
  const GapSchedule schedule(gaps, config.simulate_gap);

  const SimOptions options{config.gain, 0.0};
  CommandPolicy pol;
  pol.selection.max_gap = config.simulate_gap;
  pol.kind = PolicyKind::AlwaysSpeedJ;
  rep.speedj = run_simulation(plan, schedule, pol, arm, options);
  pol.kind = PolicyKind::AlwaysSpeedL;
  rep.speedl = run_simulation(plan, schedule, pol, arm, options);
  const bool use_model = config.policy == "method_ab";
  if (use_model && !model) throw std::invalid_argument("run_simulate: method_ab needs a model");
  pol.kind = use_model ? PolicyKind::MethodAB : PolicyKind::MethodA;
  pol.model = use_model ? model : nullptr;
  rep.adaptive = run_simulation(plan, schedule, pol, arm, options);
  rep.no_gap_deviation = run_simulation(plan, GapSchedule{}, pol, arm, options).max_deviation;

  auto gap_max = [](const SimResult& r, const Gap& g) {
    double m = 0.0;
    for (std::size_t k = 0; k < r.time.size(); ++k)
      if (g.contains(r.time[k])) m = std::max(m, r.deviation[k]);
    return m;
  };
  double worst = 0.0;
  for (const auto& g : gaps) {
    GapSummary s{g, gap_max(rep.speedj, g), gap_max(rep.speedl, g), gap_max(rep.adaptive, g)};
    const double floor = std::min(s.speedj, s.speedl);
    worst = std::max(worst, floor > 0.0 ? s.adaptive / floor : (s.adaptive > 0.0 ? 1e300 : 0.0));
    rep.gaps.push_back(s);
  }
  rep.checks.push_back(make_check("simulate.no_gap_deviation", rep.no_gap_deviation < 1e-6,
                                  rep.no_gap_deviation, 1e-6, "m"));
  rep.checks.push_back(make_check("simulate.adaptive_within_gap_bound", worst <= 1.1, worst, 1.1,
                                  "adaptive / min(speedj, speedl) deviation, worst gap"));
  bool flagged = true;
  for (const auto& g : gaps) {
    bool seen = false;
    for (std::size_t k = 0; k < rep.adaptive.time.size(); ++k) seen = seen || (rep.adaptive.gap[k] && g.contains(rep.adaptive.time[k]));
    flagged = flagged && seen;
  }
  rep.checks.push_back(make_check("simulate.gap_annotations", flagged, static_cast<double>(gaps.size()),
                                  static_cast<double>(gaps.size())));
  return rep;
}

std::vector<fs::path> write_simulation_outputs(const ExperimentConfig& config, const SimulateReport& report) {
  std::vector<fs::path> files;
  {
    const fs::path p = config.output / "simulation.csv";
    auto out = open_output(p);
    out << "t,gap_flag,d_speedj,d_speedl,d_adaptive,kind_adaptive\n";
    const auto& a = report.adaptive;
    const std::size_t n = std::min({a.time.size(), report.speedj.time.size(), report.speedl.time.size()});
    for (std::size_t k = 0; k < n; ++k)
      out << fmt(a.time[k]) << ',' << (a.gap[k] ? 1 : 0) << ',' << fmt(report.speedj.deviation[k]) << ','
          << fmt(report.speedl.deviation[k]) << ',' << fmt(a.deviation[k]) << ',' << to_string(a.kinds[k]) << '\n';
    files.push_back(p);
  }
  {
    const fs::path p = config.output / "simulation_gaps.csv";
    auto out = open_output(p);
    out << "gap_start,gap_duration,d_speedj,d_speedl,d_adaptive\n";
    for (const auto& g : report.gaps)
      out << fmt(g.gap.start) << ',' << fmt(g.gap.duration) << ',' << fmt(g.speedj) << ',' << fmt(g.speedl)
          << ',' << fmt(g.adaptive) << '\n';
    files.push_back(p);
  }
  return files;
}

// -- bookkeeping --------------------------------------------------------------

namespace {

json read_manifest(const fs::path& path) {
  if (!fs::exists(path)) return json{{"format", "gapctl-run-manifest"}, {"version", 1}, {"runs", json::object()}};
  std::ifstream in(path);
  try {
    return json::parse(in);
  } catch (const json::exception&) {
    throw FormatError("run manifest is not JSON: " + path.string(), 1);
  }
}

}  // namespace

void record_run(const ExperimentConfig& config, const std::string& command, const std::vector<fs::path>& files,
                const std::vector<std::string>& modules, const std::vector<Check>& checks) {
  const fs::path path = config.output / "manifest.json";
  fs::create_directories(config.output);
  json m = read_manifest(path);
  json list = json::array();
  for (const auto& f : files) list.push_back(f.lexically_relative(config.output).generic_string());
  m["runs"][command] = {{"seed", config.seed},
                        {"modules", modules},
                        {"files", list},
                        {"config", config.to_json()},
                        {"checks", checks_to_json(checks)}};
  auto out = open_output(path);
  out << m.dump(2) << '\n';
}

std::vector<Check> recorded_checks(const ExperimentConfig& config, const std::string& command) {
  const json m = read_manifest(config.output / "manifest.json");
  if (!m.contains("runs") || !m["runs"].contains(command)) return {};
  return checks_from_json(m["runs"][command].at("checks"));
}

std::vector<Check> self_checks(const ArmModel& arm, std::uint64_t seed, std::size_t samples) {
  std::vector<Check> out;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> angle(-kPi, kPi);

  double jac_err = 0.0, ik_err = 0.0;
  std::size_t ik_fail = 0;
  for (std::size_t s = 0; s < samples; ++s) {
    JointVector q;
    for (int j = 0; j < kJoints; ++j) q[j] = angle(rng);
    const Matrix6d jac = jacobian(arm, q);
    const double h = 1e-6;
    for (int j = 0; j < kJoints; ++j) {
      JointVector qp = q, qm = q;
      qp[j] += h;
      qm[j] -= h;
      const Twist fd = pose_error(forward_kinematics(arm, qm), forward_kinematics(arm, qp)) / (2.0 * h);
      jac_err = std::max(jac_err, (fd - jac.col(j)).norm() / jac.col(j).norm());
    }
    const auto back = inverse_kinematics_closest(arm, forward_kinematics(arm, q), q);
    if (!back) ++ik_fail;
    else ik_err = std::max(ik_err, (*back - q).cwiseAbs().maxCoeff());
  }
  out.push_back(make_check("kinematics.jacobian_fd", jac_err < 1e-5, jac_err, 1e-5, "relative, per column"));
  out.push_back(make_check("kinematics.ik_round_trip", ik_fail == 0 && ik_err < 1e-8, ik_err, 1e-8,
                           std::to_string(ik_fail) + " failures"));

  std::size_t wrong = 0;
  for (std::uint32_t s = 0; s < kSequenceModulus; ++s)
    if (decode(encode(1.0, s)).sequence != s) ++wrong;
  std::uniform_real_distribution<double> mag(-30.0, 30.0);
  std::uniform_int_distribution<std::uint32_t> seq(0, kSequenceModulus - 1);
  std::bernoulli_distribution sign(0.5);
  double rel = 0.0;
  for (std::size_t k = 0; k < 100000; ++k) {
    const double v = (sign(rng) ? 1.0 : -1.0) * std::exp(mag(rng));
    const std::uint32_t sq = seq(rng);
    const DecodedSpeed d = decode(encode(v, sq));
    if (d.sequence != sq) ++wrong;
    rel = std::max(rel, std::abs(d.value - v) / std::max(std::abs(v), 1e-12));
  }
  out.push_back(make_check("telemetry.sequence_round_trip", wrong == 0, static_cast<double>(wrong), 0.0));
  out.push_back(make_check("telemetry.value_perturbation", rel <= std::ldexp(1.0, -40), rel, std::ldexp(1.0, -40)));
  return out;
}

}  // namespace gapctl
