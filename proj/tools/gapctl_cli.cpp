#include "gapctl/experiment.hpp"
#include "gapctl/kernels/dense.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <map>

using namespace gapctl;

namespace {

struct Flags {
  bool verify = false;
  std::vector<std::string> require;
};

void add_experiment_options(CLI::App& app, ExperimentConfig& c) {
  app.add_option("--seed", c.seed, "Master seed")->capture_default_str();
  app.add_option("--arm", c.arm, "Arm description file (default: built-in UR5e)");
  app.add_option("--output", c.output, "Output directory")->capture_default_str();
  app.add_option("--model", c.model, "Model checkpoint (default: <output>/model.bin)");
  app.add_option("--threads", c.threads, "Worker threads, 0 = all cores")->capture_default_str();

  auto* g = app.add_option_group("generation");
  g->add_option("--train-trajectories", c.train_trajectories)->capture_default_str();
  g->add_option("--validation-trajectories", c.validation_trajectories)->capture_default_str();
  g->add_option("--waypoints", c.waypoints)->capture_default_str();

  auto* t = app.add_option_group("training");
  t->add_option("--segments", c.training.segments, "Training segments")->capture_default_str();
  t->add_option("--validation-segments", c.training.validation_segments)->capture_default_str();
  t->add_option("--batch", c.training.batch)->capture_default_str();
  t->add_option("--epochs", c.training.max_epochs)->capture_default_str();
  t->add_option("--learning-rate", c.training.learning_rate)->capture_default_str();
  t->add_option("--early-stop", c.training.early_stop_patience)->capture_default_str();
  t->add_option("--training-seed", c.training.seed)->capture_default_str();
  t->add_option("--slowdown-fraction", c.training.slowdown_fraction)->capture_default_str();
  t->add_option("--layers", c.layers, "Hidden layers of the main model")->capture_default_str();
  t->add_option("--parameters", c.parameter_budget, "Parameter budget")->capture_default_str();
  t->add_option("--size-sweep", c.size_sweep, "Extra parameter budgets")->capture_default_str();
  t->add_option("--depth-sweep", c.depth_sweep, "Hidden layer counts")->capture_default_str();
  t->add_option("--data-sweep", c.data_sweep, "Training trajectory counts")->capture_default_str();

  auto* s = app.add_option_group("scaling");
  s->add_option("--scale-trajectories", c.scale_trajectories)->capture_default_str();
  s->add_option("--gaps", c.gaps, "Gap grid [s]")->capture_default_str();
  s->add_option("--limits", c.limits, "Deviation limits [m]")->capture_default_str();
  const std::map<std::string, ScalingMode> modes{{"static", ScalingMode::Static},
                                                 {"varying", ScalingMode::Varying}};
  s->add_option("--mode", c.mode, "static | varying")
      ->transform(CLI::CheckedTransformer(modes, CLI::ignore_case))
      ->default_str("static");
  s->add_option("--ai-law", c.ai_law, "Also solve with the model-based law")->capture_default_str();
  s->add_option("--critical-fraction", c.critical_fraction)->capture_default_str();
  s->add_option("--limit-offset", c.limit_offset, "Subtracted from every limit [m]")->capture_default_str();
  s->add_option("--verify-trajectories", c.verify_trajectories, "Fine-grid re-check count")
      ->capture_default_str();
  s->add_option("--verify-ai", c.verify_ai)->capture_default_str();
  s->add_option("--verify-start-step", c.verify_grid.start_step)->capture_default_str();
  s->add_option("--verify-delta-steps", c.verify_grid.delta_steps)->capture_default_str();
  s->add_option("--fraction-trajectories", c.fraction_trajectories)->capture_default_str();
  s->add_option("--fraction-limit", c.fraction_limit)->capture_default_str();
  s->add_option("--histogram-gap", c.histogram_gap)->capture_default_str();
  s->add_option("--histogram-limit", c.histogram_limit)->capture_default_str();
  s->add_option("--histogram-step", c.histogram_step, "0 disables the unscaled histograms")
      ->capture_default_str();
  s->add_option("--sidecars", c.sidecars, "Write rate sidecars per solution")->capture_default_str();

  auto* m = app.add_option_group("simulation");
  m->add_option("--simulate-trajectory", c.simulate_trajectory, "Validation index")->capture_default_str();
  m->add_option("--gap-starts", c.simulate_gap_starts, "Gap start times [s]");
  m->add_option("--gap-duration", c.simulate_gap)->capture_default_str();
  m->add_option("--gain", c.gain)->capture_default_str();
  m->add_option("--policy", c.policy, "method_a | method_ab")
      ->check(CLI::IsMember({"method_a", "method_ab"}))
      ->capture_default_str();
}

int finish(const std::vector<Check>& checks, bool requested) {
  print_checks(std::cout, checks);
  if (!requested) return 0;
  return all_pass(checks) ? 0 : 1;
}

std::optional<MlpModel> maybe_model(const ExperimentConfig& c, bool needed) {
  if (!needed) return std::nullopt;
  if (!std::filesystem::exists(c.model_path()))
    throw std::runtime_error("no model at " + c.model_path().string() +
                             " (run `train` first, or disable the model-based law)");
  return MlpModel::load(c.model_path());
}

int cmd_generate(const ExperimentConfig& c, const Flags& f) {
  const ArmModel arm = load_arm(c);
  const auto split = generate_split(c, arm);
  std::vector<ArchiveEntry> all = split.training;
  all.insert(all.end(), split.validation.begin(), split.validation.end());
  write_archive(c.archive_dir(), all, generation_options(c), arm);
  std::cerr << "wrote " << all.size() << " trajectories to " << c.archive_dir().string() << '\n';
  const auto checks = check_archive(c, arm, split);
  record_run(c, "generate", {c.archive_dir() / "manifest.json"}, {"kinematics", "trajectory"}, checks);
  return finish(checks, f.verify);
}

int cmd_train(const ExperimentConfig& c, const Flags& f) {
  const ArmModel arm = load_arm(c);
  const auto split = load_or_generate(c, arm, &std::cerr);
  std::cerr << "dense kernels: " << kernels::active_kernels().name << '\n';
  const TrainReport report = run_training(c, arm, split, &std::cerr);
  const auto files = write_training_outputs(c, report);
  record_run(c, "train", files, {"trajectory", "method_b"}, report.checks);
  return finish(report.checks, f.verify);
}

int cmd_scale(const ExperimentConfig& c, const Flags& f) {
  const ArmModel arm = load_arm(c);
  const auto split = load_or_generate(c, arm, &std::cerr);
  const auto model = maybe_model(c, c.ai_law);
  const ScaleReport report = run_scaling(c, arm, split.validation, model ? &*model : nullptr, &std::cerr);
  const auto files = write_scaling_outputs(c, report);
  record_run(c, "scale", files, {"trajectory", "method_a", "method_b", "method_c", "control_sim"},
             report.checks);
  return finish(report.checks, f.verify);
}

int cmd_simulate(const ExperimentConfig& c, const Flags& f) {
  const ArmModel arm = load_arm(c);
  const auto split = load_or_generate(c, arm, &std::cerr);
  if (c.simulate_trajectory >= split.validation.size())
    throw std::invalid_argument("simulate-trajectory is past the validation split");
  const auto model = maybe_model(c, c.policy == "method_ab");
  const SimulateReport report =
      run_simulate(c, arm, split.validation[c.simulate_trajectory].trajectory, model ? &*model : nullptr);
  const auto files = write_simulation_outputs(c, report);
  record_run(c, "simulate", files, {"control_sim", "method_a", "method_b"}, report.checks);
  for (const auto& g : report.gaps)
    std::cerr << "gap at " << g.gap.start << " s: speedj " << g.speedj * 1e3 << " mm, speedl "
              << g.speedl * 1e3 << " mm, adaptive " << g.adaptive * 1e3 << " mm\n";
  return finish(report.checks, f.verify);
}

int cmd_verify(const ExperimentConfig& c, const Flags& f) {
  std::vector<Check> checks = self_checks(load_arm(c), c.seed);
  static const std::vector<std::string> kCommands{"generate", "train", "scale", "simulate"};
  for (const auto& name : kCommands) {
    const bool required = std::find(f.require.begin(), f.require.end(), name) != f.require.end();
    const auto recorded = recorded_checks(c, name);
    if (recorded.empty() && required)
      checks.push_back(Check{name + ".recorded", false, 0.0, 1.0, "no recorded run in the manifest"});
    checks.insert(checks.end(), recorded.begin(), recorded.end());
  }
  return finish(checks, true);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gap concealment experiments for a velocity-controlled arm"};
  app.set_config("--config", "", "Experiment config file (INI or TOML)");
  app.require_subcommand(1);

  ExperimentConfig config;
  Flags flags;
  add_experiment_options(app, config);

  auto add = [&](const char* name, const char* help) {
    auto* sub = app.add_subcommand(name, help);
    sub->fallthrough();
    sub->add_flag("--verify", flags.verify, "Exit non-zero when a check fails");
    return sub;
  };
  auto* gen = add("generate", "Generate the trajectory archive");
  auto* trn = add("train", "Train the extrapolation model and the sweeps");
  auto* scl = add("scale", "Time-scaling sweeps over the gap and limit grids");
  auto* sim = add("simulate", "Closed-loop runs with injected gaps");
  auto* ver = app.add_subcommand("verify", "Self checks plus the recorded checks of earlier runs");
  ver->fallthrough();
  ver->add_option("--require", flags.require, "Commands whose recorded checks must exist")
      ->check(CLI::IsMember({"generate", "train", "scale", "simulate"}));

  CLI11_PARSE(app, argc, argv);

  try {
    config.validate();
    if (*gen) return cmd_generate(config, flags);
    if (*trn) return cmd_train(config, flags);
    if (*scl) return cmd_scale(config, flags);
    if (*sim) return cmd_simulate(config, flags);
    if (*ver) return cmd_verify(config, flags);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 2;
}
