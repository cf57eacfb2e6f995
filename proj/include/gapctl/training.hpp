#pragma once

#include "gapctl/mlp.hpp"

#include <cstdint>
#include <iosfwd>
#include <vector>

namespace gapctl {

/// A training example: history ending at t on path `path`, labels over the next 200 ms.
struct SegmentRef {
  std::size_t path = 0;
  double t = 0.0;
};

/// Normalized inputs (156 per row) and labels (66 per row).
struct Dataset {
  std::size_t count = 0;
  std::vector<double> inputs;
  std::vector<double> targets;
};

struct TrainingConfig {
  std::vector<int> hidden{112, 112, 112};
  std::size_t segments = 8192;
  std::size_t validation_segments = 2048;
  int batch = 256;
  int max_epochs = 200;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  /// Learning rate is multiplied by plateau_factor after this many epochs without improvement.
  int plateau_patience = 8;
  double plateau_factor = 0.5;
  double min_learning_rate = 1e-5;
  /// Stop after this many epochs without validation improvement.
  int early_stop_patience = 30;
  std::uint64_t seed = 1;
  /// Share of training segments taken from uniformly slowed copies of the
  /// training paths, with rates drawn from [slowdown_min, 1].
  double slowdown_fraction = 0.0;
  double slowdown_min = 0.2;
};

struct EpochRecord {
  int epoch = 0;
  double train_l1 = 0.0;       ///< deg/s
  double validation_l1 = 0.0;  ///< deg/s
  double learning_rate = 0.0;
};

struct TrainingResult {
  MlpModel model;
  std::vector<EpochRecord> curve;
  double best_validation_l1 = 0.0;
  int best_epoch = 0;
  /// Constant-speed hold on the same validation segments, deg/s.
  double baseline_l1 = 0.0;
};

/// Path drawn uniformly, t uniform over [0, T - 0.2]; history before 0 is padded.
std::vector<SegmentRef> sample_segments(const std::vector<const TimedPath*>& paths,
                                        std::size_t count, std::uint64_t seed);

Dataset build_dataset(const std::vector<const TimedPath*>& paths,
                      const std::vector<SegmentRef>& segments, const Normalization& norm);

/// Mean absolute label error in deg/s.
double l1_loss(const MlpModel& model, const Dataset& data);

/// Mean |qd(t + beta) - qd(t)| over the label window, deg/s.
double baseline_loss(const std::vector<const TimedPath*>& paths,
                     const std::vector<SegmentRef>& segments);

/// Adam on the L1 loss; keeps the parameters with the best validation loss.
/// Throws std::invalid_argument when either split is empty.
TrainingResult train(const TrainingConfig& config, const std::vector<const TimedPath*>& training,
                     const std::vector<const TimedPath*>& validation, const ArmModel& arm,
                     std::ostream* log = nullptr);

/// Columns: epoch, train_l1, validation_l1, learning_rate.
void write_training_csv(std::ostream& out, const TrainingResult& result);

}  // namespace gapctl
