#pragma once

#include "gapctl/kinematics.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

namespace gapctl {

/// History offsets before t [s] and prediction offsets after t [s].
inline constexpr std::array<double, 13> kHistoryOffsets = {0.0, 0.05, 0.1, 0.17, 0.25, 0.37, 0.5,
                                                           0.75, 1.0, 1.5, 2.0, 3.0, 4.0};
inline constexpr std::array<double, 11> kPredictionOffsets = {0.0,  0.02, 0.04, 0.06, 0.08, 0.1,
                                                              0.12, 0.14, 0.16, 0.18, 0.2};
inline constexpr int kHistoryRows = static_cast<int>(kHistoryOffsets.size());
inline constexpr int kPredictionRows = static_cast<int>(kPredictionOffsets.size());
inline constexpr int kHistoryFeatures = kHistoryRows * 2 * kJoints;   // 156
inline constexpr int kPredictionOutputs = kPredictionRows * kJoints;  // 66

/// Row i: position (6) then speed (6) at t - kHistoryOffsets[i].
using HistoryMatrix = Eigen::Matrix<double, kHistoryRows, 2 * kJoints, Eigen::RowMajor>;
/// Row i: joint speeds at t + kPredictionOffsets[i].
using PredictionMatrix = Eigen::Matrix<double, kPredictionRows, kJoints, Eigen::RowMajor>;

/// raw = normalized * scale, per feature. Symmetric, so zero maps to zero.
struct Normalization {
  std::vector<double> input_scale;
  std::vector<double> output_scale;

  /// Positions by 2*pi, speeds by the joint speed limit.
  static Normalization for_arm(const ArmModel& model);
};

/// Stored activations of one batched forward pass.
struct MlpWorkspace {
  int batch = 0;
  /// activations[l] is the output of layer l (tanh for hidden, identity for the last).
  std::vector<std::vector<double>> activations;
  std::vector<double> delta;
  std::vector<double> delta_prev;
};

/// Fully connected tanh network with a linear output layer.
class MlpModel {
 public:
  struct Layer {
    int in = 0;
    int out = 0;
    std::size_t weights = 0;  ///< offset of the row-major out x in block
    std::size_t bias = 0;     ///< offset of the bias vector
  };

  MlpModel() = default;
  /// sizes = {inputs, hidden..., outputs}; parameters start at zero.
  MlpModel(std::vector<int> sizes, Normalization norm);

  /// Default shape for the history/prediction task.
  static MlpModel for_history(const ArmModel& arm, const std::vector<int>& hidden);

  const std::vector<int>& sizes() const { return sizes_; }
  int input_size() const { return sizes_.empty() ? 0 : sizes_.front(); }
  int output_size() const { return sizes_.empty() ? 0 : sizes_.back(); }
  const std::vector<Layer>& layers() const { return layers_; }
  std::size_t parameter_count() const { return params_.size(); }
  std::vector<double>& parameters() { return params_; }
  const std::vector<double>& parameters() const { return params_; }
  const Normalization& normalization() const { return norm_; }

  /// Glorot-uniform weights, zero biases.
  void initialize(std::uint64_t seed);

  /// Normalized batch forward; result in ws.activations.back().
  void forward(const double* x, int batch, MlpWorkspace& ws) const;
  /// Backpropagates d(loss)/d(output) for the batch last passed to forward();
  /// adds parameter gradients into `grad` (same layout as parameters()).
  void backward(const double* x, const double* dout, MlpWorkspace& ws, double* grad) const;

  /// Raw features in, raw outputs out. Throws std::invalid_argument on a size mismatch.
  std::vector<double> predict(std::span<const double> raw_input) const;
  /// Throws std::invalid_argument if the model is not 156 -> ... -> 66.
  PredictionMatrix predict(const HistoryMatrix& history) const;

  void write(std::ostream& out) const;
  /// Throws FormatError on a malformed checkpoint.
  static MlpModel read(std::istream& in);
  void save(const std::filesystem::path& path) const;
  static MlpModel load(const std::filesystem::path& path);

 private:
  std::vector<int> sizes_;
  std::vector<Layer> layers_;
  std::vector<double> params_;
  Normalization norm_;
};

/// Parameter count of a {in, w x hidden, out} network.
std::size_t mlp_parameter_count(int in, int hidden_layers, int width, int out);
/// Width whose parameter count is closest to `budget`.
int width_for_budget(int hidden_layers, std::size_t budget, int in = kHistoryFeatures,
                     int out = kPredictionOutputs);

}  // namespace gapctl
