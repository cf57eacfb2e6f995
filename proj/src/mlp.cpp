#include "gapctl/mlp.hpp"

#include "gapctl/kernels/dense.hpp"

#include <json.hpp>

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <stdexcept>
#include <string>

namespace gapctl {

namespace {

constexpr double kTwoPi = 6.28318530717958647692;
constexpr const char* kFormat = "gapctl-mlp";
constexpr int kVersion = 1;

}  // namespace

Normalization Normalization::for_arm(const ArmModel& model) {
  Normalization n;
  n.input_scale.reserve(kHistoryFeatures);
  for (int r = 0; r < kHistoryRows; ++r) {
    for (int j = 0; j < kJoints; ++j) n.input_scale.push_back(kTwoPi);
    for (int j = 0; j < kJoints; ++j) n.input_scale.push_back(model.speed_limit[j]);
  }
  n.output_scale.reserve(kPredictionOutputs);
  for (int r = 0; r < kPredictionRows; ++r)
    for (int j = 0; j < kJoints; ++j) n.output_scale.push_back(model.speed_limit[j]);
  return n;
}

MlpModel::MlpModel(std::vector<int> sizes, Normalization norm)
    : sizes_(std::move(sizes)), norm_(std::move(norm)) {
  if (sizes_.size() < 2) throw std::invalid_argument("MlpModel: need at least input and output sizes");
  for (int s : sizes_)
    if (s <= 0) throw std::invalid_argument("MlpModel: layer sizes must be positive");
  if (norm_.input_scale.size() != static_cast<std::size_t>(sizes_.front()) ||
      norm_.output_scale.size() != static_cast<std::size_t>(sizes_.back()))
    throw std::invalid_argument("MlpModel: normalization does not match layer sizes");
  std::size_t offset = 0;
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    Layer layer{sizes_[l], sizes_[l + 1], offset, 0};
    offset += static_cast<std::size_t>(layer.in) * layer.out;
    layer.bias = offset;
    offset += layer.out;
    layers_.push_back(layer);
  }
  params_.assign(offset, 0.0);
}

MlpModel MlpModel::for_history(const ArmModel& arm, const std::vector<int>& hidden) {
  std::vector<int> sizes{kHistoryFeatures};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(kPredictionOutputs);
  return MlpModel(std::move(sizes), Normalization::for_arm(arm));
}

void MlpModel::initialize(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (const auto& layer : layers_) {
    const double limit = std::sqrt(6.0 / (layer.in + layer.out));
    std::uniform_real_distribution<double> u(-limit, limit);
    const std::size_t n = static_cast<std::size_t>(layer.in) * layer.out;
    for (std::size_t i = 0; i < n; ++i) params_[layer.weights + i] = u(rng);
    std::fill_n(params_.begin() + static_cast<std::ptrdiff_t>(layer.bias), layer.out, 0.0);
  }
}

void MlpModel::forward(const double* x, int batch, MlpWorkspace& ws) const {
  const auto& k = kernels::active_kernels();
  ws.batch = batch;
  ws.activations.resize(layers_.size());
  const double* in = x;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Layer& layer = layers_[l];
    auto& y = ws.activations[l];
    y.resize(static_cast<std::size_t>(batch) * layer.out);
    k.forward(params_.data() + layer.weights, params_.data() + layer.bias, in, y.data(), batch,
              layer.in, layer.out);
    if (l + 1 < layers_.size())
      for (double& v : y) v = std::tanh(v);
    in = y.data();
  }
}

void MlpModel::backward(const double* x, const double* dout, MlpWorkspace& ws, double* grad) const {
  const auto& k = kernels::active_kernels();
  const int batch = ws.batch;
  const Layer& last = layers_.back();
  ws.delta.assign(dout, dout + static_cast<std::size_t>(batch) * last.out);
  for (std::size_t l = layers_.size(); l-- > 0;) {
    const Layer& layer = layers_[l];
    const double* input = l == 0 ? x : ws.activations[l - 1].data();
    k.accumulate_gradient(ws.delta.data(), input, grad + layer.weights, grad + layer.bias, batch,
                          layer.in, layer.out);
    if (l == 0) break;
    ws.delta_prev.resize(static_cast<std::size_t>(batch) * layer.in);
    k.backward_input(params_.data() + layer.weights, ws.delta.data(), ws.delta_prev.data(), batch,
                     layer.in, layer.out);
    const auto& a = ws.activations[l - 1];
    for (std::size_t i = 0; i < ws.delta_prev.size(); ++i) ws.delta_prev[i] *= 1.0 - a[i] * a[i];
    ws.delta.swap(ws.delta_prev);
  }
}

std::vector<double> MlpModel::predict(std::span<const double> raw_input) const {
  if (raw_input.size() != static_cast<std::size_t>(input_size()))
    throw std::invalid_argument("MlpModel::predict: expected " + std::to_string(input_size()) +
                                " inputs, got " + std::to_string(raw_input.size()));
  std::vector<double> x(raw_input.size());
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = raw_input[i] / norm_.input_scale[i];
  MlpWorkspace ws;
  forward(x.data(), 1, ws);
  std::vector<double> y = ws.activations.back();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= norm_.output_scale[i];
  return y;
}

PredictionMatrix MlpModel::predict(const HistoryMatrix& history) const {
  if (input_size() != kHistoryFeatures || output_size() != kPredictionOutputs)
    throw std::invalid_argument("MlpModel::predict: model shape is not 156 -> 66");
  const auto y = predict(std::span<const double>(history.data(), kHistoryFeatures));
  PredictionMatrix out;
  std::copy(y.begin(), y.end(), out.data());
  return out;
}

void MlpModel::write(std::ostream& out) const {
  nlohmann::json header = {{"format", kFormat},
                           {"version", kVersion},
                           {"sizes", sizes_},
                           {"activation", "tanh"},
                           {"input_scale", norm_.input_scale},
                           {"output_scale", norm_.output_scale},
                           {"parameters", params_.size()}};
  out << header.dump() << '\n';
  out.write(reinterpret_cast<const char*>(params_.data()),
            static_cast<std::streamsize>(params_.size() * sizeof(double)));
  if (!out) throw std::runtime_error("MlpModel: write failed");
}

MlpModel MlpModel::read(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("model checkpoint: missing header", 1);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
    if (header.at("format") != kFormat) throw FormatError("model checkpoint: wrong format tag", 1);
    if (header.at("version") != kVersion)
      throw FormatError("model checkpoint: unsupported version", 1);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model checkpoint: bad header: ") + e.what(), 1);
  }
  Normalization norm{header["input_scale"].get<std::vector<double>>(),
                     header["output_scale"].get<std::vector<double>>()};
  MlpModel m;
  try {
    m = MlpModel(header["sizes"].get<std::vector<int>>(), std::move(norm));
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("model checkpoint: ") + e.what(), 1);
  }
  if (header["parameters"].get<std::size_t>() != m.params_.size())
    throw FormatError("model checkpoint: parameter count does not match sizes", 1);
  in.read(reinterpret_cast<char*>(m.params_.data()),
          static_cast<std::streamsize>(m.params_.size() * sizeof(double)));
  if (in.gcount() != static_cast<std::streamsize>(m.params_.size() * sizeof(double)))
    throw FormatError("model checkpoint: truncated weight blob", 2);
  for (double v : m.params_)
    if (!std::isfinite(v)) throw FormatError("model checkpoint: non-finite weight", 2);
  return m;
}

void MlpModel::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write model " + path.string());
  write(out);
}

MlpModel MlpModel::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open model " + path.string());
  return read(in);
}

std::size_t mlp_parameter_count(int in, int hidden_layers, int width, int out) {
  const std::size_t w = static_cast<std::size_t>(width);
  return (static_cast<std::size_t>(in) + 1) * w +
         static_cast<std::size_t>(hidden_layers - 1) * (w + 1) * w + (w + 1) * out;
}

int width_for_budget(int hidden_layers, std::size_t budget, int in, int out) {
  if (hidden_layers < 1) throw std::invalid_argument("width_for_budget: need at least one hidden layer");
  int best = 1;
  double best_err = 1e300;
  for (int w = 1; w <= 4096; ++w) {
    const double err =
        std::abs(static_cast<double>(mlp_parameter_count(in, hidden_layers, w, out)) - budget);
    if (err < best_err) {
      best_err = err;
      best = w;
    }
  }
  return best;
}

}  // namespace gapctl
