#include "gapctl/training.hpp"

#include "gapctl/extrapolation.hpp"
#include "gapctl/kernels/dense.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <stdexcept>

namespace gapctl {

namespace {

constexpr double kDegPerRad = 57.295779513082320877;
constexpr double kLabelWindow = kPredictionOffsets.back();

// q(t) = q_b(c t), qd(t) = c qd_b(c t)
class SlowedPath final : public TimedPath {
 public:
  SlowedPath(const TimedPath& base, double rate) : base_(base), rate_(rate) {}
  double duration() const override { return base_.duration() / rate_; }
  JointSample sample(double t) const override {
    JointSample s = base_.sample(rate_ * t);
    s.speed *= rate_;
    return s;
  }
  JointVector acceleration(double t) const override {
    return rate_ * rate_ * base_.acceleration(rate_ * t);
  }

 private:
  const TimedPath& base_;
  double rate_;
};

void fill_row(const TimedPath& path, double t, const Normalization& norm, double* x, double* y) {
  const PathHistory source(path);
  const HistoryMatrix h = build_history(source, t);
  for (int i = 0; i < kHistoryFeatures; ++i) x[i] = h.data()[i] / norm.input_scale[i];
  for (int r = 0; r < kPredictionRows; ++r) {
    const JointVector v = path.sample(t + kPredictionOffsets[r]).speed;
    for (int j = 0; j < kJoints; ++j) {
      const int k = r * kJoints + j;
      y[k] = v[j] / norm.output_scale[k];
    }
  }
}

}  // namespace

std::vector<SegmentRef> sample_segments(const std::vector<const TimedPath*>& paths,
                                        std::size_t count, std::uint64_t seed) {
  if (paths.empty()) throw std::invalid_argument("sample_segments: no paths");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, paths.size() - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<SegmentRef> out(count);
  for (auto& s : out) {
    s.path = pick(rng);
    s.t = unit(rng) * std::max(0.0, paths[s.path]->duration() - kLabelWindow);
  }
  return out;
}

Dataset build_dataset(const std::vector<const TimedPath*>& paths,
                      const std::vector<SegmentRef>& segments, const Normalization& norm) {
  Dataset d;
  d.count = segments.size();
  d.inputs.resize(d.count * kHistoryFeatures);
  d.targets.resize(d.count * kPredictionOutputs);
  for (std::size_t i = 0; i < d.count; ++i)
    fill_row(*paths.at(segments[i].path), segments[i].t, norm, &d.inputs[i * kHistoryFeatures],
             &d.targets[i * kPredictionOutputs]);
  return d;
}

double l1_loss(const MlpModel& model, const Dataset& data) {
  if (data.count == 0) return 0.0;
  const auto& scale = model.normalization().output_scale;
  const int out = model.output_size();
  constexpr int kChunk = 512;
  MlpWorkspace ws;
  double sum = 0.0;
  for (std::size_t start = 0; start < data.count; start += kChunk) {
    const int n = static_cast<int>(std::min<std::size_t>(kChunk, data.count - start));
    model.forward(&data.inputs[start * model.input_size()], n, ws);
    const auto& y = ws.activations.back();
    for (int i = 0; i < n; ++i)
      for (int k = 0; k < out; ++k)
        sum += std::abs(y[i * out + k] - data.targets[(start + i) * out + k]) * scale[k];
  }
  return sum * kDegPerRad / (static_cast<double>(data.count) * out);
}

double baseline_loss(const std::vector<const TimedPath*>& paths,
                     const std::vector<SegmentRef>& segments) {
  if (segments.empty()) throw std::invalid_argument("baseline_loss: no segments");
  double sum = 0.0;
  for (const auto& s : segments) {
    const TimedPath& p = *paths.at(s.path);
    const JointVector hold = p.sample(s.t).speed;
    for (double beta : kPredictionOffsets) sum += (p.sample(s.t + beta).speed - hold).cwiseAbs().sum();
  }
  return sum * kDegPerRad / (static_cast<double>(segments.size()) * kPredictionOutputs);
}

TrainingResult train(const TrainingConfig& config, const std::vector<const TimedPath*>& training,
                     const std::vector<const TimedPath*>& validation, const ArmModel& arm,
                     std::ostream* log) {
  if (training.empty() || validation.empty())
    throw std::invalid_argument("train: training and validation sets must be non-empty");
  if (config.segments == 0 || config.validation_segments == 0 || config.batch <= 0)
    throw std::invalid_argument("train: segment counts and batch size must be positive");

  std::mt19937_64 rng(config.seed);
  const std::uint64_t data_seed = rng();
  const std::uint64_t val_seed = rng();
  const std::uint64_t init_seed = rng();
  const std::uint64_t slow_seed = rng();

  MlpModel model = MlpModel::for_history(arm, config.hidden);
  model.initialize(init_seed);
  const Normalization& norm = model.normalization();

  // Training pool: originals plus optional slowed copies.
  std::vector<SlowedPath> slowed;
  std::vector<const TimedPath*> pool = training;
  const auto n_slow = static_cast<std::size_t>(std::llround(config.slowdown_fraction * config.segments));
  if (n_slow > 0) {
    std::mt19937_64 srng(slow_seed);
    std::uniform_real_distribution<double> rate(config.slowdown_min, 1.0);
    slowed.reserve(training.size());
    for (const TimedPath* p : training) slowed.emplace_back(*p, rate(srng));
  }
  std::vector<SegmentRef> segs = sample_segments(training, config.segments - n_slow, data_seed);
  if (n_slow > 0) {
    std::vector<const TimedPath*> slow_ptrs;
    for (const auto& s : slowed) slow_ptrs.push_back(&s);
    for (SegmentRef s : sample_segments(slow_ptrs, n_slow, slow_seed ^ 0x5a5a5a5aULL)) {
      s.path += pool.size();
      segs.push_back(s);
    }
    pool.insert(pool.end(), slow_ptrs.begin(), slow_ptrs.end());
  }
  const Dataset train_set = build_dataset(pool, segs, norm);
  const auto val_segs = sample_segments(validation, config.validation_segments, val_seed);
  const Dataset val_set = build_dataset(validation, val_segs, norm);

  TrainingResult result;
  result.baseline_l1 = baseline_loss(validation, val_segs);

  const int in = model.input_size();
  const int out = model.output_size();
  const std::size_t np = model.parameter_count();
  std::vector<double> grad(np), m(np, 0.0), v(np, 0.0);
  std::vector<double> xb, yb, dout;
  std::vector<std::size_t> order(train_set.count);
  std::iota(order.begin(), order.end(), 0);
  MlpWorkspace ws;
  const auto& kern = kernels::active_kernels();

  double lr = config.learning_rate;
  long step = 0;
  double b1t = 1.0, b2t = 1.0;
  result.best_validation_l1 = std::numeric_limits<double>::infinity();
  std::vector<double> best = model.parameters();
  int since_best = 0, since_drop = 0;

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double train_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch) {
      const int n = static_cast<int>(std::min<std::size_t>(config.batch, order.size() - start));
      xb.resize(static_cast<std::size_t>(n) * in);
      yb.resize(static_cast<std::size_t>(n) * out);
      for (int i = 0; i < n; ++i) {
        const std::size_t r = order[start + i];
        std::copy_n(&train_set.inputs[r * in], in, &xb[static_cast<std::size_t>(i) * in]);
        std::copy_n(&train_set.targets[r * out], out, &yb[static_cast<std::size_t>(i) * out]);
      }
      model.forward(xb.data(), n, ws);
      const auto& y = ws.activations.back();
      dout.resize(y.size());
      const double w = kDegPerRad / (static_cast<double>(n) * out);
      for (std::size_t k = 0; k < y.size(); ++k) {
        const double diff = y[k] - yb[k];
        const double s = norm.output_scale[k % out];
        train_sum += std::abs(diff) * s;
        dout[k] = diff > 0.0 ? s * w : (diff < 0.0 ? -s * w : 0.0);
      }
      std::fill(grad.begin(), grad.end(), 0.0);
      model.backward(xb.data(), dout.data(), ws, grad.data());
      ++step;
      b1t *= config.beta1;
      b2t *= config.beta2;
      const kernels::AdamStep as{lr, config.beta1, config.beta2, config.epsilon, 1.0 - b1t, 1.0 - b2t};
      kern.adam_update(model.parameters().data(), grad.data(), m.data(), v.data(), np, as);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_l1 = train_sum * kDegPerRad / (static_cast<double>(train_set.count) * out);
    rec.validation_l1 = l1_loss(model, val_set);
    rec.learning_rate = lr;
    result.curve.push_back(rec);
    if (log)
      *log << "epoch " << epoch << " train " << rec.train_l1 << " val " << rec.validation_l1
           << " lr " << lr << '\n';

    if (rec.validation_l1 < result.best_validation_l1) {
      result.best_validation_l1 = rec.validation_l1;
      result.best_epoch = epoch;
      best = model.parameters();
      since_best = 0;
      since_drop = 0;
    } else {
      ++since_best;
      if (++since_drop >= config.plateau_patience && lr > config.min_learning_rate) {
        lr = std::max(config.min_learning_rate, lr * config.plateau_factor);
        since_drop = 0;
      }
      if (since_best >= config.early_stop_patience) break;
    }
  }
  model.parameters() = best;
  result.model = std::move(model);
  return result;
}

void write_training_csv(std::ostream& out, const TrainingResult& result) {
  out << "epoch,train_l1,validation_l1,learning_rate\n";
  for (const auto& r : result.curve)
    out << r.epoch << ',' << r.train_l1 << ',' << r.validation_l1 << ',' << r.learning_rate << '\n';
}

}  // namespace gapctl
