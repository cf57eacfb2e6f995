#include "gapctl/extrapolation.hpp"
#include "gapctl/training.hpp"
#include "gapctl/trajectory.hpp"

#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

using namespace gapctl;

namespace {

constexpr double kDeg = 180.0 / 3.14159265358979323846;

// q = q0 + v t + a t^2 / 2
class QuadraticPath final : public TimedPath {
 public:
  QuadraticPath(JointVector v, JointVector a, double T) : v_(v), a_(a), T_(T) {}
  double duration() const override { return T_; }
  JointSample sample(double t) const override {
    t = std::clamp(t, 0.0, T_);
    return {v_ * t + 0.5 * a_ * t * t, v_ + a_ * t};
  }
  JointVector acceleration(double) const override { return a_; }

 private:
  JointVector v_, a_;
  double T_;
};

std::vector<ArchiveEntry> small_set(std::uint64_t seed, std::size_t n) {
  GenerationOptions g;
  g.master_seed = seed;
  g.count = n;
  return generate_trajectories(ArmModel::ur5e(), g);
}

std::vector<const TimedPath*> pointers(const std::vector<ArchiveEntry>& e) {
  std::vector<const TimedPath*> out;
  for (const auto& x : e) out.push_back(&x.trajectory);
  return out;
}

}  // namespace

TEST_CASE("segments stay inside their path with room for the labels") {
  const auto set = small_set(3, 4);
  const auto ptrs = pointers(set);
  const auto segs = sample_segments(ptrs, 2000, 9);
  REQUIRE(segs.size() == 2000);
  std::vector<int> hits(ptrs.size(), 0);
  for (const auto& s : segs) {
    REQUIRE(s.path < ptrs.size());
    CHECK(s.t >= 0.0);
    CHECK(s.t <= ptrs[s.path]->duration() - 0.2);
    ++hits[s.path];
  }
  for (int h : hits) CHECK(h > 300);
  const auto again = sample_segments(ptrs, 2000, 9);
  CHECK(again[1234].t == segs[1234].t);
  CHECK_THROWS_AS(sample_segments({}, 1, 1), std::invalid_argument);
}

TEST_CASE("dataset rows are the normalized history and future speeds") {
  const auto set = small_set(4, 2);
  const auto ptrs = pointers(set);
  const Normalization norm = Normalization::for_arm(ArmModel::ur5e());
  const std::vector<SegmentRef> segs{{0, 0.5}, {1, 3.0}};
  const Dataset d = build_dataset(ptrs, segs, norm);
  REQUIRE(d.count == 2);
  REQUIRE(d.inputs.size() == 2 * 156);
  REQUIRE(d.targets.size() == 2 * 66);
  const HistoryMatrix h = build_history(PathHistory(set[1].trajectory), 3.0);
  for (int k = 0; k < 156; ++k) CHECK(d.inputs[156 + k] * norm.input_scale[k] == doctest::Approx(h.data()[k]));
  for (int r = 0; r < kPredictionRows; ++r) {
    const JointVector v = set[1].trajectory.sample(3.0 + kPredictionOffsets[r]).speed;
    for (int j = 0; j < kJoints; ++j)
      CHECK(d.targets[66 + r * 6 + j] * norm.output_scale[r * 6 + j] == doctest::Approx(v[j]));
  }
}

TEST_CASE("hold baseline is the mean speed change over the label window") {
  const JointVector v = JointVector::Constant(0.3);
  const JointVector a = (JointVector() << 1.0, -2.0, 0.5, 0.0, 3.0, -0.5).finished();
  const QuadraticPath still(v, JointVector::Zero(), 5.0);
  const QuadraticPath accel(v, a, 5.0);
  const std::vector<SegmentRef> segs{{0, 1.0}, {0, 2.5}};
  CHECK(baseline_loss({&still}, segs) == 0.0);
  // mean_j |a_j| * mean_i beta_i
  const double expected = a.cwiseAbs().mean() * 0.1 * kDeg;
  CHECK(baseline_loss({&accel}, segs) == doctest::Approx(expected).epsilon(1e-12));
  CHECK_THROWS_AS(baseline_loss({&accel}, {}), std::invalid_argument);
}

TEST_CASE("an all-zero model scores the mean absolute label") {
  const auto set = small_set(5, 2);
  const auto ptrs = pointers(set);
  const ArmModel arm = ArmModel::ur5e();
  const MlpModel zero = MlpModel::for_history(arm, {4});
  const auto segs = sample_segments(ptrs, 50, 2);
  const Dataset d = build_dataset(ptrs, segs, zero.normalization());
  double sum = 0.0;
  for (const auto& s : segs)
    for (double beta : kPredictionOffsets) sum += ptrs[s.path]->sample(s.t + beta).speed.cwiseAbs().sum();
  CHECK(l1_loss(zero, d) == doctest::Approx(sum * kDeg / (50.0 * 66)).epsilon(1e-10));
}

TEST_CASE("training lowers the validation loss and keeps the best parameters") {
  const auto train_set = small_set(10, 8);
  const auto val_set = small_set(11, 3);
  const ArmModel arm = ArmModel::ur5e();
  TrainingConfig cfg;
  cfg.hidden = {24, 24};
  cfg.segments = 1024;
  cfg.validation_segments = 256;
  cfg.batch = 64;
  cfg.max_epochs = 12;
  cfg.seed = 4;
  const auto r = train(cfg, pointers(train_set), pointers(val_set), arm);
  REQUIRE(!r.curve.empty());
  CHECK(r.best_validation_l1 < r.curve.front().validation_l1);
  CHECK(r.best_validation_l1 < r.baseline_l1 * 2.0);
  CHECK(r.curve[static_cast<std::size_t>(r.best_epoch - 1)].validation_l1 == r.best_validation_l1);

  // the returned parameters reproduce the best validation loss
  std::mt19937_64 rng(cfg.seed);
  rng();
  const std::uint64_t val_seed = rng();
  const auto vsegs = sample_segments(pointers(val_set), cfg.validation_segments, val_seed);
  const Dataset vd = build_dataset(pointers(val_set), vsegs, r.model.normalization());
  CHECK(l1_loss(r.model, vd) == doctest::Approx(r.best_validation_l1).epsilon(1e-12));
  CHECK(baseline_loss(pointers(val_set), vsegs) == r.baseline_l1);

  std::ostringstream csv;
  write_training_csv(csv, r);
  const std::string text = csv.str();
  CHECK(text.rfind("epoch,train_l1,validation_l1,learning_rate\n", 0) == 0);
  CHECK(static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')) == r.curve.size() + 1);
}

TEST_CASE("training is deterministic and rejects empty splits") {
  const auto train_set = small_set(12, 3);
  const auto val_set = small_set(13, 1);
  const ArmModel arm = ArmModel::ur5e();
  TrainingConfig cfg;
  cfg.hidden = {8};
  cfg.segments = 128;
  cfg.validation_segments = 32;
  cfg.batch = 32;
  cfg.max_epochs = 3;
  cfg.slowdown_fraction = 0.25;
  const auto a = train(cfg, pointers(train_set), pointers(val_set), arm);
  const auto b = train(cfg, pointers(train_set), pointers(val_set), arm);
  CHECK(a.model.parameters() == b.model.parameters());
  CHECK_THROWS_AS(train(cfg, {}, pointers(val_set), arm), std::invalid_argument);
  CHECK_THROWS_AS(train(cfg, pointers(train_set), {}, arm), std::invalid_argument);
  cfg.batch = 0;
  CHECK_THROWS_AS(train(cfg, pointers(train_set), pointers(val_set), arm), std::invalid_argument);
}
