#include "gapctl/extrapolation.hpp"
#include "gapctl/trajectory.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace gapctl;

namespace {

Trajectory test_path() {
  std::vector<JointVector> pts;
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 5; ++i) {
    JointVector p;
    for (int j = 0; j < kJoints; ++j) p[j] = u(rng);
    pts.push_back(p);
  }
  return Trajectory::clamped_spline({0.0, 1.5, 3.0, 4.5, 6.0}, pts);
}

// Zero weights; the output bias alone sets the predicted speed.
MlpModel constant_model(const ArmModel& arm, const JointVector& speed) {
  MlpModel m = MlpModel::for_history(arm, {8});
  auto& p = m.parameters();
  const auto& last = m.layers().back();
  const auto& scale = m.normalization().output_scale;
  for (int r = 0; r < kPredictionRows; ++r)
    for (int j = 0; j < kJoints; ++j) p[last.bias + r * kJoints + j] = speed[j] / scale[r * kJoints + j];
  return m;
}

JointVector midpoint_integral(const SpeedProfile& p, double a, double b, int n) {
  JointVector s = JointVector::Zero();
  const double h = (b - a) / n;
  for (int k = 0; k < n; ++k) s += p.speed(a + (k + 0.5) * h);
  return s * h;
}

}  // namespace

TEST_CASE("history rows before the start hold the start position at rest") {
  const Trajectory tr = test_path();
  const PathHistory src(tr);
  const double t = 0.3;
  const HistoryMatrix h = build_history(src, t);
  for (int i = 0; i < kHistoryRows; ++i) {
    const double ti = t - kHistoryOffsets[i];
    const JointVector pos = h.block<1, kJoints>(i, 0).transpose();
    const JointVector spd = h.block<1, kJoints>(i, kJoints).transpose();
    if (ti < 0.0) {
      CHECK((pos - tr.sample(0.0).position).norm() == 0.0);
      CHECK(spd.norm() == 0.0);
    } else {
      CHECK((pos - tr.sample(ti).position).norm() == 0.0);
      CHECK((spd - tr.sample(ti).speed).norm() == 0.0);
    }
  }
  const HistoryMatrix late = build_history(src, 5.0);
  CHECK((late.block<1, kJoints>(12, 0).transpose() - tr.sample(1.0).position).norm() == 0.0);
}

TEST_CASE("log history interpolates between samples and clamps at the ends") {
  LogHistory log(0.01);
  for (int k = 0; k < 4; ++k) {
    JointSample s;
    s.position.setConstant(k);
    s.speed.setConstant(-2.0 * k);
    log.append(s);
  }
  CHECK(log.size() == 4);
  CHECK(log.at(0.015).position[0] == doctest::Approx(1.5));
  CHECK(log.at(0.015).speed[3] == doctest::Approx(-3.0));
  CHECK(log.at(-1.0).position[0] == 0.0);
  CHECK(log.at(9.0).position[0] == 3.0);
  CHECK(log.at(0.02).position[2] == 2.0);
  CHECK(log.start_position()[0] == 0.0);
  log.clear();
  CHECK(log.at(0.0).position.norm() == 0.0);
}

TEST_CASE("speed profile positions are the exact integral of the speeds") {
  JointVector q0 = JointVector::LinSpaced(0.1, 0.6);
  SpeedProfile p(1.0, q0);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int k = 0; k <= 10; ++k) p.push(0.02 * k, JointVector::NullaryExpr([&](Eigen::Index) { return u(rng); }));
  CHECK(p.horizon() == doctest::Approx(0.2));
  CHECK(p.start_time() == 1.0);
  for (double a : {0.0, 0.013, 0.05, 0.111, 0.2}) {
    const JointVector expected = q0 + midpoint_integral(p, 0.0, a, 20000);
    CHECK((p.position(a) - expected).norm() < 1e-9);
  }
  // constant continuation past the last knot
  CHECK((p.speed(0.5) - p.speeds().back()).norm() == 0.0);
  CHECK((p.position(0.3) - p.position(0.2) - 0.1 * p.speeds().back()).norm() < 1e-14);
  CHECK_THROWS_AS(p.push(0.2, JointVector::Zero()), std::invalid_argument);
}

TEST_CASE("forecast chains windows to cover the horizon") {
  const ArmModel arm = ArmModel::ur5e();
  const JointVector v = (JointVector() << 0.1, -0.2, 0.05, 0.3, 0.0, -0.1).finished();
  const MlpModel m = constant_model(arm, v);
  const Trajectory tr = test_path();
  const PathHistory src(tr);

  const SpeedProfile one = forecast(m, src, 2.0, 0.2);
  CHECK(one.windows == 1);
  CHECK(one.offsets().size() == static_cast<std::size_t>(kPredictionRows));

  const SpeedProfile three = forecast(m, src, 2.0, 0.5);
  CHECK(three.windows == 3);
  CHECK(three.horizon() == doctest::Approx(0.6));
  CHECK(three.offsets().size() == static_cast<std::size_t>(1 + 3 * (kPredictionRows - 1)));
  CHECK(three.max_seam_jump < 1e-12);
  const JointVector q0 = tr.sample(2.0).position;
  CHECK((three.position(0.45) - (q0 + 0.45 * v)).norm() < 1e-12);
  CHECK_THROWS_AS(forecast(m, src, 2.0, 0.0), std::invalid_argument);
}

TEST_CASE("later windows see the predicted motion as history") {
  const ArmModel arm = ArmModel::ur5e();
  MlpModel m = MlpModel::for_history(arm, {12});
  m.initialize(3);
  const Trajectory tr = test_path();
  const PathHistory src(tr);
  const SpeedProfile p = forecast(m, src, 2.5, 0.4);
  REQUIRE(p.windows == 2);

  // Rebuild the second window's input by hand.
  HistoryMatrix h;
  for (int i = 0; i < kHistoryRows; ++i) {
    const double ti = 2.7 - kHistoryOffsets[i];
    JointSample s;
    if (ti <= 2.5) {
      s = tr.sample(ti);
    } else {
      s.position = p.position(ti - 2.5);
      s.speed = p.speed(ti - 2.5);
    }
    h.block<1, kJoints>(i, 0) = s.position.transpose();
    h.block<1, kJoints>(i, kJoints) = s.speed.transpose();
  }
  const PredictionMatrix second = m.predict(h);
  for (int r = 1; r < kPredictionRows; ++r)
    CHECK((p.speeds()[kPredictionRows - 1 + r] - second.row(r).transpose()).norm() < 1e-12);
}

TEST_CASE("extrapolated commands carry the mean predicted speed of their tick") {
  const ArmModel arm = ArmModel::ur5e();
  MlpModel m = MlpModel::for_history(arm, {16, 16});
  m.initialize(5);
  const Trajectory tr = test_path();
  const PathHistory src(tr);
  const double horizon = 0.3;
  const auto cmds = extrapolate(m, src, 1.7, horizon);
  REQUIRE(cmds.size() == 150);
  const SpeedProfile p = forecast(m, src, 1.7, horizon);
  for (std::size_t k = 0; k < cmds.size(); k += 7) {
    CHECK(cmds[k].kind == CommandKind::SpeedJ);
    CHECK(cmds[k].sequence == k);
    CHECK(cmds[k].timestamp == doctest::Approx(1.7 + 0.002 * k));
    const double a = 0.002 * k;
    const JointVector mean = midpoint_integral(p, a, a + 0.002, 400) / 0.002;
    CHECK((cmds[k].args - mean).norm() < 1e-9);
  }
  CHECK(extrapolate(m, src, 0.0, 0.0041).size() == 2);
}
