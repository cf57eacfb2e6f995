#include "gapctl/time_scaling.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace gapctl;

namespace {

Trajectory base_path(double T) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<JointVector> pts;
  std::vector<double> knots;
  for (int i = 0; i < 6; ++i) {
    JointVector p;
    for (int j = 0; j < kJoints; ++j) p[j] = u(rng);
    pts.push_back(p);
    knots.push_back(T * i / 5.0);
  }
  return Trajectory::clamped_spline(knots, pts);
}

std::vector<double> wavy_rates(double base_duration, double step) {
  std::vector<double> r;
  double s = 0.0;
  for (int k = 0; s < base_duration + 1.0; ++k) {
    const double v = 0.55 + 0.4 * std::sin(0.7 * k * step);
    r.push_back(v);
    s += step * v;
  }
  return r;
}

}  // namespace

TEST_CASE("unit rate is the identity") {
  const Trajectory tr = base_path(6.0);
  const ScaledTrajectory s = apply_scaling(tr, TimeScaling::constant(1.0, tr.duration()));
  CHECK(s.duration() == tr.duration());
  for (double t = 0.0; t <= 6.0; t += 0.0137) {
    CHECK((s.sample(t).position - tr.sample(t).position).norm() < 1e-12);
    CHECK((s.sample(t).speed - tr.sample(t).speed).norm() < 1e-12);
    CHECK((s.acceleration(t) - tr.acceleration(t)).norm() < 1e-10);
  }
}

TEST_CASE("constant rate stretches time by its inverse") {
  const Trajectory tr = base_path(10.4);
  const TimeScaling sc = TimeScaling::constant(0.2, 10.4);
  CHECK(sc.duration() == doctest::Approx(52.0).epsilon(1e-14));
  const ScaledTrajectory s(tr, sc);
  for (double t : {0.0, 3.3, 17.0, 40.01, 52.0}) {
    CHECK((s.sample(t).position - tr.sample(0.2 * t).position).norm() < 1e-12);
    CHECK((s.sample(t).speed - 0.2 * tr.sample(0.2 * t).speed).norm() < 1e-12);
    CHECK((s.acceleration(t) - 0.04 * tr.acceleration(0.2 * t)).norm() < 1e-10);
  }
  CHECK((s.sample(60.0).position - tr.sample(10.4).position).norm() < 1e-12);
}

TEST_CASE("scaled speed and acceleration are derivatives of the scaled position") {
  const Trajectory tr = base_path(5.0);
  const TimeScaling sc(wavy_rates(5.0, 0.002), 5.0);
  const ScaledTrajectory s(tr, sc);
  const double h = 1e-6;
  for (double t = 0.0101; t < s.duration() - 0.01; t += 0.2371) {
    const JointVector fd_v = (s.sample(t + h).position - s.sample(t - h).position) / (2 * h);
    CHECK((fd_v - s.sample(t).speed).norm() < 1e-6);
    // acceleration is piecewise on the 2 ms grid; stay inside one interval
    const double k = std::floor(t / 0.002);
    const double tm = (k + 0.5) * 0.002;
    const JointVector fd_a = (s.sample(tm + h).speed - s.sample(tm - h).speed) / (2 * h);
    CHECK((fd_a - s.acceleration(tm)).norm() < 1e-6);
  }
}

TEST_CASE("position, rate and inverse are consistent") {
  const TimeScaling sc(wavy_rates(4.0, 0.002), 4.0);
  CHECK(sc.position(0.0) == 0.0);
  CHECK(sc.position(sc.duration()) == 4.0);
  CHECK(sc.position(sc.duration() + 1.0) == 4.0);
  const double h = 1e-7;
  for (double t = 0.001; t < sc.duration(); t += 0.0913) {
    CHECK(sc.inverse(sc.position(t)) == doctest::Approx(t).epsilon(1e-10));
    CHECK((sc.position(t + h) - sc.position(t - h)) / (2 * h) == doctest::Approx(sc.rate(t)).epsilon(1e-6));
  }
  CHECK(sc.inverse(-1.0) == 0.0);
  CHECK(sc.inverse(4.0) == sc.duration());
  // the duration solves s(T) = T_b
  double s = 0.0;
  const double dt = 1e-5;
  for (double t = 0.0; t < sc.duration() - dt / 2; t += dt) s += dt * sc.rate(t + dt / 2);
  CHECK(s == doctest::Approx(4.0).epsilon(1e-6));
}

TEST_CASE("invalid scalings are rejected") {
  CHECK_THROWS_AS(TimeScaling({0.5, 0.0, 0.5}, 0.001), InvalidScaling);
  CHECK_THROWS_AS(TimeScaling({0.5, 1.2, 0.5}, 0.001), InvalidScaling);
  CHECK_THROWS_AS(TimeScaling({0.5, 0.5, 0.5}, 1.0), InvalidScaling);
  CHECK_THROWS_AS(TimeScaling({0.5}, 0.001), InvalidScaling);
  CHECK_THROWS_AS(TimeScaling::constant(0.0, 1.0), InvalidScaling);
  CHECK_THROWS_AS(TimeScaling::constant(1.5, 1.0), InvalidScaling);
  CHECK_THROWS_AS(apply_scaling(base_path(3.0), TimeScaling::constant(0.5, 2.0)), InvalidScaling);
  CHECK_THROWS_AS(TimeScaling({0.5, 0.5, 0.5}, 0.001, 0.0), InvalidScaling);
}

TEST_CASE("scaling leaves the geometric path unchanged") {
  const Trajectory tr = base_path(5.0);
  const ScaledTrajectory s(tr, TimeScaling(wavy_rates(5.0, 0.002), 5.0));
  const TimeScaling& sc = s.scaling();
  double prev = -1.0;
  for (double t = 0.0; t <= s.duration(); t += 0.01) {
    const double sigma = sc.position(t);
    CHECK(sigma >= prev);
    prev = sigma;
    CHECK((s.sample(t).position - tr.sample(sigma).position).norm() < 1e-9);
  }
  CHECK((s.sample(s.duration()).position - tr.sample(5.0).position).norm() < 1e-12);
}

TEST_CASE("a rate given along the path integrates to a time scaling") {
  PathRate half;
  half.values.assign(4001, 0.5);
  const TimeScaling c = scaling_from_path_rate(half, 4.0);
  CHECK(c.duration() == doctest::Approx(8.0).epsilon(1e-9));

  PathRate dip;
  dip.step = 0.001;
  for (int k = 0; k <= 4000; ++k) dip.values.push_back(1.0 - 0.7 * std::exp(-std::pow((k * 0.001 - 2.0) / 0.3, 2)));
  const TimeScaling sc = scaling_from_path_rate(dip, 4.0);
  for (double t = 0.0; t < sc.duration(); t += 0.05) CHECK(sc.rate(t) == doctest::Approx(dip.at(sc.position(t))).epsilon(1e-4));
  CHECK(sc.duration() > 4.0);
  CHECK(half.at(-1.0) == 0.5);
  CHECK(PathRate{}.at(1.0) == 1.0);
}
