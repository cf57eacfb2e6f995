#include "gapctl/kernels/dense.hpp"
#include "gapctl/mlp.hpp"

#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

using namespace gapctl;

namespace {

Normalization unit_norm(int in, int out) {
  return Normalization{std::vector<double>(in, 1.0), std::vector<double>(out, 1.0)};
}

// One neuron at a time, straight from the flat parameter layout.
std::vector<double> naive_forward(const MlpModel& m, std::vector<double> a) {
  const auto& p = m.parameters();
  const auto& layers = m.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& L = layers[l];
    std::vector<double> next(L.out);
    for (int o = 0; o < L.out; ++o) {
      double s = p[L.bias + o];
      for (int i = 0; i < L.in; ++i) s += p[L.weights + static_cast<std::size_t>(o) * L.in + i] * a[i];
      next[o] = (l + 1 < layers.size()) ? std::tanh(s) : s;
    }
    a = std::move(next);
  }
  return a;
}

std::vector<double> random_input(std::mt19937_64& rng, int n) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> x(n);
  for (auto& v : x) v = u(rng);
  return x;
}

}  // namespace

TEST_CASE("parameter layout and counts") {
  const MlpModel m({4, 3, 2}, unit_norm(4, 2));
  REQUIRE(m.layers().size() == 2);
  CHECK(m.layers()[0].weights == 0);
  CHECK(m.layers()[0].bias == 12);
  CHECK(m.layers()[1].weights == 15);
  CHECK(m.layers()[1].bias == 21);
  CHECK(m.parameter_count() == 23);
  CHECK(mlp_parameter_count(4, 1, 3, 2) == 23);

  CHECK(mlp_parameter_count(kHistoryFeatures, 3, 112, kPredictionOutputs) == 50354);
  CHECK(width_for_budget(3, 50354) == 112);
  for (int depth : {2, 3, 5, 7}) {
    const int w = width_for_budget(depth, 50000);
    const auto n = mlp_parameter_count(kHistoryFeatures, depth, w, kPredictionOutputs);
    CHECK(std::abs(static_cast<double>(n) - 50000.0) < 0.03 * 50000.0);
  }
  CHECK_THROWS_AS(MlpModel({4}, unit_norm(4, 4)), std::invalid_argument);
  CHECK_THROWS_AS(MlpModel({4, 0, 2}, unit_norm(4, 2)), std::invalid_argument);
  CHECK_THROWS_AS(MlpModel({4, 2}, unit_norm(3, 2)), std::invalid_argument);
}

TEST_CASE("batched forward matches a per-neuron oracle with either kernel set") {
  MlpModel m({156, 40, 33, 66}, unit_norm(156, 66));
  m.initialize(4);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-0.1, 0.1);
  for (auto& p : m.parameters()) p += u(rng);  // non-zero biases too

  const int batch = 9;
  std::vector<double> x;
  for (int n = 0; n < batch; ++n) {
    const auto xi = random_input(rng, 156);
    x.insert(x.end(), xi.begin(), xi.end());
  }
  const kernels::Isa initial = kernels::active_kernels().isa;
  for (kernels::Isa isa : {kernels::Isa::Scalar, kernels::Isa::Avx2}) {
    if (!kernels::select_kernels(isa)) continue;
    MlpWorkspace ws;
    m.forward(x.data(), batch, ws);
    const auto& y = ws.activations.back();
    for (int n = 0; n < batch; ++n) {
      const std::vector<double> xi(x.begin() + n * 156, x.begin() + (n + 1) * 156);
      const auto ref = naive_forward(m, xi);
      for (int o = 0; o < 66; ++o) REQUIRE(std::abs(y[n * 66 + o] - ref[o]) < 1e-12);
    }
  }
  kernels::select_kernels(initial);
}

TEST_CASE("backward gives the gradient of a linear functional of the output") {
  MlpModel m({7, 6, 5, 3}, unit_norm(7, 3));
  m.initialize(2);
  std::mt19937_64 rng(3);
  const int batch = 4;
  std::vector<double> x, c;
  for (int n = 0; n < batch; ++n) {
    const auto xi = random_input(rng, 7);
    const auto ci = random_input(rng, 3);
    x.insert(x.end(), xi.begin(), xi.end());
    c.insert(c.end(), ci.begin(), ci.end());
  }
  auto objective = [&](const MlpModel& model) {
    MlpWorkspace ws;
    model.forward(x.data(), batch, ws);
    double s = 0.0;
    for (std::size_t k = 0; k < c.size(); ++k) s += c[k] * ws.activations.back()[k];
    return s;
  };
  MlpWorkspace ws;
  m.forward(x.data(), batch, ws);
  std::vector<double> grad(m.parameter_count(), 0.0);
  m.backward(x.data(), c.data(), ws, grad.data());

  const double h = 1e-6;
  for (std::size_t k = 0; k < m.parameter_count(); ++k) {
    MlpModel plus = m, minus = m;
    plus.parameters()[k] += h;
    minus.parameters()[k] -= h;
    const double fd = (objective(plus) - objective(minus)) / (2 * h);
    REQUIRE(std::abs(fd - grad[k]) < 1e-7 * std::max(1.0, std::abs(fd)));
  }
}

TEST_CASE("predict applies the normalization on both sides") {
  Normalization norm{{2.0, 4.0}, {10.0}};
  MlpModel m({2, 1}, norm);
  m.parameters() = {1.0, 1.0, 0.5};  // y = x0 + x1 + 0.5 (normalized)
  const auto y = m.predict(std::vector<double>{2.0, 4.0});
  REQUIRE(y.size() == 1);
  CHECK(y[0] == doctest::Approx(25.0));
  CHECK_THROWS_AS(m.predict(std::vector<double>{1.0}), std::invalid_argument);
  CHECK_THROWS_AS(m.predict(HistoryMatrix::Zero()), std::invalid_argument);
}

TEST_CASE("history model normalization scales positions by 2 pi and speeds by the limit") {
  const ArmModel arm = ArmModel::ur5e();
  const Normalization n = Normalization::for_arm(arm);
  REQUIRE(n.input_scale.size() == 156);
  REQUIRE(n.output_scale.size() == 66);
  CHECK(n.input_scale[0] == doctest::Approx(2 * 3.14159265358979));
  CHECK(n.input_scale[6] == doctest::Approx(arm.speed_limit[0]));
  CHECK(n.output_scale[5] == doctest::Approx(arm.speed_limit[5]));

  MlpModel m = MlpModel::for_history(arm, {16, 16});
  m.initialize(1);
  const PredictionMatrix p = m.predict(HistoryMatrix::Zero());
  CHECK(p.norm() == 0.0);  // zero biases and odd activations
}

TEST_CASE("checkpoints round trip bit for bit") {
  MlpModel m = MlpModel::for_history(ArmModel::ur5e(), {24, 12});
  m.initialize(9);
  std::stringstream buf;
  m.write(buf);
  const MlpModel back = MlpModel::read(buf);
  CHECK(back.sizes() == m.sizes());
  CHECK(back.parameters() == m.parameters());
  CHECK(back.normalization().input_scale == m.normalization().input_scale);
  HistoryMatrix h = HistoryMatrix::Random();
  CHECK(back.predict(h) == m.predict(h));
}

TEST_CASE("malformed checkpoints are rejected") {
  MlpModel m({3, 2}, unit_norm(3, 2));
  std::stringstream good;
  m.write(good);
  const std::string text = good.str();

  std::stringstream truncated(text.substr(0, text.size() - 5));
  CHECK_THROWS_AS(MlpModel::read(truncated), FormatError);
  std::stringstream wrong_tag("{\"format\":\"other\"}\n");
  CHECK_THROWS_AS(MlpModel::read(wrong_tag), FormatError);
  std::stringstream not_json("hello\n");
  CHECK_THROWS_AS(MlpModel::read(not_json), FormatError);
  std::stringstream empty("");
  CHECK_THROWS_AS(MlpModel::read(empty), FormatError);
}
