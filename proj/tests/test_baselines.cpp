#include "epiout/baselines.hpp"

#include <gtest/gtest.h>

using namespace epiout;

namespace {

NetworkParams trained_1d_center_net(Rng& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Matrix x(100, 1), y(100, 1);
  for (int i = 0; i < 100; ++i) {
    x(i, 0) = u(rng);
    y(i, 0) = std::sin(M_PI * x(i, 0));
  }
  NetworkParams p = make_network(1, {50, 50}, 1, false, 11);
  AdamState adam = AdamState::zeros_like(p);
  TrainConfig cfg;
  cfg.epochs = 800;
  cfg.dropout_probability = 0.05;
  train(p, x, y, Matrix(0, 1), Vector(0), cfg, adam);
  return p;
}

}  // namespace

TEST(Dropout, ZeroProbabilityGivesZeroVariance) {
  DropoutModel model{make_network(2, {10}, 1, false, 3), 0.0, 50};
  Vector x(2);
  x << 0.4, -0.2;
  DropoutPrediction pred = dropout_predict(model, x, 9);
  EXPECT_EQ(pred.variance(0), 0.0);
  EXPECT_DOUBLE_EQ(pred.mean(0), forward(model.params, x).mean(0));
}

TEST(Dropout, DeterministicGivenSeed) {
  DropoutModel model{make_network(1, {20}, 1, false, 5), 0.1, 25};
  Vector x(1);
  x << 0.3;
  DropoutPrediction a = dropout_predict(model, x, 42);
  DropoutPrediction b = dropout_predict(model, x, 42);
  EXPECT_EQ(a.mean(0), b.mean(0));
  EXPECT_EQ(a.variance(0), b.variance(0));
  DropoutPrediction c = dropout_predict(model, x, 43);
  EXPECT_NE(a.variance(0), c.variance(0));
}

TEST(Dropout, OffDataVarianceExceedsOnData) {
  Rng rng(2024);
  DropoutModel model{trained_1d_center_net(rng), 0.05, 50};
  Vector on(1), off(1);
  on << 0.0;
  off << 3.0;
  const double var_on = dropout_predict(model, on, 7).total_variance();
  const double var_off = dropout_predict(model, off, 7).total_variance();
  EXPECT_GT(var_off, var_on);
}

TEST(Dropout, VarianceSpreadShrinksWithMoreSamples) {
  DropoutModel small{make_network(1, {30, 30}, 1, false, 8), 0.1, 10};
  DropoutModel large = small;
  large.samples = 200;
  Vector x(1);
  x << 0.5;
  auto spread = [&](const DropoutModel& m) {
    std::vector<double> vars;
    for (std::uint64_t s = 0; s < 20; ++s)
      vars.push_back(dropout_predict(m, x, s).total_variance());
    double mean = 0.0, var = 0.0;
    for (double v : vars) mean += v / vars.size();
    for (double v : vars) var += sq(v - mean) / (vars.size() - 1);
    return std::sqrt(var);
  };
  EXPECT_LT(spread(large), spread(small));
}

TEST(Dropout, RequiresTwoSamples) {
  DropoutModel model{make_network(1, {4}, 1, false, 2), 0.05, 1};
  Vector x(1);
  x << 0.0;
  EXPECT_THROW(dropout_predict(model, x, 0), std::invalid_argument);
}

TEST(NormalizeUncertainty, BasicRescaling) {
  auto out = normalize_uncertainty({2.0, 4.0, 6.0});
  ASSERT_EQ(out.size(), 3u);
  EXPECT_DOUBLE_EQ(out[0], 0.0);
  EXPECT_DOUBLE_EQ(out[1], 0.5);
  EXPECT_DOUBLE_EQ(out[2], 1.0);
}

TEST(NormalizeUncertainty, ConstantMapsToZeroWithFlag) {
  bool degenerate = false;
  auto out = normalize_uncertainty({3.0, 3.0}, &degenerate);
  EXPECT_TRUE(degenerate);
  EXPECT_DOUBLE_EQ(out[0], 0.0);
  EXPECT_DOUBLE_EQ(out[1], 0.0);
}

TEST(NormalizeUncertainty, AffineInvariance) {
  Rng rng(77);
  std::uniform_real_distribution<double> u(0.0, 5.0);
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<double> v(12);
    for (double& x : v) x = u(rng);
    const double a = 0.1 + u(rng), b = u(rng);
    std::vector<double> scaled(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) scaled[i] = a * v[i] + b;
    auto nv = normalize_uncertainty(v);
    auto ns = normalize_uncertainty(scaled);
    for (std::size_t i = 0; i < v.size(); ++i) ASSERT_NEAR(nv[i], ns[i], 1e-12);
  }
}

TEST(NormalizeUncertainty, RejectsNegativeAndEmpty) {
  EXPECT_THROW(normalize_uncertainty({}), std::invalid_argument);
  EXPECT_THROW(normalize_uncertainty({1.0, -0.5}), std::invalid_argument);
}

TEST(RescaleWith, AppliesReferenceAffineAndClamps) {
  std::vector<double> reference = {2.0, 4.0, 6.0};
  auto out = rescale_with(reference, {2.0, 5.0, 8.0, 0.0});
  EXPECT_DOUBLE_EQ(out[0], 0.0);
  EXPECT_DOUBLE_EQ(out[1], 0.75);
  EXPECT_DOUBLE_EQ(out[2], 1.0);  // clamped
  EXPECT_DOUBLE_EQ(out[3], 0.0);  // clamped
}
