#include "epiout/net.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace epiout;

namespace {

double rel_err(double a, double b) {
  const double denom = std::max({std::abs(a), std::abs(b), 1e-8});
  return std::abs(a - b) / denom;
}

// Central finite difference of the batch loss with respect to every
// parameter; the oracle side of the gradient contract.
double loss_at(NetworkParams& p, const Matrix& xr, const Matrix& yr, const Matrix& xe,
               const Vector& le, const TrainConfig& cfg) {
  return detail::loss_and_gradients(p, xr, yr, xe, le, cfg, nullptr, nullptr).total;
}

void check_gradients_fd(NetworkParams p, const Matrix& xr, const Matrix& yr,
                        const Matrix& xe, const Vector& le, const TrainConfig& cfg,
                        double tol) {
  Gradients g = Gradients::zeros_like(p);
  detail::loss_and_gradients(p, xr, yr, xe, le, cfg, &g, nullptr);
  const double h = 1e-5;
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    for (int i = 0; i < p.weights[l].rows(); ++i)
      for (int j = 0; j < p.weights[l].cols(); ++j) {
        const double orig = p.weights[l](i, j);
        p.weights[l](i, j) = orig + h;
        const double up = loss_at(p, xr, yr, xe, le, cfg);
        p.weights[l](i, j) = orig - h;
        const double dn = loss_at(p, xr, yr, xe, le, cfg);
        p.weights[l](i, j) = orig;
        const double fd = (up - dn) / (2 * h);
        const double an = g.w[l](i, j);
        if (std::abs(fd) + std::abs(an) < 1e-10) continue;
        ASSERT_LT(rel_err(an, fd), tol) << "W layer " << l << " (" << i << "," << j << ")";
      }
    for (int i = 0; i < p.biases[l].size(); ++i) {
      const double orig = p.biases[l](i);
      p.biases[l](i) = orig + h;
      const double up = loss_at(p, xr, yr, xe, le, cfg);
      p.biases[l](i) = orig - h;
      const double dn = loss_at(p, xr, yr, xe, le, cfg);
      p.biases[l](i) = orig;
      const double fd = (up - dn) / (2 * h);
      const double an = g.b[l](i);
      if (std::abs(fd) + std::abs(an) < 1e-10) continue;
      ASSERT_LT(rel_err(an, fd), tol) << "b layer " << l << " idx " << i;
    }
  }
}

Matrix sine_inputs(int n, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix x(n, 1);
  for (int i = 0; i < n; ++i) x(i, 0) = u(rng);
  return x;
}

Matrix sine_targets(const Matrix& x) {
  Matrix y(x.rows(), 1);
  for (int i = 0; i < x.rows(); ++i) y(i, 0) = std::sin(M_PI * x(i, 0));
  return y;
}

}  // namespace

TEST(Forward, ZeroParamsGiveHeadDefaults) {
  NetworkParams p = make_network(2, {4}, 1, true, 1);
  for (auto& w : p.weights) w.setZero();
  Vector x(2);
  x << 0.7, -1.3;
  HeadOutputs out = forward(p, x);
  EXPECT_DOUBLE_EQ(out.mean(0), 0.0);
  EXPECT_DOUBLE_EQ(out.scale(0), softplus(0.0) + kScaleFloor);
  EXPECT_NEAR(out.scale(0), 0.6931, 5e-4);
  EXPECT_DOUBLE_EQ(out.eta, 0.5);
}

TEST(Forward, IdentitySingleLinearLayer) {
  NetworkParams p = make_network(1, {}, 1, false, 3);
  p.weights[0] << 1.0, 0.0;  // mean row copies x, eta logit row dead
  p.biases[0].setZero();
  Vector x(1);
  x << 0.3;
  EXPECT_DOUBLE_EQ(forward(p, x).mean(0), 0.3);
}

TEST(Forward, OutputsFiniteAndEtaBounded) {
  NetworkParams p = make_network(3, {16, 16}, 2, true, 99);
  Rng rng(4242);
  std::normal_distribution<double> g(0.0, 3.0);
  for (int k = 0; k < 10000; ++k) {
    Vector x(3);
    x << g(rng), g(rng), g(rng);
    HeadOutputs out = forward(p, x);
    ASSERT_TRUE(out.mean.allFinite());
    ASSERT_TRUE(out.scale.allFinite());
    ASSERT_GT(out.scale.minCoeff(), 0.0);
    ASSERT_GE(out.eta, 0.0);
    ASSERT_LE(out.eta, 1.0);
  }
}

TEST(Forward, PureFunctionWithoutDropout) {
  NetworkParams p = make_network(2, {8}, 1, true, 5);
  Vector x(2);
  x << 0.2, -0.4;
  HeadOutputs a = forward(p, x);
  HeadOutputs b = forward(p, x);
  EXPECT_EQ(a.mean(0), b.mean(0));
  EXPECT_EQ(a.scale(0), b.scale(0));
  EXPECT_EQ(a.eta, b.eta);
}

TEST(Forward, RejectsBadInput) {
  NetworkParams p = make_network(2, {4}, 1, false, 5);
  Vector wrong(3);
  wrong.setZero();
  EXPECT_THROW(forward(p, wrong), std::invalid_argument);
  Vector nan(2);
  nan << 0.0, std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(forward(p, nan), std::invalid_argument);
}

TEST(GaussianNll, AnalyticValues) {
  EXPECT_NEAR(gaussian_nll(2.0, 1.0, 2.0), 0.5 * std::log(2.0 * M_PI), 1e-12);
  EXPECT_NEAR(gaussian_nll(2.0, 1.0, 2.0), 0.91894, 1e-5);
  EXPECT_NEAR(gaussian_nll(0.0, 1.0, 1.0), 0.91894 + 0.5, 1e-5);
}

TEST(GaussianNll, ClampsAndCounts) {
  long clamps = 0;
  const double v = gaussian_nll(0.0, 1e-9, 0.0, &clamps);
  EXPECT_EQ(clamps, 1);
  EXPECT_DOUBLE_EQ(v, gaussian_nll(0.0, kScaleFloor, 0.0));
}

TEST(GaussianNll, GradientMatchesFiniteDifferences) {
  Rng rng(31);
  std::uniform_real_distribution<double> um(-2.0, 2.0), us(0.2, 3.0);
  const double h = 1e-5;
  for (int k = 0; k < 50; ++k) {
    const double m = um(rng), s = us(rng), y = um(rng);
    const double fd_m = (gaussian_nll(m + h, s, y) - gaussian_nll(m - h, s, y)) / (2 * h);
    const double fd_s = (gaussian_nll(m, s + h, y) - gaussian_nll(m, s - h, y)) / (2 * h);
    const double an_m = (m - y) / (s * s);
    const double an_s = 1.0 / s - sq(y - m) / (s * s * s);
    ASSERT_LT(rel_err(fd_m, an_m), 1e-6);
    ASSERT_LT(rel_err(fd_s, an_s), 1e-6);
  }
}

TEST(Bce, AnalyticValues) {
  EXPECT_NEAR(bce(0.5, 0), std::log(2.0), 1e-12);
  EXPECT_NEAR(bce(0.5, 1), std::log(2.0), 1e-12);
  EXPECT_NEAR(bce(1.0 - kBceEps, 1), 0.0, 1e-6);
  EXPECT_NEAR(bce(kBceEps, 0), 0.0, 1e-6);
}

TEST(Bce, LogitGradientIsEtaMinusLabel) {
  Rng rng(17);
  std::uniform_real_distribution<double> uz(-4.0, 4.0);
  const double h = 1e-5;
  for (int k = 0; k < 50; ++k) {
    const double z = uz(rng);
    for (int label : {0, 1}) {
      const double fd = (bce(sigmoid(z + h), label) - bce(sigmoid(z - h), label)) / (2 * h);
      ASSERT_LT(rel_err(fd, sigmoid(z) - label), 1e-5) << "z=" << z;
    }
  }
}

TEST(Gradients, SquaredErrorLossAllLayers) {
  Rng rng(7);
  std::normal_distribution<double> g(0.0, 1.0);
  NetworkParams p = make_network(2, {6, 5}, 1, false, 21);
  Matrix xr(4, 2), yr(4, 1), xe(3, 2);
  Vector le(3);
  for (int i = 0; i < xr.size(); ++i) xr.data()[i] = g(rng);
  for (int i = 0; i < yr.size(); ++i) yr.data()[i] = g(rng);
  for (int i = 0; i < xe.size(); ++i) xe.data()[i] = g(rng);
  le << 0, 1, 1;
  TrainConfig cfg;
  cfg.mode = TrainMode::mean_only;
  cfg.lambda_epi = 0.7;
  check_gradients_fd(p, xr, yr, xe, le, cfg, 1e-4);
}

TEST(Gradients, GaussianNllLossAllLayers) {
  Rng rng(8);
  std::normal_distribution<double> g(0.0, 1.0);
  NetworkParams p = make_network(3, {6, 6}, 2, true, 22);
  Matrix xr(5, 3), yr(5, 2), xe(4, 3);
  Vector le(4);
  for (int i = 0; i < xr.size(); ++i) xr.data()[i] = g(rng);
  for (int i = 0; i < yr.size(); ++i) yr.data()[i] = g(rng);
  for (int i = 0; i < xe.size(); ++i) xe.data()[i] = g(rng);
  le << 1, 0, 1, 0;
  TrainConfig cfg;
  cfg.mode = TrainMode::heteroscedastic;
  cfg.lambda_epi = 1.3;
  check_gradients_fd(p, xr, yr, xe, le, cfg, 1e-4);
}

TEST(Train, SineConvergesBelow1e2) {
  Rng rng(2025);
  Matrix x = sine_inputs(100, rng);
  Matrix y = sine_targets(x);
  NetworkParams p = make_network(1, {50, 50}, 1, false, 77);
  AdamState adam = AdamState::zeros_like(p);
  TrainConfig cfg;
  cfg.epochs = 2000;
  cfg.seed = 1;
  train(p, x, y, Matrix(0, 1), Vector(0), cfg, adam);
  double mse = 0.0;
  for (int i = 0; i < x.rows(); ++i)
    mse += sq(forward(p, x.row(i).transpose()).mean(0) - y(i, 0)) / x.rows();
  EXPECT_LT(mse, 1e-2);
}

TEST(Train, LambdaZeroFreezesEtaHead) {
  Rng rng(5);
  Matrix x = sine_inputs(30, rng);
  Matrix y = sine_targets(x);
  Matrix xe(10, 1);
  Vector le(10);
  for (int i = 0; i < 10; ++i) {
    xe(i, 0) = sine_inputs(1, rng)(0, 0);
    le(i) = i % 2;
  }
  NetworkParams p = make_network(1, {8}, 1, false, 9);
  const Vector eta_row_before = p.weights.back().row(p.weights.back().rows() - 1);
  const double eta_bias_before = p.biases.back()(p.biases.back().size() - 1);
  AdamState adam = AdamState::zeros_like(p);
  TrainConfig cfg;
  cfg.epochs = 50;
  cfg.lambda_epi = 0.0;
  auto result = train(p, x, y, xe, le, cfg, adam);
  // eta logit row receives gradient only through the BCE term
  const Vector eta_row_after = p.weights.back().row(p.weights.back().rows() - 1);
  EXPECT_EQ((eta_row_before - eta_row_after).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(eta_bias_before, p.biases.back()(p.biases.back().size() - 1));
  // and the trunk still moved
  EXPECT_GT((p.weights[0]).cwiseAbs().sum(), 0.0);
  for (double loss : result.loss_history) EXPECT_GE(loss, 0.0);
}

TEST(Train, SeparatedClustersReachLowBce) {
  // label-0 inputs near the origin, label-1 inputs far away
  Matrix x(2, 1), y(2, 1);
  x << -0.1, 0.1;
  y << 0.0, 0.0;
  Matrix xe(40, 1);
  Vector le(40);
  Rng rng(6);
  std::normal_distribution<double> g(0.0, 0.05);
  for (int i = 0; i < 40; ++i) {
    const bool far = i % 2;
    xe(i, 0) = (far ? 3.0 : 0.0) + g(rng);
    le(i) = far ? 1.0 : 0.0;
  }
  NetworkParams p = make_network(1, {50, 50}, 1, false, 10);
  AdamState adam = AdamState::zeros_like(p);
  TrainConfig cfg;
  cfg.epochs = 800;
  train(p, x, y, xe, le, cfg, adam);
  double total_bce = 0.0;
  for (int i = 0; i < xe.rows(); ++i)
    total_bce += bce(forward(p, xe.row(i).transpose()).eta, static_cast<int>(le(i))) / xe.rows();
  EXPECT_LT(total_bce, 0.2);
}

TEST(Train, BitReproducibleGivenSeed) {
  Rng rng(12);
  Matrix x = sine_inputs(40, rng);
  Matrix y = sine_targets(x);
  Matrix xe = sine_inputs(20, rng, -3.0, 3.0);
  Vector le(20);
  for (int i = 0; i < 20; ++i) le(i) = i % 2;
  TrainConfig cfg;
  cfg.epochs = 30;
  cfg.batch_size = 8;
  cfg.seed = 314;

  auto run = [&]() {
    NetworkParams p = make_network(1, {10, 10}, 1, false, 55);
    AdamState adam = AdamState::zeros_like(p);
    auto res = train(p, x, y, xe, le, cfg, adam);
    return std::make_pair(serialize_network(p), res.loss_history);
  };
  auto [bytes_a, hist_a] = run();
  auto [bytes_b, hist_b] = run();
  EXPECT_EQ(bytes_a, bytes_b);
  EXPECT_EQ(hist_a, hist_b);
}

TEST(Train, FullBatchLossNearlyMonotone) {
  Rng rng(404);
  Matrix x = sine_inputs(100, rng);
  Matrix y = sine_targets(x);
  NetworkParams p = make_network(1, {50, 50}, 1, false, 2);
  AdamState adam = AdamState::zeros_like(p);
  TrainConfig cfg;
  cfg.epochs = 600;
  cfg.learning_rate = 1e-3;
  auto result = train(p, x, y, Matrix(0, 1), Vector(0), cfg, adam);
  int violations = 0;
  for (std::size_t i = 1; i < result.loss_history.size(); ++i)
    if (result.loss_history[i] > result.loss_history[i - 1] + 1e-12) ++violations;
  EXPECT_LE(violations, static_cast<int>(0.01 * cfg.epochs));
}

TEST(Train, ErrorsAndWarnings) {
  NetworkParams p = make_network(1, {4}, 1, false, 1);
  AdamState adam = AdamState::zeros_like(p);
  TrainConfig cfg;
  cfg.epochs = 1;
  EXPECT_THROW(train(p, Matrix(0, 1), Matrix(0, 1), Matrix(0, 1), Vector(0), cfg, adam),
               std::invalid_argument);

  Matrix x(2, 1), y(2, 1);
  x << 0.0, 1.0;
  y << 0.0, 1.0;
  auto res = train(p, x, y, Matrix(0, 1), Vector(0), cfg, adam);
  ASSERT_EQ(res.warnings.size(), 1u);
  EXPECT_NE(res.warnings[0].find("empty epi set"), std::string::npos);
}

TEST(Serialization, RoundTripsBitExact) {
  NetworkParams p = make_network(3, {7, 5}, 2, true, 123);
  const std::string bytes = serialize_network(p);
  NetworkParams q = deserialize_network(bytes);
  ASSERT_EQ(p.spec.size(), q.spec.size());
  EXPECT_EQ(q.d_mean, 2);
  EXPECT_TRUE(q.heteroscedastic);
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    EXPECT_TRUE((p.weights[l].array() == q.weights[l].array()).all());
    EXPECT_TRUE((p.biases[l].array() == q.biases[l].array()).all());
  }
  EXPECT_EQ(serialize_network(q), bytes);
  EXPECT_NE(bytes.find("epiout-net-v1"), std::string::npos);
}

TEST(Serialization, RejectsCorruptBuffers) {
  NetworkParams p = make_network(2, {3}, 1, false, 4);
  std::string bytes = serialize_network(p);
  EXPECT_THROW(deserialize_network(bytes.substr(0, bytes.size() - 5)), std::invalid_argument);
  EXPECT_THROW(deserialize_network(std::string("ab")), std::invalid_argument);
}
