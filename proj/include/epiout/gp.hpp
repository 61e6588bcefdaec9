// Exact Gaussian process regression with a squared-exponential ARD kernel.
// Hyperparameters live in log space (lengthscales, signal std, noise std)
// and are fitted by Adam ascent on the log marginal likelihood over a few
// seeded restarts. Predictions reuse the Cholesky factor of K + sigma_n^2 I.
#pragma once

#include "epiout/core.hpp"

#include <Eigen/Cholesky>

#include <vector>

namespace epiout {

struct GpHyper {
  Vector log_lengthscales;  // d_x entries
  double log_signal = 0.0;  // log sigma_f
  double log_noise = 0.0;   // log sigma_n

  Vector to_vector() const {
    Vector v(log_lengthscales.size() + 2);
    v.head(log_lengthscales.size()) = log_lengthscales;
    v(v.size() - 2) = log_signal;
    v(v.size() - 1) = log_noise;
    return v;
  }

  static GpHyper from_vector(const Vector& v) {
    GpHyper h;
    h.log_lengthscales = v.head(v.size() - 2);
    h.log_signal = v(v.size() - 2);
    h.log_noise = v(v.size() - 1);
    return h;
  }
};

struct GpFitOptions {
  int restarts = 3;
  int adam_steps = 500;
  double learning_rate = 0.05;
  int max_points = 5000;
  double jitter_start = 1e-8;
  double jitter_max = 1e-2;
};

namespace detail {

inline Matrix se_ard_kernel(const Matrix& a, const Matrix& b, const GpHyper& h) {
  const Vector inv_ls2 = (-2.0 * h.log_lengthscales).array().exp();
  const double sf2 = std::exp(2.0 * h.log_signal);
  Matrix k(a.rows(), b.rows());
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < b.rows(); ++j) {
      double z = 0.0;
      for (int d = 0; d < a.cols(); ++d) z += sq(a(i, d) - b(j, d)) * inv_ls2(d);
      k(i, j) = sf2 * std::exp(-0.5 * z);
    }
  return k;
}

// Cholesky with escalating jitter; returns the jitter that succeeded.
inline double robust_llt(const Matrix& k_noisy, double jitter_start, double jitter_max,
                         Eigen::LLT<Matrix>& llt) {
  llt.compute(k_noisy);
  if (llt.info() == Eigen::Success) return 0.0;
  for (double jitter = jitter_start; jitter <= jitter_max; jitter *= 10.0) {
    Matrix k = k_noisy + jitter * Matrix::Identity(k_noisy.rows(), k_noisy.cols());
    llt.compute(k);
    if (llt.info() == Eigen::Success) return jitter;
  }
  throw std::runtime_error("gp: Cholesky failed even at maximum jitter");
}

}  // namespace detail

class GpModel {
 public:
  // Fixed hyperparameters; used directly by tests and as the final step of
  // gp_fit.
  static GpModel make(const Matrix& x, const Vector& y, const GpHyper& hyper,
                      double jitter_start = 1e-8, double jitter_max = 1e-2) {
    require(x.rows() >= 1, "gp: empty training set");
    require(x.rows() == y.size(), "gp: x/y size mismatch");
    GpModel m;
    m.x_ = x;
    m.y_ = y;
    m.hyper_ = hyper;
    Matrix k = detail::se_ard_kernel(x, x, hyper);
    const double sn2 = std::exp(2.0 * hyper.log_noise);
    k.diagonal().array() += sn2;
    m.jitter_ = detail::robust_llt(k, jitter_start, jitter_max, m.llt_);
    m.alpha_ = m.llt_.solve(y);
    return m;
  }

  const GpHyper& hyper() const { return hyper_; }
  double jitter() const { return jitter_; }
  double signal_variance() const { return std::exp(2.0 * hyper_.log_signal); }
  double noise_variance() const { return std::exp(2.0 * hyper_.log_noise); }

  // Posterior of the latent function: mean k*' alpha and variance
  // k** - k*' (K + sn^2 I)^{-1} k*, clamped at zero.
  std::pair<double, double> predict(const Vector& x) const {
    require(x.size() == x_.cols(), "gp predict: dimension mismatch");
    require(x.allFinite(), "gp predict: non-finite input");
    Matrix ks = detail::se_ard_kernel(x_, x.transpose(), hyper_);  // n x 1
    const double mean = ks.col(0).dot(alpha_);
    const Vector v = llt_.matrixL().solve(ks.col(0));
    const double var = signal_variance() - v.squaredNorm();
    return {mean, std::max(var, 0.0)};
  }

  double log_marginal_likelihood() const {
    const int n = static_cast<int>(x_.rows());
    const double logdet = llt_.matrixLLT().diagonal().array().log().sum();
    return -0.5 * y_.dot(alpha_) - logdet - 0.5 * n * std::log(2.0 * M_PI);
  }

 private:
  Matrix x_;
  Vector y_;
  GpHyper hyper_;
  Eigen::LLT<Matrix> llt_;
  Vector alpha_;
  double jitter_ = 0.0;
};

// Log marginal likelihood and its gradient in the log-hyperparameters,
// also exposed standalone for the finite-difference checks.
inline double gp_log_marginal_likelihood(const Matrix& x, const Vector& y,
                                         const GpHyper& hyper, Vector* grad = nullptr,
                                         double jitter_start = 1e-8,
                                         double jitter_max = 1e-2) {
  const int n = static_cast<int>(x.rows());
  const int d = static_cast<int>(x.cols());
  Matrix k = detail::se_ard_kernel(x, x, hyper);
  const double sn2 = std::exp(2.0 * hyper.log_noise);
  Matrix k_noisy = k;
  k_noisy.diagonal().array() += sn2;
  Eigen::LLT<Matrix> llt;
  detail::robust_llt(k_noisy, jitter_start, jitter_max, llt);
  const Vector alpha = llt.solve(y);
  const double logdet = llt.matrixLLT().diagonal().array().log().sum();
  const double lml = -0.5 * y.dot(alpha) - logdet - 0.5 * n * std::log(2.0 * M_PI);
  if (!grad) return lml;

  // dLML/dtheta = 0.5 tr((alpha alpha' - K^-1) dK/dtheta)
  Matrix w = alpha * alpha.transpose() - llt.solve(Matrix::Identity(n, n));
  grad->resize(d + 2);
  const Vector inv_ls2 = (-2.0 * hyper.log_lengthscales).array().exp();
  for (int dim = 0; dim < d; ++dim) {
    double acc = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        acc += w(i, j) * k(i, j) * sq(x(i, dim) - x(j, dim)) * inv_ls2(dim);
    (*grad)(dim) = 0.5 * acc;
  }
  (*grad)(d) = w.cwiseProduct(k).sum();             // d/dlog sigma_f: 2K
  (*grad)(d + 1) = sn2 * w.diagonal().sum();        // d/dlog sigma_n: 2 sn^2 I
  return lml;
}

// Best-of-restarts Adam ascent on the log marginal likelihood.
inline GpModel gp_fit(const Matrix& x_tr, const Vector& y_tr, int restarts,
                      std::uint64_t seed, GpFitOptions opts = {}) {
  require(x_tr.rows() >= 1, "gp_fit: empty training set");
  require(x_tr.rows() <= opts.max_points,
          "gp_fit: training set exceeds the configured cap");
  require(restarts >= 1, "gp_fit: need at least one restart");
  const int d = static_cast<int>(x_tr.cols());

  const double y_std = std::max(std::sqrt((y_tr.array() - y_tr.mean()).square().sum() /
                                          std::max<int>(1, y_tr.size() - 1)),
                                1e-3);
  Vector x_spread(d);
  for (int k = 0; k < d; ++k) {
    const double lo = x_tr.col(k).minCoeff(), hi = x_tr.col(k).maxCoeff();
    x_spread(k) = std::max(hi - lo, 1e-3);
  }

  double best_lml = -std::numeric_limits<double>::infinity();
  GpHyper best;
  Rng rng(derive_seed(seed, "gp_fit"));
  std::normal_distribution<double> gauss(0.0, 0.3);

  for (int r = 0; r < restarts; ++r) {
    GpHyper h;
    h.log_lengthscales = x_spread.array().log() - std::log(2.0);
    for (int k = 0; k < d; ++k) h.log_lengthscales(k) += gauss(rng);
    h.log_signal = std::log(y_std) + gauss(rng);
    h.log_noise = std::log(0.1 * y_std) + gauss(rng);

    Vector theta = h.to_vector();
    Vector m = Vector::Zero(theta.size()), v = Vector::Zero(theta.size());
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    for (int step = 1; step <= opts.adam_steps; ++step) {
      Vector grad;
      gp_log_marginal_likelihood(x_tr, y_tr, GpHyper::from_vector(theta), &grad,
                                 opts.jitter_start, opts.jitter_max);
      m = b1 * m + (1.0 - b1) * grad;
      v = b2 * v + (1.0 - b2) * grad.cwiseProduct(grad);
      const double bc1 = 1.0 - std::pow(b1, step), bc2 = 1.0 - std::pow(b2, step);
      // ascent
      theta.array() += opts.learning_rate * (m.array() / bc1) /
                       ((v.array() / bc2).sqrt() + eps);
    }
    const double lml = gp_log_marginal_likelihood(x_tr, y_tr, GpHyper::from_vector(theta),
                                                  nullptr, opts.jitter_start,
                                                  opts.jitter_max);
    if (lml > best_lml) {
      best_lml = lml;
      best = GpHyper::from_vector(theta);
    }
  }
  return GpModel::make(x_tr, y_tr, best, opts.jitter_start, opts.jitter_max);
}

}  // namespace epiout
