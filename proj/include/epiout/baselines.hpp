// Reference uncertainty models for the benchmark comparison: MC-dropout
// prediction on top of the shared network, plus min-max rescaling that maps
// baseline uncertainties onto [0,1]. The exact-GP baseline lives in gp.hpp.
#pragma once

#include "epiout/gp.hpp"
#include "epiout/net.hpp"

#include <iostream>

namespace epiout {

struct DropoutModel {
  NetworkParams params;
  double probability = 0.05;
  int samples = 50;
};

struct DropoutPrediction {
  Vector mean;
  Vector variance;  // unbiased, per output dim

  double total_variance() const { return variance.sum(); }
};

// K stochastic forward passes with fresh Bernoulli masks; sample mean and
// unbiased sample variance of the mean head.
inline DropoutPrediction dropout_predict(const DropoutModel& model, const Vector& x,
                                         std::uint64_t seed) {
  require(model.samples >= 2, "dropout_predict: need at least two samples");
  require(model.probability >= 0.0 && model.probability < 1.0,
          "dropout_predict: probability must be in [0,1)");
  const int k = model.samples;
  const int dm = model.params.d_mean;
  if (model.probability == 0.0) {
    // every pass is the deterministic forward
    DropoutPrediction out;
    out.mean = forward(model.params, x).mean;
    out.variance = Vector::Zero(dm);
    return out;
  }
  Rng rng(derive_seed(seed, "dropout_predict"));
  Matrix draws(dm, k);
  for (int s = 0; s < k; ++s) {
    DropoutSetting ds{model.probability, &rng};
    draws.col(s) = forward(model.params, x, ds).mean;
  }
  DropoutPrediction out;
  out.mean = draws.rowwise().mean();
  out.variance = (draws.colwise() - out.mean).rowwise().squaredNorm() / (k - 1);
  return out;
}

// Min-max rescaling over the test-point evaluations. A constant input maps
// everything to 0, matching the degenerate rule.
inline std::vector<double> normalize_uncertainty(const std::vector<double>& values,
                                                 bool* degenerate = nullptr) {
  require(!values.empty(), "normalize_uncertainty: empty value list");
  double lo = values[0], hi = values[0];
  for (double v : values) {
    require(v >= 0.0, "normalize_uncertainty: negative uncertainty");
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  std::vector<double> out(values.size(), 0.0);
  if (hi == lo) {
    if (degenerate) *degenerate = true;
    std::cerr << "normalize_uncertainty: constant values, mapping all to 0\n";
    return out;
  }
  if (degenerate) *degenerate = false;
  for (std::size_t i = 0; i < values.size(); ++i) out[i] = (values[i] - lo) / (hi - lo);
  return out;
}

// Applies the affine map fitted on the test values to another point set
// (train-side total discounts for the baselines), clamped into [0,1].
inline std::vector<double> rescale_with(const std::vector<double>& reference,
                                        const std::vector<double>& values) {
  require(!reference.empty(), "rescale_with: empty reference");
  double lo = reference[0], hi = reference[0];
  for (double v : reference) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  std::vector<double> out(values.size(), 0.0);
  if (hi == lo) return out;
  for (std::size_t i = 0; i < values.size(); ++i)
    out[i] = std::clamp((values[i] - lo) / (hi - lo), 0.0, 1.0);
  return out;
}

}  // namespace epiout
