// Shared aliases, math helpers and seed derivation for the epiout library.
#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace epiout {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Rng = std::mt19937_64;

// Floor on predicted aleatoric scales, keeps the Gaussian NLL finite.
inline constexpr double kScaleFloor = 1e-4;
// Clamp width for probabilities entering the binary cross-entropy.
inline constexpr double kBceEps = 1e-7;

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

inline double sigmoid(double x) {
  if (x >= 0.0) {
    const double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double softplus(double x) {
  if (x > 30.0) return x;
  if (x < -30.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

inline double sq(double x) { return x * x; }

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Stable seed derivation for named RNG streams (cells, substreams).
inline std::uint64_t derive_seed(std::uint64_t base, std::string_view tag) {
  std::uint64_t h = splitmix64(base);
  for (char c : tag) h = splitmix64(h ^ static_cast<unsigned char>(c));
  return h;
}

}  // namespace epiout
