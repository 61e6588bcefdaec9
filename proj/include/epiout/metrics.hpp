// Evaluation protocol: confidence-weighted MSE, total discount, wall-clock
// timing and the per-run record emitted into summary tables.
#pragma once

#include "epiout/csv.hpp"

#include <chrono>
#include <functional>
#include <utility>
#include <vector>

namespace epiout {

// Raised when every test point is fully discounted (all eta = 1).
class UndefinedMetricError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// rho = sum (y - yhat)^2 (1 - eta) / sum (1 - eta)
inline double weighted_mse(const std::vector<double>& predictions,
                           const std::vector<double>& targets,
                           const std::vector<double>& etas) {
  require(predictions.size() == targets.size() && targets.size() == etas.size(),
          "weighted_mse: length mismatch");
  require(!predictions.empty(), "weighted_mse: empty inputs");
  double num = 0.0, denom = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    require(etas[i] >= 0.0 && etas[i] <= 1.0, "weighted_mse: eta outside [0,1]");
    const double w = 1.0 - etas[i];
    num += sq(targets[i] - predictions[i]) * w;
    denom += w;
  }
  if (denom <= 0.0)
    throw UndefinedMetricError("weighted_mse: undefined, eta = 1 at every test point");
  return num / denom;
}

inline double total_discount(const std::vector<double>& etas) {
  double sum = 0.0;
  for (double eta : etas) {
    require(eta >= 0.0 && eta <= 1.0, "total_discount: eta outside [0,1]");
    sum += eta;
  }
  return sum;
}

inline double plain_mse(const std::vector<double>& predictions,
                        const std::vector<double>& targets) {
  require(predictions.size() == targets.size() && !predictions.empty(),
          "plain_mse: length mismatch");
  double sum = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i)
    sum += sq(targets[i] - predictions[i]);
  return sum / predictions.size();
}

template <class F>
auto timed(F&& thunk) {
  const auto start = std::chrono::steady_clock::now();
  if constexpr (std::is_void_v<std::invoke_result_t<F>>) {
    thunk();
    const std::chrono::duration<double> sec = std::chrono::steady_clock::now() - start;
    return sec.count();
  } else {
    auto result = thunk();
    const std::chrono::duration<double> sec = std::chrono::steady_clock::now() - start;
    return std::make_pair(std::move(result), sec.count());
  }
}

// Minimum of three runs, damps scheduler noise in latency comparisons.
template <class F>
double best_of_3_seconds(F&& thunk) {
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 3; ++i) {
    const double t = [&] {
      const auto start = std::chrono::steady_clock::now();
      thunk();
      const std::chrono::duration<double> sec = std::chrono::steady_clock::now() - start;
      return sec.count();
    }();
    best = std::min(best, t);
  }
  return best;
}

struct EvalRecord {
  std::string model;
  std::string dataset;
  double rho = 0.0;  // NaN when undefined
  double mse = 0.0;
  double total_discount_test = 0.0;
  double total_discount_train = 0.0;
  double train_seconds = 0.0;
  double predict_seconds = 0.0;
};

// Deterministic metric columns; wall-clock columns go to a separate file
// because their bytes never reproduce.
inline void write_summary_csv(const std::vector<EvalRecord>& records,
                              const std::string& path) {
  CsvWriter csv(path);
  csv.header({"dataset", "model", "rho", "mse", "total_discount_test",
              "total_discount_train"});
  for (const auto& r : records)
    csv.row_strings({r.dataset, r.model, fmt_double(r.rho), fmt_double(r.mse),
                     fmt_double(r.total_discount_test),
                     fmt_double(r.total_discount_train)});
}

inline void write_timings_csv(const std::vector<EvalRecord>& records,
                              const std::string& path) {
  CsvWriter csv(path);
  csv.header({"dataset", "model", "train_seconds", "predict_seconds"});
  for (const auto& r : records)
    csv.row_strings({r.dataset, r.model, fmt_double(r.train_seconds),
                     fmt_double(r.predict_seconds)});
}

}  // namespace epiout
