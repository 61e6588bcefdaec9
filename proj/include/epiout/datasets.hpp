// Synthetic benchmark datasets and the CSV loader. Generators are pure
// functions of the seed; test inputs are uniform grids over the stated
// ranges (961 points: 1D line or 31 x 31).
#pragma once

#include "epiout/csv.hpp"

#include <filesystem>
#include <numeric>

namespace epiout {

struct Dataset {
  std::string name;
  Matrix x_train, y_train;
  Matrix x_test, y_test;

  int d_x() const { return static_cast<int>(x_train.cols()); }
  int d_p() const { return static_cast<int>(y_train.cols()); }
};

namespace detail {

inline double sine_fn(double x) { return std::sin(M_PI * x); }

// sin(5 x1)/(5 x1) + x2^2, with the sinc singularity removed by continuity.
inline double sinc_bowl_fn(double x1, double x2) {
  const double t = 5.0 * x1;
  const double s = t == 0.0 ? 1.0 : std::sin(t) / t;
  return s + x2 * x2;
}

inline Matrix grid_1d(double lo, double hi, int points) {
  Matrix g(points, 1);
  for (int i = 0; i < points; ++i)
    g(i, 0) = lo + (hi - lo) * static_cast<double>(i) / (points - 1);
  return g;
}

inline Matrix grid_2d(double lo, double hi, int per_side) {
  Matrix g(per_side * per_side, 2);
  int row = 0;
  for (int i = 0; i < per_side; ++i)
    for (int j = 0; j < per_side; ++j, ++row) {
      g(row, 0) = lo + (hi - lo) * static_cast<double>(i) / (per_side - 1);
      g(row, 1) = lo + (hi - lo) * static_cast<double>(j) / (per_side - 1);
    }
  return g;
}

inline Matrix apply_1d(const Matrix& x) {
  Matrix y(x.rows(), 1);
  for (int i = 0; i < x.rows(); ++i) y(i, 0) = sine_fn(x(i, 0));
  return y;
}

inline Matrix apply_2d(const Matrix& x) {
  Matrix y(x.rows(), 1);
  for (int i = 0; i < x.rows(); ++i) y(i, 0) = sinc_bowl_fn(x(i, 0), x(i, 1));
  return y;
}

inline void add_noise(Matrix& y, double noise_std, Rng& rng) {
  if (noise_std <= 0.0) return;
  std::normal_distribution<double> g(0.0, noise_std);
  for (int i = 0; i < y.rows(); ++i)
    for (int j = 0; j < y.cols(); ++j) y(i, j) += g(rng);
}

}  // namespace detail

// 100 training inputs ~ U(-1,1), targets sin(pi x), 961-point test grid
// on [-4,4]. noise_std defaults to 0: the nominal functions are noiseless.
inline Dataset gen_1d_center(std::uint64_t seed, double noise_std = 0.0) {
  Dataset ds;
  ds.name = "1d_center";
  Rng rng(derive_seed(seed, "1d_center"));
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  ds.x_train.resize(100, 1);
  for (int i = 0; i < 100; ++i) ds.x_train(i, 0) = u(rng);
  ds.y_train = detail::apply_1d(ds.x_train);
  detail::add_noise(ds.y_train, noise_std, rng);
  ds.x_test = detail::grid_1d(-4.0, 4.0, 961);
  ds.y_test = detail::apply_1d(ds.x_test);
  return ds;
}

// Two clusters of 100 inputs each, U(-2,-1) and U(1,2); the gap in between
// carries no data at all.
inline Dataset gen_1d_split(std::uint64_t seed, double noise_std = 0.0) {
  Dataset ds;
  ds.name = "1d_split";
  Rng rng(derive_seed(seed, "1d_split"));
  std::uniform_real_distribution<double> left(-2.0, -1.0), right(1.0, 2.0);
  ds.x_train.resize(200, 1);
  for (int i = 0; i < 100; ++i) ds.x_train(i, 0) = left(rng);
  for (int i = 100; i < 200; ++i) ds.x_train(i, 0) = right(rng);
  ds.y_train = detail::apply_1d(ds.x_train);
  detail::add_noise(ds.y_train, noise_std, rng);
  ds.x_test = detail::grid_1d(-4.0, 4.0, 961);
  ds.y_test = detail::apply_1d(ds.x_test);
  return ds;
}

// Two Gaussian blobs of 500 points at (-1,0) and (1,0) with covariance
// diag(0.02, 0.1); test grid 31 x 31 over [-2,2]^2.
inline Dataset gen_2d_gaussian(std::uint64_t seed, double noise_std = 0.0) {
  Dataset ds;
  ds.name = "2d_gaussian";
  Rng rng(derive_seed(seed, "2d_gaussian"));
  std::normal_distribution<double> g1(0.0, std::sqrt(0.02)), g2(0.0, std::sqrt(0.1));
  ds.x_train.resize(1000, 2);
  for (int i = 0; i < 1000; ++i) {
    const double cx = i < 500 ? -1.0 : 1.0;
    ds.x_train(i, 0) = cx + g1(rng);
    ds.x_train(i, 1) = g2(rng);
  }
  ds.y_train = detail::apply_2d(ds.x_train);
  detail::add_noise(ds.y_train, noise_std, rng);
  ds.x_test = detail::grid_2d(-2.0, 2.0, 31);
  ds.y_test = detail::apply_2d(ds.x_test);
  return ds;
}

// 80 training points spaced uniformly along the boundary of [-1,1]^2,
// walked counterclockwise from (-1,-1). Fully deterministic.
inline Dataset gen_2d_square(double noise_std = 0.0, std::uint64_t seed = 0) {
  Dataset ds;
  ds.name = "2d_square";
  ds.x_train.resize(80, 2);
  for (int i = 0; i < 80; ++i) {
    const double s = 0.1 * i;  // perimeter 8, spacing 0.1
    double x1, x2;
    if (s < 2.0) {
      x1 = -1.0 + s;
      x2 = -1.0;
    } else if (s < 4.0) {
      x1 = 1.0;
      x2 = -1.0 + (s - 2.0);
    } else if (s < 6.0) {
      x1 = 1.0 - (s - 4.0);
      x2 = 1.0;
    } else {
      x1 = -1.0;
      x2 = 1.0 - (s - 6.0);
    }
    ds.x_train(i, 0) = x1;
    ds.x_train(i, 1) = x2;
  }
  ds.y_train = detail::apply_2d(ds.x_train);
  Rng rng(derive_seed(seed, "2d_square"));
  detail::add_noise(ds.y_train, noise_std, rng);
  ds.x_test = detail::grid_2d(-2.0, 2.0, 31);
  ds.y_test = detail::apply_2d(ds.x_test);
  return ds;
}

struct CsvLoadSpec {
  std::string path;
  std::vector<std::string> input_columns;  // named explicitly, no guessing
  std::string target_column;
  int n_train = 0;
  int n_test = 0;
  std::uint64_t seed = 0;
};

// Seeded subsample without replacement into disjoint train/test splits.
inline Dataset load_csv(const CsvLoadSpec& spec) {
  require(!spec.input_columns.empty(), "load_csv: input columns required");
  require(spec.n_train >= 1 && spec.n_test >= 0, "load_csv: bad split sizes");
  CsvTable table = read_csv(spec.path);
  const int rows = static_cast<int>(table.rows.size());
  require(spec.n_train + spec.n_test <= rows,
          "load_csv: split larger than available rows");
  std::vector<int> in_cols;
  for (const auto& name : spec.input_columns) in_cols.push_back(table.column_index(name));
  const int target = table.column_index(spec.target_column);

  std::vector<int> order(rows);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(spec.seed, "load_csv"));
  std::shuffle(order.begin(), order.end(), rng);

  Dataset ds;
  ds.name = std::filesystem::path(spec.path).stem().string();
  const int d = static_cast<int>(in_cols.size());
  ds.x_train.resize(spec.n_train, d);
  ds.y_train.resize(spec.n_train, 1);
  ds.x_test.resize(spec.n_test, d);
  ds.y_test.resize(spec.n_test, 1);
  auto cell = [&](int row, int col) {
    return parse_double_cell(table.rows[row][col], spec.path);
  };
  for (int i = 0; i < spec.n_train; ++i) {
    for (int k = 0; k < d; ++k) ds.x_train(i, k) = cell(order[i], in_cols[k]);
    ds.y_train(i, 0) = cell(order[i], target);
  }
  for (int i = 0; i < spec.n_test; ++i) {
    for (int k = 0; k < d; ++k) ds.x_test(i, k) = cell(order[spec.n_train + i], in_cols[k]);
    ds.y_test(i, 0) = cell(order[spec.n_train + i], target);
  }
  return ds;
}

inline void write_dataset_csv(const Matrix& x, const Matrix& y, const std::string& path) {
  CsvWriter csv(path);
  std::vector<std::string> cols;
  for (int k = 0; k < x.cols(); ++k) cols.push_back("x" + std::to_string(k + 1));
  for (int k = 0; k < y.cols(); ++k) cols.push_back("y" + std::to_string(k + 1));
  csv.header(cols);
  for (int i = 0; i < x.rows(); ++i) {
    std::vector<double> row;
    for (int k = 0; k < x.cols(); ++k) row.push_back(x(i, k));
    for (int k = 0; k < y.cols(); ++k) row.push_back(y(i, k));
    csv.row(row);
  }
}

}  // namespace epiout
