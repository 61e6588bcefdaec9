// Command implementations behind the CLI: the model-by-dataset benchmark
// grid, the online-learning quadcopter runs and the dataset dumps. Every
// command resolves its configuration, writes a config_resolved.ini snapshot
// next to its outputs and emits CSV only.
#pragma once

#include "epiout/baselines.hpp"
#include "epiout/control_sim.hpp"
#include "epiout/datasets.hpp"
#include "epiout/metrics.hpp"

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

namespace epiout {

struct GlobalConfig {
  std::uint64_t seed = 0;
  std::string out_dir = "results";
};

struct BenchConfig {
  std::vector<std::string> datasets = {"1d_center", "1d_split", "2d_gaussian",
                                       "2d_square"};
  std::vector<std::string> models = {"gp", "dropout", "epiout"};
  double noise_std = 0.0;
  int epochs = 2000;
  int batch_size = 0;
  double learning_rate = 1e-3;
  double lambda_epi = 1.0;
  int delta = 2;       // Gamma = I, delta = 2 mirrors the benchmark recipe
  double gamma = 1.0;
  double dropout_probability = 0.05;
  int dropout_samples = 50;
  int gp_restarts = 3;
  int gp_steps = 500;
  int gp_max_points = 5000;
};

struct SimulateConfig {
  sim::ControllerConfig controller;
  bool dmodel_on = true;
};

struct GenDataConfig {
  std::vector<std::string> datasets = {"1d_center", "1d_split", "2d_gaussian",
                                       "2d_square"};
  double noise_std = 0.0;
};

struct RunConfig {
  GlobalConfig global;
  BenchConfig bench;
  SimulateConfig simulate;
  GenDataConfig gen_data;
  std::map<std::string, CsvLoadSpec> csv_datasets;  // addressable as csv:<name>
};

// --- sectioned key=value config ------------------------------------------

namespace detail {

inline std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!trim(cur).empty() || !out.empty()) out.push_back(trim(cur));
  return out;
}

inline std::string join_list(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += ",";
    out += items[i];
  }
  return out;
}

inline double to_double(const std::string& v, const std::string& key) {
  return parse_double_cell(v, "config key " + key);
}

inline int to_int(const std::string& v, const std::string& key) {
  const double d = to_double(v, key);
  const int i = static_cast<int>(d);
  require(d == i, "config key " + key + " must be an integer");
  return i;
}

inline std::uint64_t to_u64(const std::string& v, const std::string& key) {
  try {
    return std::stoull(v);
  } catch (const std::exception&) {
    throw std::invalid_argument("config key " + key + " must be a non-negative integer");
  }
}

inline bool to_onoff(const std::string& v, const std::string& key) {
  if (v == "on") return true;
  if (v == "off") return false;
  throw std::invalid_argument("config key " + key + " must be on or off");
}

}  // namespace detail

inline void apply_config_entry(RunConfig& cfg, const std::string& section,
                               const std::string& key, const std::string& value) {
  using detail::to_double;
  using detail::to_int;
  using detail::to_onoff;
  using detail::to_u64;
  auto unknown = [&]() -> std::invalid_argument {
    return std::invalid_argument("unknown config entry [" + section + "] " + key);
  };
  if (section == "global") {
    if (key == "seed") cfg.global.seed = to_u64(value, key);
    else if (key == "out_dir") cfg.global.out_dir = value;
    else throw unknown();
  } else if (section == "bench") {
    auto& b = cfg.bench;
    if (key == "datasets") b.datasets = detail::split_list(value);
    else if (key == "models") b.models = detail::split_list(value);
    else if (key == "noise_std") b.noise_std = to_double(value, key);
    else if (key == "epochs") b.epochs = to_int(value, key);
    else if (key == "batch_size") b.batch_size = to_int(value, key);
    else if (key == "learning_rate") b.learning_rate = to_double(value, key);
    else if (key == "lambda_epi") b.lambda_epi = to_double(value, key);
    else if (key == "delta") b.delta = to_int(value, key);
    else if (key == "gamma") b.gamma = to_double(value, key);
    else if (key == "dropout_probability") b.dropout_probability = to_double(value, key);
    else if (key == "dropout_samples") b.dropout_samples = to_int(value, key);
    else if (key == "gp_restarts") b.gp_restarts = to_int(value, key);
    else if (key == "gp_steps") b.gp_steps = to_int(value, key);
    else if (key == "gp_max_points") b.gp_max_points = to_int(value, key);
    else throw unknown();
  } else if (section == "simulate") {
    auto& s = cfg.simulate;
    if (key == "laps") s.controller.laps = to_int(value, key);
    else if (key == "steps_per_lap") s.controller.steps_per_lap = to_int(value, key);
    else if (key == "dt") s.controller.dt = to_double(value, key);
    else if (key == "edge") s.controller.edge = to_double(value, key);
    else if (key == "k_bar") s.controller.k_bar = to_double(value, key);
    else if (key == "beta") s.controller.beta = to_double(value, key);
    else if (key == "retrain_epochs") s.controller.retrain_epochs = to_int(value, key);
    else if (key == "retrain_learning_rate")
      s.controller.retrain_learning_rate = to_double(value, key);
    else if (key == "lambda_epi") s.controller.lambda_epi = to_double(value, key);
    else if (key == "gamma") s.controller.gamma = to_double(value, key);
    else if (key == "delta") s.controller.delta = to_int(value, key);
    else if (key == "gain_scale") {
      if (value == "variance") s.controller.gain_on_stddev = false;
      else if (value == "stddev") s.controller.gain_on_stddev = true;
      else throw std::invalid_argument("gain_scale must be variance or stddev");
    } else if (key == "max_gain_scale")
      s.controller.max_gain_scale = to_double(value, key);
    else if (key == "divergence_limit")
      s.controller.divergence_limit = to_double(value, key);
    else if (key == "dmodel") s.dmodel_on = to_onoff(value, key);
    else throw unknown();
  } else if (section == "gen_data") {
    if (key == "datasets") cfg.gen_data.datasets = detail::split_list(value);
    else if (key == "noise_std") cfg.gen_data.noise_std = to_double(value, key);
    else throw unknown();
  } else if (section.rfind("csv:", 0) == 0) {
    auto& spec = cfg.csv_datasets[section.substr(4)];
    if (key == "path") spec.path = value;
    else if (key == "input_columns") spec.input_columns = detail::split_list(value);
    else if (key == "target_column") spec.target_column = value;
    else if (key == "n_train") spec.n_train = to_int(value, key);
    else if (key == "n_test") spec.n_test = to_int(value, key);
    else if (key == "seed") spec.seed = to_u64(value, key);
    else throw unknown();
  } else {
    throw std::invalid_argument("unknown config section [" + section + "]");
  }
}

inline RunConfig load_config_file(const std::string& path, RunConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config file: " + path);
  std::string line, section;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    if (t.front() == '[' && t.back() == ']') {
      section = detail::trim(t.substr(1, t.size() - 2));
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos || section.empty())
      throw std::invalid_argument(path + ":" + std::to_string(lineno) +
                                  ": expected key = value inside a section");
    apply_config_entry(base, section, detail::trim(t.substr(0, eq)),
                       detail::trim(t.substr(eq + 1)));
  }
  return base;
}

inline std::string config_to_string(const RunConfig& cfg) {
  std::ostringstream out;
  out << "[global]\n";
  out << "seed = " << cfg.global.seed << "\n";
  out << "out_dir = " << cfg.global.out_dir << "\n";
  out << "\n[bench]\n";
  const auto& b = cfg.bench;
  out << "datasets = " << detail::join_list(b.datasets) << "\n";
  out << "models = " << detail::join_list(b.models) << "\n";
  out << "noise_std = " << fmt_double(b.noise_std) << "\n";
  out << "epochs = " << b.epochs << "\n";
  out << "batch_size = " << b.batch_size << "\n";
  out << "learning_rate = " << fmt_double(b.learning_rate) << "\n";
  out << "lambda_epi = " << fmt_double(b.lambda_epi) << "\n";
  out << "delta = " << b.delta << "\n";
  out << "gamma = " << fmt_double(b.gamma) << "\n";
  out << "dropout_probability = " << fmt_double(b.dropout_probability) << "\n";
  out << "dropout_samples = " << b.dropout_samples << "\n";
  out << "gp_restarts = " << b.gp_restarts << "\n";
  out << "gp_steps = " << b.gp_steps << "\n";
  out << "gp_max_points = " << b.gp_max_points << "\n";
  out << "\n[simulate]\n";
  const auto& c = cfg.simulate.controller;
  out << "laps = " << c.laps << "\n";
  out << "steps_per_lap = " << c.steps_per_lap << "\n";
  out << "dt = " << fmt_double(c.dt) << "\n";
  out << "edge = " << fmt_double(c.edge) << "\n";
  out << "k_bar = " << fmt_double(c.k_bar) << "\n";
  out << "beta = " << fmt_double(c.beta) << "\n";
  out << "retrain_epochs = " << c.retrain_epochs << "\n";
  out << "retrain_learning_rate = " << fmt_double(c.retrain_learning_rate) << "\n";
  out << "lambda_epi = " << fmt_double(c.lambda_epi) << "\n";
  out << "gamma = " << fmt_double(c.gamma) << "\n";
  out << "delta = " << c.delta << "\n";
  out << "gain_scale = " << (c.gain_on_stddev ? "stddev" : "variance") << "\n";
  out << "max_gain_scale = " << fmt_double(c.max_gain_scale) << "\n";
  out << "divergence_limit = " << fmt_double(c.divergence_limit) << "\n";
  out << "dmodel = " << (cfg.simulate.dmodel_on ? "on" : "off") << "\n";
  out << "\n[gen_data]\n";
  out << "datasets = " << detail::join_list(cfg.gen_data.datasets) << "\n";
  out << "noise_std = " << fmt_double(cfg.gen_data.noise_std) << "\n";
  for (const auto& [name, spec] : cfg.csv_datasets) {
    out << "\n[csv:" << name << "]\n";
    out << "path = " << spec.path << "\n";
    out << "input_columns = " << detail::join_list(spec.input_columns) << "\n";
    out << "target_column = " << spec.target_column << "\n";
    out << "n_train = " << spec.n_train << "\n";
    out << "n_test = " << spec.n_test << "\n";
    out << "seed = " << spec.seed << "\n";
  }
  return out.str();
}

inline void write_config_resolved(const RunConfig& cfg, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  std::ofstream out(std::filesystem::path(out_dir) / "config_resolved.ini");
  if (!out) throw std::runtime_error("cannot write config_resolved.ini in " + out_dir);
  out << config_to_string(cfg);
}

// --- datasets --------------------------------------------------------------

inline Dataset make_dataset(const std::string& name, const RunConfig& cfg,
                            double noise_std) {
  const std::uint64_t seed = derive_seed(cfg.global.seed, "data:" + name);
  if (name == "1d_center") return gen_1d_center(seed, noise_std);
  if (name == "1d_split") return gen_1d_split(seed, noise_std);
  if (name == "2d_gaussian") return gen_2d_gaussian(seed, noise_std);
  if (name == "2d_square") return gen_2d_square(noise_std, seed);
  if (name.rfind("csv:", 0) == 0) {
    const auto it = cfg.csv_datasets.find(name.substr(4));
    require(it != cfg.csv_datasets.end(),
            "dataset " + name + " has no [csv:...] config section");
    CsvLoadSpec spec = it->second;
    spec.seed = derive_seed(seed, "subsample");
    Dataset ds = load_csv(spec);
    ds.name = name.substr(4);
    return ds;
  }
  throw std::invalid_argument("unknown dataset: " + name);
}

// --- bench ------------------------------------------------------------------

namespace detail {

struct CellResult {
  EvalRecord record;
  bool failed = false;
  std::string error;
};

inline void write_per_point_csv(const std::string& path, const Dataset& ds,
                                const std::vector<double>& predictions,
                                const std::vector<double>& etas) {
  CsvWriter csv(path);
  std::vector<std::string> cols;
  for (int k = 0; k < ds.d_x(); ++k) cols.push_back("x" + std::to_string(k + 1));
  cols.push_back("target");
  cols.push_back("prediction");
  cols.push_back("eta");
  csv.header(cols);
  for (int i = 0; i < ds.x_test.rows(); ++i) {
    std::vector<double> row;
    for (int k = 0; k < ds.d_x(); ++k) row.push_back(ds.x_test(i, k));
    row.push_back(ds.y_test(i, 0));
    row.push_back(predictions[i]);
    row.push_back(etas[i]);
    csv.row(row);
  }
}

inline CellResult run_bench_cell(const RunConfig& cfg, const std::string& dataset_name,
                                 const std::string& model_name) {
  CellResult cell;
  cell.record.dataset = dataset_name;
  cell.record.model = model_name;
  const auto& b = cfg.bench;
  try {
    Dataset ds = make_dataset(dataset_name, cfg, b.noise_std);
    require(ds.d_p() == 1, "bench expects scalar targets");
    const std::uint64_t cell_seed =
        derive_seed(cfg.global.seed, "cell:" + dataset_name + ":" + model_name);
    const int n_test = static_cast<int>(ds.x_test.rows());
    std::vector<double> targets(n_test);
    for (int i = 0; i < n_test; ++i) targets[i] = ds.y_test(i, 0);
    std::vector<double> predictions(n_test), etas(n_test);
    std::vector<double> etas_train;

    if (model_name == "epiout") {
      SamplerConfig sc;
      sc.gamma = Vector::Constant(ds.d_x(), b.gamma);
      sc.delta = b.delta;
      sc.seed = derive_seed(cell_seed, "sampler");
      EpiSampler sampler(sc);
      NetworkParams params =
          make_network(ds.d_x(), {50, 50}, 1, false, derive_seed(cell_seed, "net"));
      AdamState adam = AdamState::zeros_like(params);
      TrainConfig tc;
      tc.epochs = b.epochs;
      tc.batch_size = b.batch_size;
      tc.learning_rate = b.learning_rate;
      tc.lambda_epi = b.lambda_epi;
      tc.seed = derive_seed(cell_seed, "train");
      cell.record.train_seconds = timed([&] {
        sampler.build(ds.x_train);
        train(params, ds.x_train, ds.y_train, sampler.set().inputs,
              sampler.set().labels_vector(), tc, adam);
      });
      cell.record.predict_seconds = timed([&] {
        for (int i = 0; i < n_test; ++i) {
          HeadOutputs h = forward(params, ds.x_test.row(i).transpose());
          predictions[i] = h.mean(0);
          etas[i] = h.eta;
        }
      });
      etas_train.resize(ds.x_train.rows());
      for (int i = 0; i < ds.x_train.rows(); ++i)
        etas_train[i] = forward(params, ds.x_train.row(i).transpose()).eta;
    } else if (model_name == "dropout") {
      NetworkParams params =
          make_network(ds.d_x(), {50, 50}, 1, false, derive_seed(cell_seed, "net"));
      AdamState adam = AdamState::zeros_like(params);
      TrainConfig tc;
      tc.epochs = b.epochs;
      tc.batch_size = b.batch_size;
      tc.learning_rate = b.learning_rate;
      tc.lambda_epi = 0.0;
      tc.dropout_probability = b.dropout_probability;
      tc.seed = derive_seed(cell_seed, "train");
      cell.record.train_seconds = timed(
          [&] { train(params, ds.x_train, ds.y_train, Matrix(0, ds.d_x()), Vector(0), tc, adam); });
      DropoutModel model{params, b.dropout_probability, b.dropout_samples};
      std::vector<double> variances(n_test);
      cell.record.predict_seconds = timed([&] {
        for (int i = 0; i < n_test; ++i) {
          DropoutPrediction p = dropout_predict(model, ds.x_test.row(i).transpose(),
                                                derive_seed(cell_seed, "mc" + std::to_string(i)));
          predictions[i] = p.mean(0);
          variances[i] = p.total_variance();
        }
      });
      etas = normalize_uncertainty(variances);
      std::vector<double> train_vars(ds.x_train.rows());
      for (int i = 0; i < ds.x_train.rows(); ++i)
        train_vars[i] = dropout_predict(model, ds.x_train.row(i).transpose(),
                                        derive_seed(cell_seed, "mc_tr" + std::to_string(i)))
                            .total_variance();
      etas_train = rescale_with(variances, train_vars);
    } else if (model_name == "gp") {
      GpFitOptions opts;
      opts.restarts = b.gp_restarts;
      opts.adam_steps = b.gp_steps;
      opts.max_points = b.gp_max_points;
      Vector y = ds.y_train.col(0);
      auto [model, fit_seconds] = timed(
          [&] { return gp_fit(ds.x_train, y, b.gp_restarts, derive_seed(cell_seed, "gp"), opts); });
      cell.record.train_seconds = fit_seconds;
      std::vector<double> variances(n_test);
      cell.record.predict_seconds = timed([&] {
        for (int i = 0; i < n_test; ++i) {
          auto [mean, var] = model.predict(ds.x_test.row(i).transpose());
          predictions[i] = mean;
          variances[i] = var;
        }
      });
      etas = normalize_uncertainty(variances);
      std::vector<double> train_vars(ds.x_train.rows());
      for (int i = 0; i < ds.x_train.rows(); ++i)
        train_vars[i] = model.predict(ds.x_train.row(i).transpose()).second;
      etas_train = rescale_with(variances, train_vars);
    } else {
      throw std::invalid_argument("unknown model: " + model_name);
    }

    cell.record.mse = plain_mse(predictions, targets);
    try {
      cell.record.rho = weighted_mse(predictions, targets, etas);
    } catch (const UndefinedMetricError&) {
      cell.record.rho = std::numeric_limits<double>::quiet_NaN();
    }
    cell.record.total_discount_test = total_discount(etas);
    cell.record.total_discount_train = total_discount(etas_train);
    std::filesystem::create_directories(cfg.global.out_dir);
    std::string stem = dataset_name + "_" + model_name;
    std::replace(stem.begin(), stem.end(), ':', '_');
    write_per_point_csv(
        (std::filesystem::path(cfg.global.out_dir) / (stem + ".csv")).string(), ds,
        predictions, etas);
  } catch (const std::exception& e) {
    cell.failed = true;
    cell.error = e.what();
    cell.record.rho = std::numeric_limits<double>::quiet_NaN();
    cell.record.mse = std::numeric_limits<double>::quiet_NaN();
  }
  return cell;
}

inline int env_thread_cap() {
  const char* env = std::getenv("EPIOUT_THREADS");
  if (!env) return 1;
  const int n = std::atoi(env);
  return n >= 1 ? n : 1;
}

}  // namespace detail

struct BenchOutcome {
  std::vector<EvalRecord> records;
  std::vector<std::string> errors;
  bool all_failed = false;
};

// Trains every requested model on every requested dataset. Cells run in
// parallel up to the EPIOUT_THREADS cap; outputs do not depend on the
// thread count.
inline BenchOutcome cmd_bench(const RunConfig& cfg) {
  write_config_resolved(cfg, cfg.global.out_dir);
  struct Cell {
    std::string dataset, model;
  };
  std::vector<Cell> cells;
  for (const auto& ds : cfg.bench.datasets)
    for (const auto& model : cfg.bench.models) cells.push_back({ds, model});
  require(!cells.empty(), "bench: no dataset/model cells requested");

  std::vector<detail::CellResult> results(cells.size());
  std::atomic<std::size_t> next{0};
  const int workers = std::min<int>(detail::env_thread_cap(),
                                    static_cast<int>(cells.size()));
  auto work = [&] {
    for (std::size_t i = next.fetch_add(1); i < cells.size(); i = next.fetch_add(1))
      results[i] = detail::run_bench_cell(cfg, cells[i].dataset, cells[i].model);
  };
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }

  BenchOutcome outcome;
  outcome.all_failed = true;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    outcome.records.push_back(results[i].record);
    if (results[i].failed)
      outcome.errors.push_back(cells[i].dataset + "/" + cells[i].model + ": " +
                               results[i].error);
    else
      outcome.all_failed = false;
  }
  const auto out = std::filesystem::path(cfg.global.out_dir);
  write_summary_csv(outcome.records, (out / "summary.csv").string());
  write_timings_csv(outcome.records, (out / "timings.csv").string());
  return outcome;
}

// Runs one episode with the configured controller; model on or off per the
// dmodel switch.
inline void cmd_simulate(const RunConfig& cfg) {
  write_config_resolved(cfg, cfg.global.out_dir);
  sim::ControllerConfig controller = cfg.simulate.controller;
  controller.seed = derive_seed(cfg.global.seed, "simulate");
  const sim::ThermalField field = sim::default_thermal_field();
  sim::OnlineDisturbanceModel model(controller);
  sim::SimLog log = sim::run_episode(controller, field, cfg.simulate.dmodel_on, &model);
  const auto out = std::filesystem::path(cfg.global.out_dir);
  sim::write_simulation_csv(log, (out / "simulation.csv").string());
  sim::write_dmodel_csv(model, field, (out / "dmodel.csv").string());
}

// Writes <name>_train.csv / <name>_test.csv for each requested dataset.
inline void cmd_gen_data(const RunConfig& cfg) {
  write_config_resolved(cfg, cfg.global.out_dir);
  const auto out = std::filesystem::path(cfg.global.out_dir);
  for (const auto& name : cfg.gen_data.datasets) {
    Dataset ds = make_dataset(name, cfg, cfg.gen_data.noise_std);
    write_dataset_csv(ds.x_train, ds.y_train, (out / (ds.name + "_train.csv")).string());
    write_dataset_csv(ds.x_test, ds.y_test, (out / (ds.name + "_test.csv")).string());
  }
}

}  // namespace epiout
