// epiout: uncertainty-aware regression benchmarks and the online-learning
// quadcopter simulation.
//
//   epiout bench    --datasets 1d_center,1d_split --models epiout,dropout
//   epiout simulate --beta 2 --dmodel on
//   epiout gen-data --datasets 2d_square --out-dir results
//
// Exit codes: 0 success, 1 usage error, 2 runtime error.

#include "epiout/runner.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <optional>

namespace {

struct FlagOverrides {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<std::string> datasets;
  std::optional<std::string> models;
  std::optional<double> beta;
  std::optional<std::string> dmodel;
};

epiout::RunConfig resolve(const FlagOverrides& flags, const std::string& command) {
  epiout::RunConfig cfg;
  if (!flags.config_path.empty()) cfg = epiout::load_config_file(flags.config_path);
  if (flags.seed) cfg.global.seed = *flags.seed;
  if (flags.out_dir) cfg.global.out_dir = *flags.out_dir;
  if (flags.datasets) {
    epiout::apply_config_entry(cfg, "bench", "datasets", *flags.datasets);
    epiout::apply_config_entry(cfg, "gen_data", "datasets", *flags.datasets);
  }
  if (flags.models) epiout::apply_config_entry(cfg, "bench", "models", *flags.models);
  if (flags.beta)
    epiout::apply_config_entry(cfg, "simulate", "beta", epiout::fmt_double(*flags.beta));
  if (flags.dmodel) epiout::apply_config_entry(cfg, "simulate", "dmodel", *flags.dmodel);
  (void)command;
  return cfg;
}

void add_common_flags(CLI::App* cmd, FlagOverrides& flags) {
  cmd->add_option("--config", flags.config_path, "sectioned key=value config file");
  cmd->add_option("--seed", flags.seed, "global RNG seed");
  cmd->add_option("--out-dir", flags.out_dir, "output directory");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"uncertainty-aware regression toolkit"};
  app.require_subcommand(1);

  FlagOverrides flags;
  CLI::App* bench = app.add_subcommand("bench", "model-by-dataset benchmark grid");
  add_common_flags(bench, flags);
  bench->add_option("--datasets", flags.datasets, "comma-separated dataset list");
  bench->add_option("--models", flags.models, "comma-separated model list");

  CLI::App* simulate = app.add_subcommand("simulate", "online-learning quadcopter run");
  add_common_flags(simulate, flags);
  simulate->add_option("--beta", flags.beta, "aleatoric gain sensitivity");
  simulate->add_option("--dmodel", flags.dmodel, "disturbance model on|off")
      ->check(CLI::IsMember({"on", "off"}));

  CLI::App* gen = app.add_subcommand("gen-data", "write dataset CSVs");
  add_common_flags(gen, flags);
  gen->add_option("--datasets", flags.datasets, "comma-separated dataset list");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (bench->parsed()) {
      epiout::RunConfig cfg = resolve(flags, "bench");
      epiout::BenchOutcome outcome = epiout::cmd_bench(cfg);
      for (const auto& err : outcome.errors) std::cerr << "cell failed: " << err << "\n";
      if (outcome.all_failed) {
        std::cerr << "bench: every cell failed\n";
        return 2;
      }
    } else if (simulate->parsed()) {
      epiout::cmd_simulate(resolve(flags, "simulate"));
    } else if (gen->parsed()) {
      epiout::cmd_gen_data(resolve(flags, "gen-data"));
    }
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
