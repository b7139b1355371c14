// Command-line entry point: dataset generation, model training, attack
// campaigns, diversity measurements, and report emission over a result tree.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>

#include "atk/harness.hpp"

namespace {

int stage_exit_code(const std::string& stage) {
  static const std::map<std::string, int> codes = {
      {"config", 2}, {"data", 3}, {"train", 4}, {"attack", 5}, {"report", 6},
  };
  auto it = codes.find(stage);
  return it == codes.end() ? 1 : it->second;
}

struct CommonOpts {
  std::string config_path;
  std::string out_dir = "atk-out";
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::size_t jobs = 0;
};

atk::ExperimentConfig load_config(const CommonOpts& opts) {
  atk::ExperimentConfig cfg = atk::load_experiment_config(opts.config_path);
  if (opts.seed_set) cfg.seed = opts.seed;
  if (opts.jobs > 0) cfg.jobs = opts.jobs;
  return cfg;
}

void add_common(CLI::App* cmd, CommonOpts& opts, bool needs_config = true) {
  auto* c = cmd->add_option("--config", opts.config_path, "experiment config (JSON)");
  if (needs_config) c->required();
  cmd->add_option("--out", opts.out_dir, "output directory");
  cmd->add_option("--seed", opts.seed, "master seed override")->each([&](const std::string&) { opts.seed_set = true; });
  cmd->add_option("--jobs", opts.jobs, "worker threads for per-input attacks");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"output-diversified sampling attack toolkit"};
  app.require_subcommand(1);

  CommonOpts opts;
  auto* cmd_gen = app.add_subcommand("gen-data", "generate the synthetic dataset");
  add_common(cmd_gen, opts);
  auto* cmd_train = app.add_subcommand("train", "generate data and train target/surrogate models");
  add_common(cmd_train, opts);
  auto* cmd_attack = app.add_subcommand("attack", "run the attack suite (includes data/train stages)");
  add_common(cmd_attack, opts);
  auto* cmd_diversity = app.add_subcommand("diversity", "measure start-point and transferred sampling diversity");
  add_common(cmd_diversity, opts);
  auto* cmd_report = app.add_subcommand("report", "rebuild summaries from traces in --out");
  add_common(cmd_report, opts, false);
  auto* cmd_run = app.add_subcommand("run", "full pipeline: data, train, attack, report");
  add_common(cmd_run, opts);

  CLI11_PARSE(app, argc, argv);

  try {
    atk::ResultPaths paths;
    paths.root = opts.out_dir;

    if (cmd_gen->parsed()) {
      atk::ExperimentConfig cfg = load_config(opts);
      atk::stage_dataset(cfg, paths);
      std::cout << "dataset written to " << paths.dataset_file().string() << "\n";
    } else if (cmd_train->parsed()) {
      atk::ExperimentConfig cfg = load_config(opts);
      atk::ExperimentResult result;
      result.paths = paths;
      result.config = cfg;
      result.data = atk::stage_dataset(cfg, paths);
      atk::stage_train(cfg, paths, result);
      std::cout << "models written to " << paths.models_dir().string() << "\n";
    } else if (cmd_attack->parsed()) {
      atk::ExperimentConfig cfg = load_config(opts);
      atk::ExperimentResult result;
      result.paths = paths;
      result.config = cfg;
      result.data = atk::stage_dataset(cfg, paths);
      atk::stage_train(cfg, paths, result);
      atk::stage_attack(cfg, paths, result);
      std::cout << "traces written to " << paths.traces_dir().string() << "\n";
    } else if (cmd_diversity->parsed()) {
      atk::ExperimentConfig cfg = load_config(opts);
      atk::ExperimentResult result;
      result.paths = paths;
      result.config = cfg;
      result.data = atk::stage_dataset(cfg, paths);
      atk::stage_train(cfg, paths, result);
      if (!cfg.adversarial_twin || result.full_surrogates.models.empty())
        throw atk::StageError("config", "diversity needs the adversarial twin and at least one surrogate");
      atk::DiversityReport rep = atk::diversity_experiment(result.target_adversarial,
                                                           result.full_surrogates.models.front(), result.eval_data,
                                                           cfg.diversity, cfg.seed);
      std::filesystem::create_directories(paths.summaries_dir());
      atk::save_diversity_csv(rep, (paths.summaries_dir() / "diversity.csv").string());
      std::cout << "start diversity: odi " << atk::dtos(rep.odi_start_diversity) << " vs uniform "
                << atk::dtos(rep.uniform_start_diversity) << " (ratio " << atk::dtos(rep.start_ratio()) << ")\n";
      std::cout << "transfer diversity: ods " << atk::dtos(rep.ods_transfer_diversity) << " vs gaussian "
                << atk::dtos(rep.gaussian_transfer_diversity) << " (ratio " << atk::dtos(rep.transfer_ratio())
                << ")\n";
    } else if (cmd_report->parsed()) {
      atk::report(paths);
      std::cout << "summaries written to " << paths.summaries_dir().string() << "\n";
    } else if (cmd_run->parsed()) {
      atk::ExperimentConfig cfg = load_config(opts);
      atk::ExperimentResult result = atk::run_experiment(cfg, paths.root);
      std::cout << "pipeline complete; summaries in " << result.paths.summaries_dir().string() << "\n";
    }
  } catch (const atk::StageError& e) {
    std::cerr << "error [stage:" << e.stage << "] " << e.what() << "\n";
    return stage_exit_code(e.stage);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
