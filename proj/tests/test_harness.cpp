#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <map>

#include "atk/harness.hpp"

using namespace atk;
namespace fs = std::filesystem;

namespace {

json tiny_config_json() {
  return json::parse(R"({
    "seed": 11,
    "dataset": {"dims": 8, "classes": 4, "per_class": 40, "sigma": 0.07, "separation": 0.4},
    "eval_classes": 2,
    "eval_max_inputs": 8,
    "target": {"hidden": [12], "train": {"epochs": 20, "optimizer": "adam", "schedule": 0.003}},
    "adversarial_twin": true,
    "adversarial_train": {"epsilon": 0.06, "eta": 0.02, "steps": 4},
    "surrogates": [
      {"hidden": [10], "train": {"epochs": 20}},
      {"hidden": [16], "train": {"epochs": 20}}
    ],
    "ood_surrogates": {"count": 1, "hidden": [12], "train": {"epochs": 20}},
    "attacks": [
      {"name": "pgd-naive", "family": "pgd", "target": "adversarial",
       "epsilon": 0.08, "eta": 0.02, "steps": 4, "restarts": 3, "max_inputs": 6},
      {"name": "simba-pixel", "family": "simba", "target": "natural",
       "sampler": "pixel", "step": 0.15, "budget": 400, "max_inputs": 6},
      {"name": "boundary-gauss", "family": "boundary", "target": "natural",
       "sampler": "gaussian", "budget": 250, "report_budgets": [100, 250], "max_inputs": 4}
    ]
  })");
}

std::map<std::string, std::string> read_tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (!entry.is_regular_file()) continue;
    std::ifstream in(entry.path(), std::ios::binary);
    std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    out[fs::relative(entry.path(), root).string()] = std::move(content);
  }
  return out;
}

fs::path fresh_dir(const char* tag) {
  fs::path p = fs::temp_directory_path() / (std::string("atk_harness_") + tag);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("experiment config parsing picks up every section") {
  ExperimentConfig cfg = parse_experiment_config(tiny_config_json());
  CHECK(cfg.seed == 11);
  CHECK(cfg.dataset.dims == 8);
  CHECK(cfg.dataset.classes == 4);
  CHECK(cfg.effective_eval_classes() == 2);
  CHECK(cfg.target.hidden == std::vector<std::size_t>{12});
  CHECK(cfg.surrogates.size() == 2);
  CHECK(cfg.ood_count == 1);
  REQUIRE(cfg.attacks.size() == 3);
  CHECK(cfg.attacks[0].family == "pgd");
  CHECK(cfg.attacks[0].pgd.restarts == 3);
  CHECK(cfg.attacks[1].simba_step == 0.15);
  CHECK(cfg.attacks[2].report_budgets == std::vector<std::size_t>{100, 250});
}

TEST_CASE("config errors are tagged with the config stage") {
  json bad = tiny_config_json();
  bad["eval_classes"] = 9;  // exceeds dataset classes
  try {
    parse_experiment_config(bad);
    FAIL("expected a StageError");
  } catch (const StageError& e) {
    CHECK(e.stage == "config");
  }

  json bad2 = tiny_config_json();
  bad2["attacks"][0]["family"] = "warp";
  CHECK_THROWS_AS(parse_experiment_config(bad2), StageError);

  json bad3 = tiny_config_json();
  bad3["eval_classes"] = 4;  // leaves no classes for ood surrogates
  CHECK_THROWS_AS(parse_experiment_config(bad3), StageError);
}

TEST_CASE("full pipeline produces the result tree") {
  ExperimentConfig cfg = parse_experiment_config(tiny_config_json());
  fs::path dir = fresh_dir("tree");
  ExperimentResult result = run_experiment(cfg, dir);

  CHECK(fs::exists(result.paths.dataset_file()));
  CHECK(fs::exists(result.paths.models_dir() / "target_natural.model"));
  CHECK(fs::exists(result.paths.models_dir() / "target_adversarial.model"));
  CHECK(fs::exists(result.paths.models_dir() / "surrogate_full_0.model"));
  CHECK(fs::exists(result.paths.models_dir() / "surrogate_ood_0.model"));
  CHECK(fs::exists(result.paths.traces_dir() / "pgd-naive_final.csv"));
  CHECK(fs::exists(result.paths.traces_dir() / "simba-pixel_steps.csv"));
  CHECK(fs::exists(result.paths.summaries_dir() / "summary.csv"));
  CHECK(fs::exists(result.paths.summaries_dir() / "report.txt"));

  // summaries keyed by attack name
  CHECK(result.summaries.count("pgd-naive") == 1);
  CHECK(result.summaries.count("simba-pixel") == 1);
  CHECK(result.summaries.count("boundary-gauss") == 1);
  CHECK(result.summaries["boundary-gauss"].success_rate == 1.0);

  // models load back and evaluate
  MlpClassifier target = load_model((result.paths.models_dir() / "target_natural.model").string());
  CHECK(accuracy(target, result.eval_data.test_x, result.eval_data.test_y) > 0.8);

  fs::remove_all(dir);
}

TEST_CASE("ood surrogates train on a disjoint class slice") {
  ExperimentConfig cfg = parse_experiment_config(tiny_config_json());
  cfg.attacks.clear();
  fs::path dir = fresh_dir("ood");
  ExperimentResult result = run_experiment(cfg, dir);
  REQUIRE(result.ood_surrogates.models.size() == 1);
  CHECK(result.ood_surrogates.models[0].num_classes() == 2);
  CHECK(result.ood_surrogates.models[0].input_dim() == 8);
  fs::remove_all(dir);
}

TEST_CASE("empty attack suite still yields models and header-only summaries") {
  ExperimentConfig cfg = parse_experiment_config(tiny_config_json());
  cfg.attacks.clear();
  fs::path dir = fresh_dir("empty");
  ExperimentResult result = run_experiment(cfg, dir);
  CHECK(result.summaries.empty());
  std::ifstream in(result.paths.summaries_dir() / "summary.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header == "method,family,inputs,success_rate,avg_queries_on_success,median_l2,failures");
  std::string rest;
  std::getline(in, rest);
  CHECK(rest.empty());
  fs::remove_all(dir);
}

TEST_CASE("pipeline is bit-identical across two runs") {
  ExperimentConfig cfg = parse_experiment_config(tiny_config_json());
  fs::path da = fresh_dir("det_a"), db = fresh_dir("det_b");
  run_experiment(cfg, da);
  run_experiment(cfg, db);
  auto ta = read_tree(da), tb = read_tree(db);
  REQUIRE(ta.size() == tb.size());
  for (const auto& [rel, content] : ta) {
    INFO("file " << rel);
    REQUIRE(tb.count(rel) == 1);
    CHECK(content == tb[rel]);
  }
  fs::remove_all(da);
  fs::remove_all(db);
}

TEST_CASE("parallel attack execution matches sequential output") {
  ExperimentConfig cfg = parse_experiment_config(tiny_config_json());
  fs::path ds = fresh_dir("seq"), dp = fresh_dir("par");
  cfg.jobs = 1;
  run_experiment(cfg, ds);
  cfg.jobs = 4;
  run_experiment(cfg, dp);
  auto ts = read_tree(ds), tp = read_tree(dp);
  REQUIRE(ts.size() == tp.size());
  for (const auto& [rel, content] : ts) {
    INFO("file " << rel);
    CHECK(content == tp[rel]);
  }
  fs::remove_all(ds);
  fs::remove_all(dp);
}

TEST_CASE("report is idempotent over an existing tree") {
  ExperimentConfig cfg = parse_experiment_config(tiny_config_json());
  fs::path dir = fresh_dir("rep");
  ExperimentResult result = run_experiment(cfg, dir);
  auto first = read_tree(result.paths.summaries_dir());
  report(result.paths);
  auto second = read_tree(result.paths.summaries_dir());
  CHECK(first == second);
  fs::remove_all(dir);
}

TEST_CASE("report on a hand-built golden fixture") {
  fs::path dir = fresh_dir("golden");
  ResultPaths paths;
  paths.root = dir;
  fs::create_directories(paths.traces_dir());

  TraceTable final_table;
  final_table.append({0, "fx-attack", 120, 2.0, true});
  final_table.append({1, "fx-attack", 80, 1.0, true});
  final_table.append({2, "fx-attack", 500, 0.0, false});
  save_trace_csv(final_table, (paths.traces_dir() / "fx_final.csv").string());
  TraceTable steps;
  save_trace_csv(steps, (paths.traces_dir() / "fx_steps.csv").string());
  std::ofstream manifest(paths.manifest_file());
  manifest << "name,family,final_file,steps_file\nfx-attack,simba,fx_final.csv,fx_steps.csv\n";
  manifest.close();

  auto summaries = report(paths);
  // by hand: successes at 120 and 80 queries -> avg 100; perturbations {2,1} -> lower median 1
  CHECK(summaries["fx-attack"].avg_queries_on_success == 100.0);
  CHECK(summaries["fx-attack"].median_perturbation == 1.0);
  CHECK(summaries["fx-attack"].failures == 1);

  std::ifstream in(paths.summaries_dir() / "report.txt");
  std::string line;
  std::getline(in, line);
  CHECK(line == "simba | fx-attack: success 0.6666666666666666, avg queries 100, median l2 1, failures 1");
  fs::remove_all(dir);
}

TEST_CASE("report flags missing trace files without failing") {
  fs::path dir = fresh_dir("missing");
  ResultPaths paths;
  paths.root = dir;
  fs::create_directories(paths.traces_dir());
  std::ofstream manifest(paths.manifest_file());
  manifest << "name,family,final_file,steps_file\nghost,simba,ghost_final.csv,ghost_steps.csv\n";
  manifest.close();

  auto summaries = report(paths);
  CHECK(summaries.empty());
  std::ifstream in(paths.summaries_dir() / "report.txt");
  std::string line;
  std::getline(in, line);
  CHECK(line.find("[missing] ghost") == 0);
  fs::remove_all(dir);
}

TEST_CASE("attack stage errors carry the attack stage tag") {
  ExperimentConfig cfg = parse_experiment_config(tiny_config_json());
  cfg.surrogates.clear();  // ods sampler now has no ensemble
  AttackSpec bad;
  bad.name = "needs-surrogates";
  bad.family = "simba";
  bad.sampler = "ods";
  bad.budget = 50;
  cfg.attacks = {bad};
  fs::path dir = fresh_dir("stageerr");
  try {
    run_experiment(cfg, dir);
    FAIL("expected StageError");
  } catch (const StageError& e) {
    CHECK(e.stage == "attack");
  }
  fs::remove_all(dir);
}

TEST_CASE("diversity experiment reports positive spreads") {
  ExperimentConfig cfg = parse_experiment_config(tiny_config_json());
  cfg.attacks.clear();
  fs::path dir = fresh_dir("div");
  ExperimentResult result = run_experiment(cfg, dir);

  DiversityConfig dcfg;
  dcfg.inputs = 6;
  dcfg.restarts = 4;
  dcfg.epsilon = 0.08;
  DiversityReport rep = diversity_experiment(result.target_adversarial, result.full_surrogates.models[0],
                                             result.eval_data, dcfg, cfg.seed);
  CHECK(rep.odi_start_diversity > 0.0);
  CHECK(rep.uniform_start_diversity > 0.0);
  CHECK(rep.ods_transfer_diversity > 0.0);
  CHECK(rep.gaussian_transfer_diversity > 0.0);
  fs::remove_all(dir);
}
