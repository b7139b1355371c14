#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "atk/blackbox.hpp"
#include "atk/dataset.hpp"
#include "atk/metrics.hpp"
#include "atk/mlp.hpp"
#include "atk/ods.hpp"
#include "atk/train.hpp"
#include "atk/whitebox.hpp"

namespace atk {

namespace fs = std::filesystem;
using json = nlohmann::json;

// Errors surfaced to the CLI carry the pipeline stage that failed.
struct StageError : std::runtime_error {
  std::string stage;
  StageError(std::string stage_, const std::string& msg) : std::runtime_error(msg), stage(std::move(stage_)) {}
};

struct ModelSpec {
  std::vector<std::size_t> hidden;
  TrainConfig train;
  bool explicit_seed = false;
};

struct AttackSpec {
  std::string name;
  std::string family;            // pgd | cw | simba | rgf | boundary
  std::string target = "natural";  // natural | adversarial
  std::string sampler = "gaussian";
  std::string surrogate_set = "full";  // full | ood
  std::size_t max_inputs = 0;          // 0 -> eval default
  bool targeted = false;
  std::size_t target_class_offset = 1;  // targeted black-box: t = (y + offset) % C

  WhiteboxAttackConfig pgd;
  CwConfig cw;
  std::size_t cw_restarts = 10;
  double simba_step = 0.2;
  std::size_t budget = 20000;
  RgfAttackConfig rgf;
  BoundaryConfig boundary;
  std::vector<std::size_t> report_budgets = {1000, 5000, 10000};
};

struct DiversityConfig {
  std::size_t inputs = 100;
  std::size_t restarts = 10;
  double epsilon = 0.08;       // Linf ball for start-point diversity
  std::size_t odi_steps = 2;
  double transfer_norm = 0.5;  // matched input-space L2 norm for sampling diversity
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::size_t jobs = 1;
  DatasetSpec dataset;
  std::size_t eval_classes = 0;  // 0 -> all
  std::size_t eval_max_inputs = 300;
  ModelSpec target;
  bool adversarial_twin = true;
  AdversarialTrainConfig adv_train;
  std::vector<ModelSpec> surrogates;
  std::size_t ood_count = 0;
  ModelSpec ood_surrogate;
  std::vector<AttackSpec> attacks;
  DiversityConfig diversity;

  std::size_t effective_eval_classes() const { return eval_classes == 0 ? dataset.classes : eval_classes; }
};

namespace cfgjson {

inline LrSchedule parse_schedule(const json& j, double fallback_rate) {
  if (j.is_null()) return LrSchedule::constant(fallback_rate);
  if (j.is_number()) return LrSchedule::constant(j.get<double>());
  LrSchedule s;
  for (const auto& e : j) s.entries.emplace_back(e.at(0).get<std::size_t>(), e.at(1).get<double>());
  s.validate();
  return s;
}

inline StepSchedule parse_step_schedule(const json& j, double fallback) {
  if (j.is_null()) return StepSchedule::constant(fallback);
  if (j.is_number()) return StepSchedule::constant(j.get<double>());
  StepSchedule s;
  for (const auto& e : j) s.entries.emplace_back(e.at(0).get<std::size_t>(), e.at(1).get<double>());
  s.validate();
  return s;
}

inline TrainConfig parse_train(const json& j) {
  TrainConfig t;
  t.epochs = j.value("epochs", t.epochs);
  t.batch_size = j.value("batch_size", t.batch_size);
  std::string opt = j.value("optimizer", std::string("adam"));
  if (opt == "sgd") t.optimizer = TrainOptimizer::Sgd;
  else if (opt == "adam") t.optimizer = TrainOptimizer::Adam;
  else throw std::invalid_argument("unknown optimizer: " + opt);
  t.schedule = parse_schedule(j.contains("schedule") ? j["schedule"] : json(), 1e-3);
  t.weight_decay = j.value("weight_decay", 0.0);
  if (j.contains("seed")) t.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("adversarial") && !j["adversarial"].is_null()) {
    AdversarialTrainConfig a;
    a.epsilon = j["adversarial"].value("epsilon", a.epsilon);
    a.eta = j["adversarial"].value("eta", a.eta);
    a.steps = j["adversarial"].value("steps", a.steps);
    t.adversarial = a;
  }
  return t;
}

inline ModelSpec parse_model(const json& j) {
  ModelSpec m;
  m.hidden = j.value("hidden", std::vector<std::size_t>{32, 32});
  if (j.contains("train")) m.train = parse_train(j["train"]);
  m.explicit_seed = j.contains("train") && j["train"].contains("seed");
  return m;
}

inline Norm parse_norm(const std::string& s) {
  if (s == "linf") return Norm::Linf;
  if (s == "l2") return Norm::L2;
  throw std::invalid_argument("unknown norm: " + s);
}

inline AttackSpec parse_attack(const json& j) {
  AttackSpec a;
  a.name = j.at("name").get<std::string>();
  a.family = j.at("family").get<std::string>();
  a.target = j.value("target", a.target);
  a.sampler = j.value("sampler", a.sampler);
  a.surrogate_set = j.value("surrogates", a.surrogate_set);
  a.max_inputs = j.value("max_inputs", a.max_inputs);
  a.targeted = j.value("targeted", false);
  a.target_class_offset = j.value("target_class_offset", a.target_class_offset);

  if (a.family == "pgd") {
    a.pgd.norm = parse_norm(j.value("norm", std::string("linf")));
    a.pgd.epsilon = j.value("epsilon", 0.08);
    a.pgd.eta = parse_step_schedule(j.contains("eta") ? j["eta"] : json(), a.pgd.epsilon / 4.0);
    a.pgd.steps = j.value("steps", 10);
    a.pgd.restarts = j.value("restarts", 20);
    std::string loss = j.value("loss", std::string("margin"));
    a.pgd.loss = loss == "margin" ? AttackLoss::Margin : AttackLoss::CrossEntropy;
    std::string opt = j.value("optimizer", std::string("sign"));
    a.pgd.optimizer = opt == "adam" ? StepRule::Adam : StepRule::Sign;
    std::string init = j.value("init", std::string("uniform"));
    a.pgd.init = init == "odi" ? InitKind::Odi : (init == "multitargeted" ? InitKind::MultiTargeted : InitKind::Uniform);
    a.pgd.odi_steps = j.value("odi_steps", 2);
    a.pgd.odi_eta = j.value("odi_eta", 0.0);
  } else if (a.family == "cw") {
    a.cw.max_iters = j.value("max_iters", a.cw.max_iters);
    a.cw.search_steps = j.value("search_steps", a.cw.search_steps);
    a.cw.lr = j.value("lr", a.cw.lr);
    a.cw.initial_const = j.value("initial_const", a.cw.initial_const);
    a.cw.init_radius = j.value("init_radius", a.cw.init_radius);
    std::string init = j.value("init", std::string("gaussian"));
    a.cw.init = init == "odi" ? InitKind::Odi : InitKind::Uniform;
    a.cw.odi_steps = j.value("odi_steps", 2);
    a.cw.odi_eta = j.value("odi_eta", 0.0);
    a.cw_restarts = j.value("restarts", a.cw_restarts);
  } else if (a.family == "simba") {
    a.simba_step = j.value("step", a.simba_step);
    a.budget = j.value("budget", a.budget);
  } else if (a.family == "rgf") {
    a.rgf.norm = parse_norm(j.value("norm", std::string("l2")));
    a.rgf.epsilon = j.value("epsilon", 0.0);  // 0 -> scaling rule at attack time
    a.rgf.step = j.value("step", a.rgf.step);
    a.rgf.num_samples = j.value("samples", a.rgf.num_samples);
    a.rgf.mu = j.value("mu", a.rgf.mu);
    a.budget = j.value("budget", 10000);
  } else if (a.family == "boundary") {
    a.budget = j.value("budget", 2000);
    a.boundary.orth_step = j.value("orth_step", a.boundary.orth_step);
    a.boundary.shrink = j.value("shrink", a.boundary.shrink);
    if (j.contains("report_budgets")) a.report_budgets = j["report_budgets"].get<std::vector<std::size_t>>();
  } else {
    throw std::invalid_argument("unknown attack family: " + a.family);
  }
  return a;
}

}  // namespace cfgjson

inline ExperimentConfig parse_experiment_config(const json& j) {
  try {
    ExperimentConfig cfg;
    cfg.seed = j.value("seed", cfg.seed);
    cfg.jobs = j.value("jobs", cfg.jobs);
    if (j.contains("dataset")) {
      const json& d = j["dataset"];
      cfg.dataset.dims = d.value("dims", cfg.dataset.dims);
      cfg.dataset.classes = d.value("classes", cfg.dataset.classes);
      cfg.dataset.per_class = d.value("per_class", cfg.dataset.per_class);
      cfg.dataset.sigma = d.value("sigma", cfg.dataset.sigma);
      cfg.dataset.separation = d.value("separation", cfg.dataset.separation);
      cfg.dataset.signal_dims = d.value("signal_dims", cfg.dataset.signal_dims);
      cfg.dataset.train_fraction = d.value("train_fraction", cfg.dataset.train_fraction);
    }
    cfg.eval_classes = j.value("eval_classes", cfg.eval_classes);
    cfg.eval_max_inputs = j.value("eval_max_inputs", cfg.eval_max_inputs);
    if (j.contains("target")) cfg.target = cfgjson::parse_model(j["target"]);
    cfg.adversarial_twin = j.value("adversarial_twin", cfg.adversarial_twin);
    if (j.contains("adversarial_train")) {
      const json& a = j["adversarial_train"];
      cfg.adv_train.epsilon = a.value("epsilon", cfg.adv_train.epsilon);
      cfg.adv_train.eta = a.value("eta", cfg.adv_train.eta);
      cfg.adv_train.steps = a.value("steps", cfg.adv_train.steps);
    }
    if (j.contains("surrogates"))
      for (const auto& s : j["surrogates"]) cfg.surrogates.push_back(cfgjson::parse_model(s));
    if (j.contains("ood_surrogates")) {
      cfg.ood_count = j["ood_surrogates"].value("count", std::size_t{0});
      cfg.ood_surrogate = cfgjson::parse_model(j["ood_surrogates"]);
    }
    if (j.contains("attacks"))
      for (const auto& a : j["attacks"]) cfg.attacks.push_back(cfgjson::parse_attack(a));
    if (j.contains("diversity")) {
      const json& d = j["diversity"];
      cfg.diversity.inputs = d.value("inputs", cfg.diversity.inputs);
      cfg.diversity.restarts = d.value("restarts", cfg.diversity.restarts);
      cfg.diversity.epsilon = d.value("epsilon", cfg.diversity.epsilon);
      cfg.diversity.odi_steps = d.value("odi_steps", cfg.diversity.odi_steps);
      cfg.diversity.transfer_norm = d.value("transfer_norm", cfg.diversity.transfer_norm);
    }
    if (cfg.eval_classes > cfg.dataset.classes)
      throw std::invalid_argument("eval_classes exceeds dataset classes");
    if (cfg.ood_count > 0 && cfg.effective_eval_classes() >= cfg.dataset.classes)
      throw std::invalid_argument("ood surrogates need classes beyond the evaluation classes");
    return cfg;
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError("config", e.what());
  }
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw StageError("config", "cannot open config file: " + path);
  json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw StageError("config", std::string("config is not valid JSON: ") + e.what());
  }
  return parse_experiment_config(j);
}

// Deterministic per-stage seed streams derived from the master seed.
namespace seedstream {
constexpr std::uint64_t kDataset = 0x01;
constexpr std::uint64_t kTargetNatural = 0x02;
constexpr std::uint64_t kTargetAdversarial = 0x03;
constexpr std::uint64_t kSurrogate = 0x100;
constexpr std::uint64_t kOodSurrogate = 0x200;
constexpr std::uint64_t kAttack = 0x1000;
constexpr std::uint64_t kDiversity = 0x2000;
}  // namespace seedstream

struct ResultPaths {
  fs::path root;
  fs::path dataset_file() const { return root / "dataset.txt"; }
  fs::path models_dir() const { return root / "models"; }
  fs::path traces_dir() const { return root / "traces"; }
  fs::path summaries_dir() const { return root / "summaries"; }
  fs::path manifest_file() const { return traces_dir() / "manifest.csv"; }
};

struct ExperimentResult {
  ResultPaths paths;
  ExperimentConfig config;
  Dataset data;       // full generated dataset
  Dataset eval_data;  // evaluation-class slice
  MlpClassifier target_natural;
  MlpClassifier target_adversarial;  // only when adversarial_twin
  SurrogateEnsemble full_surrogates;
  SurrogateEnsemble ood_surrogates;
  std::map<std::string, EfficiencySummary> summaries;  // per attack name, from report
};

inline void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  if (jobs <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  auto worker = [&] {
    for (;;) {
      std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mu);
        if (!error) error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> threads;
  for (std::size_t t = 0; t < std::min(jobs, n); ++t) threads.emplace_back(worker);
  for (auto& t : threads) t.join();
  if (error) std::rethrow_exception(error);
}

namespace detail {

inline Tensor test_row(const Dataset& d, std::size_t r) { return d.test_x.row(r); }

// Indices of test rows the model classifies correctly, capped.
inline std::vector<std::size_t> correctly_classified(const MlpClassifier& m, const Dataset& d, std::size_t cap) {
  std::vector<std::size_t> out;
  for (std::size_t r = 0; r < d.test_y.size() && out.size() < cap; ++r)
    if (predict(m, test_row(d, r)) == d.test_y[r]) out.push_back(r);
  return out;
}

inline std::size_t pick_targeted_seed_row(const Dataset& d, std::size_t target_class, std::size_t salt) {
  std::vector<std::size_t> pool;
  for (std::size_t r = 0; r < d.test_y.size(); ++r)
    if (d.test_y[r] == target_class) pool.push_back(r);
  if (pool.empty()) throw StageError("attack", "no seed images available for the target class");
  return pool[salt % pool.size()];
}

}  // namespace detail

inline ExperimentResult run_experiment(const ExperimentConfig& config, const fs::path& out_dir);

// --- stages ---------------------------------------------------------------

inline Dataset stage_dataset(const ExperimentConfig& cfg, const ResultPaths& paths) {
  try {
    DatasetSpec spec = cfg.dataset;
    spec.seed = derive_seed(cfg.seed, seedstream::kDataset);
    Dataset data = generate_dataset(spec);
    fs::create_directories(paths.root);
    save_dataset(data, paths.dataset_file().string());
    return data;
  } catch (const std::exception& e) {
    throw StageError("data", e.what());
  }
}

inline void stage_train(const ExperimentConfig& cfg, const ResultPaths& paths, ExperimentResult& result) {
  try {
    std::size_t eval_k = cfg.effective_eval_classes();
    result.eval_data = eval_k == cfg.dataset.classes ? result.data : class_slice(result.data, 0, eval_k);
    fs::create_directories(paths.models_dir());

    auto build = [&](const ModelSpec& spec, const Dataset& data, std::uint64_t stream,
                     std::optional<AdversarialTrainConfig> adversarial) {
      TrainConfig train_cfg = spec.train;
      if (!spec.explicit_seed) train_cfg.seed = derive_seed(cfg.seed, stream);
      if (adversarial) train_cfg.adversarial = adversarial;
      std::vector<std::size_t> sizes;
      sizes.push_back(data.dims());
      sizes.insert(sizes.end(), spec.hidden.begin(), spec.hidden.end());
      sizes.push_back(data.classes());
      Rng init_rng(mix_seed(train_cfg.seed ^ 0x5eedf00dULL));
      MlpClassifier model = MlpClassifier::random_init(sizes, init_rng);
      train(model, data, train_cfg);
      return model;
    };

    result.target_natural = build(cfg.target, result.eval_data, seedstream::kTargetNatural, std::nullopt);
    save_model(result.target_natural, (paths.models_dir() / "target_natural.model").string());

    if (cfg.adversarial_twin) {
      result.target_adversarial = build(cfg.target, result.eval_data, seedstream::kTargetAdversarial, cfg.adv_train);
      save_model(result.target_adversarial, (paths.models_dir() / "target_adversarial.model").string());
    }

    for (std::size_t i = 0; i < cfg.surrogates.size(); ++i) {
      MlpClassifier m = build(cfg.surrogates[i], result.eval_data, seedstream::kSurrogate + i, std::nullopt);
      save_model(m, (paths.models_dir() / ("surrogate_full_" + std::to_string(i) + ".model")).string());
      result.full_surrogates.models.push_back(std::move(m));
    }

    if (cfg.ood_count > 0) {
      Dataset ood_data = class_slice(result.data, eval_k, cfg.dataset.classes);
      // class-disjoint by construction; keep the guard hot
      for (std::size_t r = 0; r < ood_data.train_y.size(); ++r)
        if (ood_data.train_y[r] >= cfg.dataset.classes - eval_k)
          throw std::logic_error("ood slice produced an evaluation-class label");
      for (std::size_t i = 0; i < cfg.ood_count; ++i) {
        MlpClassifier m = build(cfg.ood_surrogate, ood_data, seedstream::kOodSurrogate + i, std::nullopt);
        save_model(m, (paths.models_dir() / ("surrogate_ood_" + std::to_string(i) + ".model")).string());
        result.ood_surrogates.models.push_back(std::move(m));
      }
    }
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError("train", e.what());
  }
}

namespace detail {

struct PerInputRows {
  std::vector<TraceRow> final_rows;
  std::vector<TraceRow> step_rows;
};

inline double rgf_epsilon(const AttackSpec& spec, std::size_t dims) {
  if (spec.rgf.epsilon > 0.0) return spec.rgf.epsilon;
  return spec.rgf.norm == Norm::L2 ? std::sqrt(0.001 * static_cast<double>(dims)) : 0.05;
}

inline PerInputRows run_attack_on_input(const AttackSpec& spec, std::size_t attack_idx, std::size_t row,
                                        const ExperimentConfig& cfg, const ExperimentResult& result) {
  const MlpClassifier& target = spec.target == "adversarial" ? result.target_adversarial : result.target_natural;
  const Dataset& data = result.eval_data;
  Tensor x = test_row(data, row);
  std::size_t y = data.test_y[row];
  std::uint64_t seed = derive_seed(cfg.seed, seedstream::kAttack + attack_idx, row);
  Rng rng(seed);

  PerInputRows rows;
  auto final_row = [&](std::size_t index, double value, bool success) {
    rows.final_rows.push_back({row, spec.name, index, value, success});
  };
  auto step_row = [&](std::size_t index, double value, bool success) {
    rows.step_rows.push_back({row, spec.name, index, value, success});
  };

  if (spec.family == "pgd") {
    RestartOutcome outcome = pgd_with_restarts(target, x, y, spec.pgd, rng);
    for (std::size_t r = 0; r < outcome.per_restart.size(); ++r)
      step_row(r + 1, outcome.per_restart[r].value, outcome.per_restart[r].success);
    final_row(outcome.best.restarts_used, outcome.best.perturbation_norm, outcome.best.success);
  } else if (spec.family == "cw") {
    RestartOutcome outcome = cw_with_restarts(target, x, y, spec.cw, spec.cw_restarts, rng);
    for (std::size_t r = 0; r < outcome.per_restart.size(); ++r)
      step_row(r + 1, outcome.per_restart[r].value, outcome.per_restart[r].success);
    final_row(outcome.best.restarts_used, outcome.best.success ? outcome.best.perturbation_norm : 0.0,
              outcome.best.success);
  } else if (spec.family == "simba" || spec.family == "rgf") {
    const SurrogateEnsemble& ensemble =
        spec.surrogate_set == "ood" ? result.ood_surrogates : result.full_surrogates;
    Sampler sampler = [&]() -> Sampler {
      if (spec.sampler == "pixel") return Sampler::pixel_basis(data.dims(), derive_seed(seed, 1));
      if (spec.sampler == "gaussian") return Sampler::gaussian(data.dims(), derive_seed(seed, 1));
      if (spec.sampler == "ods") return Sampler::ods(ensemble, derive_seed(seed, 1));
      if (spec.sampler == "multitargeted") return Sampler::multitargeted(ensemble, y, derive_seed(seed, 1));
      throw std::invalid_argument("unknown sampler: " + spec.sampler);
    }();
    std::optional<std::size_t> target_class;
    if (spec.targeted) target_class = (y + spec.target_class_offset) % data.classes();

    QueryOracle oracle(target, QueryOracle::Mode::Score, spec.budget);
    BlackboxOutcome outcome;
    if (spec.family == "simba") {
      outcome = simba_attack(oracle, x, y, sampler, spec.simba_step, spec.budget, target_class);
    } else {
      RgfAttackConfig rcfg = spec.rgf;
      rcfg.epsilon = rgf_epsilon(spec, data.dims());
      outcome = rgf_attack(oracle, x, y, sampler, rcfg, target_class);
    }
    for (const auto& p : outcome.trace) step_row(p.query, p.value, false);
    final_row(outcome.result.queries, outcome.result.perturbation_norm, outcome.result.success);
  } else if (spec.family == "boundary") {
    const SurrogateEnsemble& ensemble =
        spec.surrogate_set == "ood" ? result.ood_surrogates : result.full_surrogates;
    Sampler sampler = [&]() -> Sampler {
      if (spec.sampler == "gaussian") return Sampler::gaussian(data.dims(), derive_seed(seed, 1));
      if (spec.sampler == "ods") return Sampler::ods(ensemble, derive_seed(seed, 1));
      if (spec.sampler == "multitargeted") return Sampler::multitargeted(ensemble, y, derive_seed(seed, 1));
      throw std::invalid_argument("boundary sampler must be gaussian, ods, or multitargeted");
    }();

    QueryOracle oracle(target, QueryOracle::Mode::Decision, spec.budget);
    std::optional<BoundaryTargeted> targeted;
    if (spec.targeted) {
      std::size_t t = (y + spec.target_class_offset) % data.classes();
      targeted = BoundaryTargeted{t, test_row(data, pick_targeted_seed_row(data, t, row))};
    }
    BlackboxOutcome outcome;
    try {
      outcome = boundary_attack(oracle, x, y, sampler, spec.boundary, rng, targeted);
    } catch (const InitializationError&) {
      outcome.result.adversarial = x;
      outcome.result.success = false;
      outcome.result.queries = oracle.queries();
    }
    for (const auto& p : outcome.trace) step_row(p.query, p.value, true);
    final_row(outcome.result.queries, outcome.result.perturbation_norm, outcome.result.success);
  } else {
    throw std::invalid_argument("unknown attack family: " + spec.family);
  }
  return rows;
}

}  // namespace detail

inline void stage_attack(const ExperimentConfig& cfg, const ResultPaths& paths, ExperimentResult& result) {
  try {
    fs::create_directories(paths.traces_dir());
    std::ofstream manifest(paths.manifest_file());
    manifest << "name,family,final_file,steps_file,report_budgets\n";

    for (std::size_t a = 0; a < cfg.attacks.size(); ++a) {
      const AttackSpec& spec = cfg.attacks[a];
      if (spec.target == "adversarial" && !cfg.adversarial_twin)
        throw std::invalid_argument("attack '" + spec.name + "' needs the adversarial twin");
      if ((spec.sampler == "ods" || spec.sampler == "multitargeted")) {
        const SurrogateEnsemble& e = spec.surrogate_set == "ood" ? result.ood_surrogates : result.full_surrogates;
        if (e.models.empty())
          throw std::invalid_argument("attack '" + spec.name + "' needs " + spec.surrogate_set + " surrogates");
      }

      const MlpClassifier& target =
          spec.target == "adversarial" ? result.target_adversarial : result.target_natural;
      std::size_t cap = spec.max_inputs == 0 ? cfg.eval_max_inputs : spec.max_inputs;
      std::vector<std::size_t> inputs = detail::correctly_classified(target, result.eval_data, cap);
      if (inputs.empty()) throw std::invalid_argument("no correctly classified inputs for '" + spec.name + "'");

      std::vector<detail::PerInputRows> per_input(inputs.size());
      parallel_for(inputs.size(), cfg.jobs,
                   [&](std::size_t i) { per_input[i] = detail::run_attack_on_input(spec, a, inputs[i], cfg, result); });

      TraceTable final_table, steps_table;
      for (const auto& rows : per_input) {
        for (const auto& r : rows.final_rows) final_table.rows.push_back(r);
        for (const auto& r : rows.step_rows) steps_table.rows.push_back(r);
      }
      std::string final_name = spec.name + "_final.csv";
      std::string steps_name = spec.name + "_steps.csv";
      save_trace_csv(final_table, (paths.traces_dir() / final_name).string());
      save_trace_csv(steps_table, (paths.traces_dir() / steps_name).string());
      manifest << spec.name << ',' << spec.family << ',' << final_name << ',' << steps_name << ',';
      if (spec.family == "boundary")
        for (std::size_t b = 0; b < spec.report_budgets.size(); ++b)
          manifest << (b ? ";" : "") << spec.report_budgets[b];
      manifest << "\n";
    }
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError("attack", e.what());
  }
}

struct ManifestEntry {
  std::string name, family, final_file, steps_file;
  std::vector<std::size_t> report_budgets;
};

inline std::vector<ManifestEntry> load_manifest(const ResultPaths& paths) {
  std::ifstream in(paths.manifest_file());
  if (!in) throw StageError("report", "missing trace manifest: " + paths.manifest_file().string());
  std::vector<ManifestEntry> out;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ManifestEntry e;
    std::size_t p0 = line.find(','), p1 = line.find(',', p0 + 1), p2 = line.find(',', p1 + 1),
                p3 = line.find(',', p2 + 1);
    if (p2 == std::string::npos) throw StageError("report", "malformed manifest row: " + line);
    e.name = line.substr(0, p0);
    e.family = line.substr(p0 + 1, p1 - p0 - 1);
    e.final_file = line.substr(p1 + 1, p2 - p1 - 1);
    if (p3 == std::string::npos) {
      e.steps_file = line.substr(p2 + 1);
    } else {
      e.steps_file = line.substr(p2 + 1, p3 - p2 - 1);
      std::string budgets = line.substr(p3 + 1);
      std::size_t pos = 0;
      while (pos < budgets.size()) {
        std::size_t semi = budgets.find(';', pos);
        if (semi == std::string::npos) semi = budgets.size();
        if (semi > pos) e.report_budgets.push_back(parse_u64(budgets.substr(pos, semi - pos)));
        pos = semi + 1;
      }
    }
    out.push_back(std::move(e));
  }
  return out;
}

// Builds summary CSVs and a human-readable report from the trace tree.
// Missing trace files are noted in the report rather than fatal. Re-running
// rewrites identical outputs.
inline std::map<std::string, EfficiencySummary> report(const ResultPaths& paths) {
  try {
    std::vector<ManifestEntry> manifest = load_manifest(paths);
    fs::create_directories(paths.summaries_dir());

    std::ostringstream text;
    std::map<std::string, EfficiencySummary> all_summaries;

    std::ofstream summary_csv(paths.summaries_dir() / "summary.csv");
    summary_csv << "method,family,inputs,success_rate,avg_queries_on_success,median_l2,failures\n";

    std::ofstream budget_csv(paths.summaries_dir() / "boundary_budgets.csv");
    budget_csv << "method,budget,median_l2,truncated\n";

    std::map<std::string, Curve> restart_curves;

    for (std::size_t i = 0; i < manifest.size(); ++i) {
      const ManifestEntry& e = manifest[i];
      fs::path final_path = paths.traces_dir() / e.final_file;
      if (!fs::exists(final_path)) {
        text << "[missing] " << e.name << ": trace file " << e.final_file << " not found\n";
        continue;
      }
      TraceTable final_table = load_trace_csv(final_path.string());
      auto summaries = query_efficiency_summary(final_table);
      for (const auto& [method, s] : summaries) {
        all_summaries[method] = s;
        summary_csv << method << ',' << e.family << ',' << s.inputs << ',' << dtos(s.success_rate) << ','
                    << dtos(s.avg_queries_on_success) << ',' << dtos(s.median_perturbation) << ',' << s.failures
                    << "\n";
        text << e.family << " | " << method << ": success " << dtos(s.success_rate) << ", avg queries "
             << dtos(s.avg_queries_on_success) << ", median l2 " << dtos(s.median_perturbation) << ", failures "
             << s.failures << "\n";
      }

      fs::path steps_path = paths.traces_dir() / e.steps_file;
      if ((e.family == "pgd" || e.family == "cw") && fs::exists(steps_path)) {
        TraceTable steps = load_trace_csv(steps_path.string());
        for (auto& [method, curve] : accuracy_vs_restarts(steps)) restart_curves[method] = std::move(curve);
      }
      if (e.family == "boundary" && fs::exists(steps_path)) {
        TraceTable steps = load_trace_csv(steps_path.string());
        std::vector<std::size_t> grid = e.report_budgets.empty() ? std::vector<std::size_t>{1000, 5000, 10000}
                                                                 : e.report_budgets;
        for (const auto& [method, points] : perturbation_at_budget(steps, grid))
          for (const auto& pt : points) {
            budget_csv << method << ',' << pt.budget << ',' << dtos(pt.median) << ',' << (pt.truncated ? 1 : 0)
                       << "\n";
            text << "boundary | " << method << " @" << pt.budget << ": median l2 " << dtos(pt.median)
                 << (pt.truncated ? " (truncated)" : "") << "\n";
          }
      }
    }

    save_curve_csv(restart_curves, (paths.summaries_dir() / "accuracy_vs_restarts.csv").string());

    std::ofstream report_txt(paths.summaries_dir() / "report.txt");
    report_txt << text.str();
    return all_summaries;
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError("report", e.what());
  }
}

inline ExperimentResult run_experiment(const ExperimentConfig& config, const fs::path& out_dir) {
  ExperimentResult result;
  result.config = config;
  result.paths.root = out_dir;
  result.data = stage_dataset(config, result.paths);
  stage_train(config, result.paths, result);
  stage_attack(config, result.paths, result);
  result.summaries = report(result.paths);
  return result;
}

// --- diversity measurements -------------------------------------------------

struct DiversityReport {
  double odi_start_diversity = 0.0;      // mean pairwise logit distance, ODI starts
  double uniform_start_diversity = 0.0;  // same for uniform starts
  double ods_transfer_diversity = 0.0;   // target-logit spread of surrogate ODS draws
  double gaussian_transfer_diversity = 0.0;

  double start_ratio() const { return odi_start_diversity / std::max(uniform_start_diversity, 1e-300); }
  double transfer_ratio() const { return ods_transfer_diversity / std::max(gaussian_transfer_diversity, 1e-300); }
};

// Start-point diversity (ODI vs uniform on the target) and transferred
// sampling diversity (surrogate ODS vs Gaussian at matched input norm),
// averaged over test inputs.
inline DiversityReport diversity_experiment(const MlpClassifier& target, const MlpClassifier& surrogate,
                                            const Dataset& eval_data, const DiversityConfig& cfg,
                                            std::uint64_t master_seed) {
  DiversityReport rep;
  std::size_t n = std::min<std::size_t>(cfg.inputs, eval_data.test_y.size());
  if (n == 0 || cfg.restarts < 2) throw std::invalid_argument("diversity_experiment: need inputs and >=2 restarts");

  WhiteboxAttackConfig odi_cfg;
  odi_cfg.norm = Norm::Linf;
  odi_cfg.epsilon = cfg.epsilon;
  odi_cfg.init = InitKind::Odi;
  odi_cfg.odi_steps = cfg.odi_steps;

  double odi_sum = 0.0, uni_sum = 0.0, ods_sum = 0.0, gauss_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    Tensor x = eval_data.test_x.row(i);
    std::size_t y = eval_data.test_y[i];
    Rng rng(derive_seed(master_seed, seedstream::kDiversity, i));

    std::vector<Tensor> odi_starts, uniform_starts, ods_points, gauss_points;
    for (std::size_t r = 0; r < cfg.restarts; ++r) {
      odi_starts.push_back(odi_init(x, target, y, r, odi_cfg, rng));
      uniform_starts.push_back(uniform_ball_sample(x, cfg.epsilon, Norm::Linf, rng));
      ods_points.push_back(add_scaled(x, ods_vector_or_random(x, surrogate, rng), cfg.transfer_norm));
      gauss_points.push_back(add_scaled(x, random_unit_vector(x.size(), rng), cfg.transfer_norm));
    }
    odi_sum += pairwise_output_distance(odi_starts, target);
    uni_sum += pairwise_output_distance(uniform_starts, target);
    ods_sum += pairwise_output_distance(ods_points, target);
    gauss_sum += pairwise_output_distance(gauss_points, target);
  }

  double inv = 1.0 / static_cast<double>(n);
  rep.odi_start_diversity = odi_sum * inv;
  rep.uniform_start_diversity = uni_sum * inv;
  rep.ods_transfer_diversity = ods_sum * inv;
  rep.gaussian_transfer_diversity = gauss_sum * inv;
  return rep;
}

inline void save_diversity_csv(const DiversityReport& rep, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open diversity file for writing: " + path);
  out << "metric,value\n";
  out << "odi_start_diversity," << dtos(rep.odi_start_diversity) << "\n";
  out << "uniform_start_diversity," << dtos(rep.uniform_start_diversity) << "\n";
  out << "start_ratio," << dtos(rep.start_ratio()) << "\n";
  out << "ods_transfer_diversity," << dtos(rep.ods_transfer_diversity) << "\n";
  out << "gaussian_transfer_diversity," << dtos(rep.gaussian_transfer_diversity) << "\n";
  out << "transfer_ratio," << dtos(rep.transfer_ratio()) << "\n";
}

}  // namespace atk
