#include <catch2/catch_amalgamated.hpp>

#include "atk/autodiff.hpp"
#include "atk/blackbox.hpp"
#include "atk/dataset.hpp"
#include "atk/train.hpp"

using namespace atk;

namespace {

MlpClassifier linear_binary(const std::vector<double>& w_diff, double bias_diff) {
  std::size_t d = w_diff.size();
  MlpClassifier m({d, 2});
  for (std::size_t i = 0; i < d; ++i) m.weight(0).at(i, 1) = w_diff[i];
  m.bias(0) = Tensor({2}, {0.0, bias_diff});
  return m;
}

// Test-only oracle sampler: the exact normalized gradient of the margin loss
// on the true target, i.e. the best possible direction.
struct GradientSampler {
  const MlpClassifier* model;
  std::size_t label;
  Sampler::Kind kind() const { return Sampler::Kind::Ods; }
  Tensor draw(const Tensor& x) {
    auto [v, g] = value_and_input_grad(*model, x, ScalarHead::margin(label));
    (void)v;
    double n = l2_norm(g.wrt_input);
    return n == 0.0 ? Tensor(x.shape) : scaled(g.wrt_input, 1.0 / n);
  }
};

struct TrainedPair {
  Dataset data;
  MlpClassifier target;
  SurrogateEnsemble surrogates;
};

TrainedPair trained_pair(std::uint64_t seed = 3) {
  TrainedPair out;
  DatasetSpec spec;
  spec.dims = 12;
  spec.classes = 3;
  spec.per_class = 80;
  spec.seed = seed;
  spec.sigma = 0.07;
  spec.separation = 0.45;
  out.data = generate_dataset(spec);

  Rng rng(seed * 17 + 1);
  out.target = MlpClassifier::random_init({12, 24, 3}, rng);
  TrainConfig cfg;
  cfg.epochs = 40;
  cfg.seed = seed;
  train(out.target, out.data, cfg);

  for (int i = 0; i < 2; ++i) {
    MlpClassifier g = MlpClassifier::random_init({12, 16 + 8 * i, 3}, rng);
    TrainConfig scfg;
    scfg.epochs = 40;
    scfg.seed = seed + 10 + i;
    train(g, out.data, scfg);
    out.surrogates.models.push_back(std::move(g));
  }
  return out;
}

}  // namespace

TEST_CASE("oracle counts every call and enforces the budget") {
  MlpClassifier m = linear_binary({1.0, -1.0}, 0.0);
  Tensor x({2}, {0.5, 0.5});

  QueryOracle oracle(m, QueryOracle::Mode::Score, 3);
  CHECK(oracle.queries() == 0);
  oracle.score(x);
  oracle.label(x);
  CHECK(oracle.queries() == 2);
  CHECK(oracle.remaining() == 1);
  oracle.score(x);
  CHECK_THROWS_AS(oracle.score(x), BudgetExhaustedError);
  CHECK_THROWS_AS(oracle.label(x), BudgetExhaustedError);
  CHECK(oracle.queries() == 3);  // failed calls consume nothing
}

TEST_CASE("decision oracles never expose logits") {
  MlpClassifier m = linear_binary({1.0, -1.0}, 0.0);
  Tensor x({2}, {0.5, 0.5});
  QueryOracle oracle(m, QueryOracle::Mode::Decision, 10);
  CHECK_THROWS_AS(oracle.score(x), OracleModeError);
  CHECK(oracle.queries() == 0);
  CHECK(oracle.label(x) == predict(m, x));
  CHECK(oracle.queries() == 1);
}

TEST_CASE("samplers produce unit vectors; pixel basis sweeps without replacement") {
  std::size_t d = 7;
  Sampler pixel = Sampler::pixel_basis(d, 5);
  Tensor x({d});
  std::vector<bool> seen(d, false);
  for (std::size_t i = 0; i < d; ++i) {
    Tensor v = pixel.draw(x);
    CHECK(l2_norm(v) == 1.0);
    std::size_t coord = 0;
    for (std::size_t j = 0; j < d; ++j)
      if (v[j] == 1.0) coord = j;
    CHECK_FALSE(seen[coord]);
    seen[coord] = true;
  }
  for (bool s : seen) CHECK(s);  // one full epoch covers every coordinate

  Sampler gauss = Sampler::gaussian(d, 7);
  for (int i = 0; i < 20; ++i) CHECK(std::abs(l2_norm(gauss.draw(x)) - 1.0) <= 1e-9);

  TrainedPair tp = trained_pair();
  Sampler ods = Sampler::ods(tp.surrogates, 9);
  Sampler mt = Sampler::multitargeted(tp.surrogates, 0, 9);
  Tensor xr = tp.data.test_x.row(0);
  for (int i = 0; i < 10; ++i) {
    CHECK(std::abs(l2_norm(ods.draw(xr)) - 1.0) <= 1e-9);
    CHECK(std::abs(l2_norm(mt.draw(xr)) - 1.0) <= 1e-9);
  }
}

TEST_CASE("simba with the true gradient direction improves every move until success") {
  TrainedPair tp = trained_pair(5);
  Tensor x = tp.data.test_x.row(1);
  std::size_t y = tp.data.test_y[1];
  REQUIRE(predict(tp.target, x) == y);

  QueryOracle oracle(tp.target, QueryOracle::Mode::Score, 5000);
  GradientSampler sampler{&tp.target, y};
  BlackboxOutcome out = simba_attack(oracle, x, y, sampler, 0.02, 5000);

  CHECK(out.result.success);
  CHECK(out.result.queries == oracle.queries());
  CHECK(out.result.queries <= 2 * out.trace.size() + 2);  // at most two queries per accepted move
  for (std::size_t i = 1; i < out.trace.size(); ++i) CHECK(out.trace[i].value > out.trace[i - 1].value);
  CHECK(predict(tp.target, out.result.adversarial) != y);
}

TEST_CASE("simba on constant logits consumes two queries per iteration and stays put") {
  MlpClassifier dead({4, 2});  // constant logits
  Tensor x({4}, {0.5, 0.5, 0.5, 0.5});
  QueryOracle oracle(dead, QueryOracle::Mode::Score, 100);
  Sampler sampler = Sampler::gaussian(4, 3);
  BlackboxOutcome out = simba_attack(oracle, x, 0, sampler, 0.1, 10);

  CHECK_FALSE(out.result.success);
  CHECK(out.result.adversarial.values == x.values);
  CHECK(oracle.queries() == 1 + 2 * 10);  // initial probe plus two per iteration
  CHECK(out.result.perturbation_norm == 0.0);
}

TEST_CASE("simba budget exhaustion reports failure with queries at the budget") {
  MlpClassifier dead({4, 2});
  Tensor x({4}, {0.5, 0.5, 0.5, 0.5});
  QueryOracle oracle(dead, QueryOracle::Mode::Score, 7);
  Sampler sampler = Sampler::gaussian(4, 3);
  BlackboxOutcome out = simba_attack(oracle, x, 0, sampler, 0.1, 100);
  CHECK_FALSE(out.result.success);
  CHECK(out.result.queries == 7);
}

TEST_CASE("targeted simba drives toward the requested class") {
  TrainedPair tp = trained_pair(7);
  Tensor x = tp.data.test_x.row(2);
  std::size_t y = tp.data.test_y[2];
  std::size_t t = (y + 1) % 3;
  REQUIRE(predict(tp.target, x) == y);

  QueryOracle oracle(tp.target, QueryOracle::Mode::Score, 60000);
  Sampler sampler = Sampler::ods(tp.surrogates, 11);
  BlackboxOutcome out = simba_attack(oracle, x, y, sampler, 0.1, 60000, t);
  CHECK(out.result.success);
  CHECK(predict(tp.target, out.result.adversarial) == t);
  CHECK(out.result.queries == oracle.queries());
}

TEST_CASE("boundary contraction satisfies the distance equation on acceptance") {
  // Always-adversarial oracle: constant prediction of class 1.
  MlpClassifier yes({3, 2});
  yes.bias(0) = Tensor({2}, {0.0, 1.0});
  Tensor x({3}, {0.5, 0.5, 0.5});

  QueryOracle oracle(yes, QueryOracle::Mode::Decision, 50);
  Sampler sampler = Sampler::gaussian(3, 13);
  BoundaryConfig cfg;
  cfg.max_steps = 1;
  Rng rng(17);
  BlackboxOutcome out = boundary_attack(oracle, x, 0, sampler, cfg, rng);

  REQUIRE(out.trace.size() == 2);  // init + one accepted step
  double d0 = out.trace[0].value, d1 = out.trace[1].value;
  // interior points, so no box clipping interferes
  CHECK(d0 - d1 == Catch::Approx(cfg.shrink * d0).epsilon(1e-9));
}

TEST_CASE("boundary distances strictly decrease over accepted steps") {
  TrainedPair tp = trained_pair(9);
  Tensor x = tp.data.test_x.row(0);
  std::size_t y = tp.data.test_y[0];
  REQUIRE(predict(tp.target, x) == y);

  QueryOracle oracle(tp.target, QueryOracle::Mode::Decision, 800);
  Sampler sampler = Sampler::ods(tp.surrogates, 19);
  BoundaryConfig cfg;
  Rng rng(23);
  BlackboxOutcome out = boundary_attack(oracle, x, y, sampler, cfg, rng);

  CHECK(out.result.success);
  CHECK(out.result.queries == oracle.queries());
  REQUIRE(out.trace.size() >= 2);
  for (std::size_t i = 1; i < out.trace.size(); ++i) CHECK(out.trace[i].value < out.trace[i - 1].value);
  // the held point is genuinely adversarial (free re-check outside the oracle)
  CHECK(predict(tp.target, out.result.adversarial) != y);
}

TEST_CASE("boundary approaches the analytic distance on a linear model") {
  std::vector<double> w_diff = {0.7, -0.3, 0.5, 0.2, -0.4, 0.6, 0.1, -0.2};
  MlpClassifier m = linear_binary(w_diff, -0.75);
  Tensor x({8}, std::vector<double>(8, 0.5));
  REQUIRE(predict(m, x) == 0);

  double margin0 = margin_loss(forward_logits(m, x), 0);
  double wn = 0.0;
  for (double w : w_diff) wn += w * w;
  double analytic = -margin0 / std::sqrt(wn);

  QueryOracle oracle(m, QueryOracle::Mode::Decision, 4000);
  Sampler sampler = Sampler::gaussian(8, 29);
  BoundaryConfig cfg;
  cfg.max_steps = 2000;
  Rng rng(31);
  BlackboxOutcome out = boundary_attack(oracle, x, 0, sampler, cfg, rng);

  INFO("final " << out.result.perturbation_norm << " analytic " << analytic);
  CHECK(out.result.perturbation_norm <= analytic * 1.10);
  CHECK(out.result.perturbation_norm >= analytic * 0.999);
}

TEST_CASE("boundary initialization failure raises after bounded tries") {
  MlpClassifier stubborn({3, 2});
  stubborn.bias(0) = Tensor({2}, {1.0, 0.0});  // always class 0: never adversarial for y=0
  Tensor x({3}, {0.5, 0.5, 0.5});
  QueryOracle oracle(stubborn, QueryOracle::Mode::Decision, 5000);
  Sampler sampler = Sampler::gaussian(3, 37);
  BoundaryConfig cfg;
  cfg.max_init_tries = 50;
  Rng rng(41);
  CHECK_THROWS_AS(boundary_attack(oracle, x, 0, sampler, cfg, rng), InitializationError);
  CHECK(oracle.queries() == 50);
}

TEST_CASE("targeted boundary keeps the target label") {
  TrainedPair tp = trained_pair(11);
  Tensor x = tp.data.test_x.row(3);
  std::size_t y = tp.data.test_y[3];
  std::size_t t = (y + 1) % 3;
  Tensor seed;
  for (std::size_t r = 0; r < tp.data.test_y.size(); ++r)
    if (tp.data.test_y[r] == t && predict(tp.target, tp.data.test_x.row(r)) == t) {
      seed = tp.data.test_x.row(r);
      break;
    }
  REQUIRE(seed.size() > 0);

  QueryOracle oracle(tp.target, QueryOracle::Mode::Decision, 600);
  Sampler sampler = Sampler::ods(tp.surrogates, 43);
  BoundaryConfig cfg;
  Rng rng(47);
  BlackboxOutcome out = boundary_attack(oracle, x, y, sampler, cfg, rng, BoundaryTargeted{t, seed});
  CHECK(out.result.success);
  CHECK(predict(tp.target, out.result.adversarial) == t);
  CHECK(out.result.perturbation_norm < l2_dist(seed, x));
}

TEST_CASE("rgf estimate reconstructs the span projection for a linear loss") {
  std::vector<double> w_diff = {0.9, -0.2, 0.4, 0.6, -0.7};
  MlpClassifier m = linear_binary(w_diff, 0.0);  // margin loss is linear: w_diff . x
  Tensor x({5}, std::vector<double>(5, 0.5));

  std::size_t q = 3;
  QueryOracle oracle(m, QueryOracle::Mode::Score, 100);
  Sampler sampler = Sampler::gaussian(5, 53);
  detail::BlackboxObjective obj{0, std::nullopt};
  RgfEstimate est = rgf_estimate_gradient(oracle, x, obj, sampler, q, 1e-3);

  CHECK(oracle.queries() == q + 1);

  // recover the directions by rerunning the seeded sampler, orthonormalized
  Sampler replay = Sampler::gaussian(5, 53);
  std::vector<Tensor> dirs;
  while (dirs.size() < q) {
    Tensor u = replay.draw(x);
    for (const Tensor& b : dirs) u = add_scaled(u, b, -dot(u, b));
    double n = l2_norm(u);
    if (n < 1e-9) continue;
    dirs.push_back(scaled(u, 1.0 / n));
  }
  Tensor c({5}, w_diff);
  Tensor proj({5});
  for (const Tensor& u : dirs) proj = add_scaled(proj, u, dot(c, u));
  Tensor scaled_est = scaled(est.grad, static_cast<double>(q));
  for (std::size_t i = 0; i < 5; ++i) CHECK(scaled_est[i] == Catch::Approx(proj[i]).margin(1e-6));
}

TEST_CASE("rgf with a complete orthonormal basis recovers the full gradient") {
  Rng rng(59);
  MlpClassifier m = MlpClassifier::random_init({6, 10, 3}, rng);
  Tensor x({6}, std::vector<double>(6, 0.4));
  std::size_t y = predict(m, x);

  QueryOracle oracle(m, QueryOracle::Mode::Score, 100);
  Sampler sampler = Sampler::gaussian(6, 61);
  detail::BlackboxObjective obj{y, std::nullopt};
  RgfEstimate est = rgf_estimate_gradient(oracle, x, obj, sampler, 6, 1e-5);

  auto [v, g] = value_and_input_grad(m, x, ScalarHead::margin(y));
  (void)v;
  Tensor full = scaled(est.grad, 6.0);
  CHECK(max_relative_error(full, g.wrt_input) < 1e-3);
}

TEST_CASE("rgf attack succeeds quickly with the true gradient sampler") {
  TrainedPair tp = trained_pair(13);
  Tensor x = tp.data.test_x.row(4);
  std::size_t y = tp.data.test_y[4];
  REQUIRE(predict(tp.target, x) == y);

  QueryOracle oracle(tp.target, QueryOracle::Mode::Score, 4000);
  GradientSampler sampler{&tp.target, y};
  RgfAttackConfig cfg;
  cfg.norm = Norm::L2;
  cfg.epsilon = 0.6;
  cfg.step = 0.1;
  cfg.num_samples = 4;
  BlackboxOutcome out = rgf_attack(oracle, x, y, sampler, cfg);

  CHECK(out.result.success);
  CHECK(out.result.queries == oracle.queries());
  CHECK(out.result.queries <= 40 * (cfg.num_samples + 1));
  CHECK(l2_dist(out.result.adversarial, x) <= cfg.epsilon + 1e-9);
}

TEST_CASE("rgf with zero epsilon fails immediately") {
  MlpClassifier m = linear_binary({1.0, 1.0}, -0.5);
  Tensor x({2}, {0.4, 0.4});
  QueryOracle oracle(m, QueryOracle::Mode::Score, 100);
  Sampler sampler = Sampler::gaussian(2, 67);
  RgfAttackConfig cfg;
  cfg.epsilon = 0.0;
  BlackboxOutcome out = rgf_attack(oracle, x, 0, sampler, cfg);
  CHECK_FALSE(out.result.success);
  CHECK(out.result.perturbation_norm == 0.0);
  CHECK(oracle.queries() == 0);
}

TEST_CASE("rgf linf variant stays inside the box-constrained ball") {
  TrainedPair tp = trained_pair(17);
  Tensor x = tp.data.test_x.row(5);
  std::size_t y = tp.data.test_y[5];
  REQUIRE(predict(tp.target, x) == y);

  QueryOracle oracle(tp.target, QueryOracle::Mode::Score, 3000);
  Sampler sampler = Sampler::ods(tp.surrogates, 71);
  RgfAttackConfig cfg;
  cfg.norm = Norm::Linf;
  cfg.epsilon = 0.1;
  cfg.step = 0.02;
  BlackboxOutcome out = rgf_attack(oracle, x, y, sampler, cfg);
  CHECK(inside_ball(out.result.adversarial, x, cfg.epsilon, Norm::Linf));
  CHECK(out.result.queries == oracle.queries());
}
