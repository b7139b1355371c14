#include <catch2/catch_amalgamated.hpp>

#include "atk/autodiff.hpp"
#include "atk/ods.hpp"

using namespace atk;

namespace {

MlpClassifier identity_model(std::size_t n) {
  MlpClassifier m({n, n});
  for (std::size_t i = 0; i < n; ++i) m.weight(0).at(i, i) = 1.0;
  return m;
}

Tensor random_input(std::size_t n, Rng& rng) {
  Tensor x({n});
  for (double& v : x.values) v = uniform_real(rng, 0.1, 0.9);
  return x;
}

}  // namespace

TEST_CASE("sample_direction is seeded-reproducible and in range") {
  Rng a(5), b(5);
  DirectionVector da = sample_direction(6, a);
  DirectionVector db = sample_direction(6, b);
  CHECK(da.w == db.w);

  Rng rng(7);
  for (int t = 0; t < 100; ++t) {
    DirectionVector d = sample_direction(4, rng);
    bool nonzero = false;
    for (double v : d.w) {
      CHECK(v >= -1.0);
      CHECK(v <= 1.0);
      nonzero |= v != 0.0;
    }
    CHECK(nonzero);
  }
}

TEST_CASE("sample_direction component means vanish over many draws") {
  Rng rng(11);
  std::size_t c = 5, n = 10000;
  std::vector<double> mean(c, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    DirectionVector d = sample_direction(c, rng);
    for (std::size_t j = 0; j < c; ++j) mean[j] += d.w[j];
  }
  for (std::size_t j = 0; j < c; ++j) CHECK(std::abs(mean[j] / static_cast<double>(n)) < 0.05);
}

TEST_CASE("ods_vector identity closed form") {
  MlpClassifier m = identity_model(4);
  Tensor x({4}, {0.2, 0.4, 0.6, 0.8});
  DirectionVector wd{{1.0, 0.0, 0.0, 0.0}};
  Tensor v = ods_vector(x, m, wd);
  CHECK(v.values == std::vector<double>{1.0, 0.0, 0.0, 0.0});
}

TEST_CASE("ods_vector has unit norm and matches finite differences") {
  Rng rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    MlpClassifier m = MlpClassifier::random_init({6, 10, 4}, rng);
    Tensor x = random_input(6, rng);
    DirectionVector wd = sample_direction(4, rng);

    Tensor v = ods_vector(x, m, wd);
    CHECK(std::abs(l2_norm(v) - 1.0) <= 1e-9);

    Tensor fd = finite_diff_grad(
        [&](const Tensor& p) { return value_and_input_grad(m, p, ScalarHead::linear(wd.w)).first; }, x, 1e-4);
    Tensor fd_unit = scaled(fd, 1.0 / l2_norm(fd));
    CHECK(max_relative_error(fd_unit, v) < 1e-4);
  }
}

TEST_CASE("ods_vector is exactly invariant to power-of-two rescaling of w_d") {
  Rng rng(17);
  MlpClassifier m = MlpClassifier::random_init({5, 8, 3}, rng);
  Tensor x = random_input(5, rng);
  DirectionVector wd = sample_direction(3, rng);

  Tensor base = ods_vector(x, m, wd);
  for (double c : {0.5, 2.0, 1024.0, 0.0078125}) {
    DirectionVector scaled_wd;
    for (double w : wd.w) scaled_wd.w.push_back(c * w);
    Tensor v = ods_vector(x, m, scaled_wd);
    CHECK(v.values == base.values);  // bit-exact
  }
  // arbitrary positive scale: equal up to rounding
  DirectionVector odd;
  for (double w : wd.w) odd.w.push_back(3.7 * w);
  Tensor v = ods_vector(x, m, odd);
  for (std::size_t i = 0; i < v.size(); ++i) CHECK(v[i] == Catch::Approx(base[i]).margin(1e-12));
}

TEST_CASE("zero gradient raises the degenerate-direction error") {
  MlpClassifier dead({3, 2});  // zero weights: gradient vanishes everywhere
  Tensor x({3}, {0.5, 0.5, 0.5});
  DirectionVector wd{{1.0, -0.5}};
  CHECK_THROWS_AS(ods_vector(x, dead, wd), DegenerateDirectionError);

  // fallback wrapper still produces a unit vector
  Rng rng(19);
  Tensor v = ods_vector_or_random(x, dead, rng);
  CHECK(std::abs(l2_norm(v) - 1.0) <= 1e-9);
}

TEST_CASE("multitargeted direction layout") {
  DirectionVector d = multitargeted_direction(2, 0, 4);
  CHECK(d.w == std::vector<double>{1.0, 0.0, -1.0, 0.0});

  DirectionVector b = multitargeted_direction(0, 1, 2);
  CHECK(b.w == std::vector<double>{-1.0, 1.0});

  CHECK_THROWS_AS(multitargeted_direction(1, 1, 3), std::invalid_argument);
  CHECK_THROWS_AS(multitargeted_direction(5, 0, 3), std::out_of_range);
}

TEST_CASE("multitargeted direction contracts logits to f_t - f_y") {
  Rng rng(23);
  for (int t = 0; t < 30; ++t) {
    Tensor logits({5});
    for (double& v : logits.values) v = uniform_real(rng, -3.0, 3.0);
    std::size_t y = t % 5, tgt = (y + 1 + t % 4) % 5;
    if (tgt == y) continue;
    DirectionVector d = multitargeted_direction(y, tgt, 5);
    double combo = 0.0;
    for (std::size_t i = 0; i < 5; ++i) combo += d.w[i] * logits[i];
    CHECK(combo == Catch::Approx(logits[tgt] - logits[y]).epsilon(1e-12));
  }
}

TEST_CASE("pick_surrogate is uniform and seed-stable") {
  Rng rng(29);
  SurrogateEnsemble ensemble;
  for (int i = 0; i < 4; ++i) ensemble.models.push_back(MlpClassifier::random_init({4, 5, 3}, rng));

  SurrogateEnsemble single;
  single.models.push_back(ensemble.models[0]);
  Rng r1(1);
  for (int i = 0; i < 10; ++i) CHECK(&pick_surrogate(single, r1) == &single.models[0]);

  std::vector<std::size_t> counts(4, 0);
  Rng r2(31);
  for (int i = 0; i < 10000; ++i) {
    const MlpClassifier* p = &pick_surrogate(ensemble, r2);
    counts[p - ensemble.models.data()]++;
  }
  for (std::size_t c : counts) CHECK(std::abs(c / 10000.0 - 0.25) < 0.03);

  Rng r3(7), r4(7);
  for (int i = 0; i < 20; ++i) CHECK(&pick_surrogate(ensemble, r3) == &pick_surrogate(ensemble, r4));

  SurrogateEnsemble empty;
  CHECK_THROWS_AS(pick_surrogate(empty, r3), std::invalid_argument);
}
