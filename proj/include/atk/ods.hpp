#pragma once

#include <vector>

#include "atk/autodiff.hpp"
#include "atk/mlp.hpp"
#include "atk/util.hpp"

namespace atk {

struct DegenerateDirectionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Output-space direction driving the sampler.
struct DirectionVector {
  std::vector<double> w;
};

struct SurrogateEnsemble {
  std::vector<MlpClassifier> models;

  void validate() const {
    if (models.empty()) throw std::invalid_argument("surrogate ensemble must be nonempty");
    for (const auto& m : models)
      if (m.input_dim() != models.front().input_dim() || m.num_classes() != models.front().num_classes())
        throw DimensionError("surrogate ensemble models disagree on input dim or class count");
  }

  std::size_t input_dim() const { return models.front().input_dim(); }
  std::size_t num_classes() const { return models.front().num_classes(); }
};

// i.i.d. uniform over [-1,1]^C, resampled in the (measure-zero) all-zero case.
inline DirectionVector sample_direction(std::size_t num_classes, Rng& rng) {
  if (num_classes < 2) throw std::invalid_argument("sample_direction: need at least two classes");
  DirectionVector d;
  d.w.resize(num_classes);
  for (;;) {
    bool nonzero = false;
    for (double& v : d.w) {
      v = uniform_real(rng, -1.0, 1.0);
      nonzero |= v != 0.0;
    }
    if (nonzero) return d;
  }
}

// Unit-norm input-space direction maximizing growth of w_d . f(x).
inline Tensor ods_vector(const Tensor& x, const MlpClassifier& model, const DirectionVector& wd) {
  auto [value, grad] = value_and_input_grad(model, x, ScalarHead::linear(wd.w));
  (void)value;
  double n = l2_norm(grad.wrt_input);
  if (n == 0.0) throw DegenerateDirectionError("zero gradient for sampled output direction");
  return scaled(grad.wrt_input, 1.0 / n);
}

inline Tensor random_unit_vector(std::size_t dims, Rng& rng) {
  Tensor v({dims});
  for (;;) {
    for (double& x : v.values) x = normal_real(rng);
    double n = l2_norm(v);
    if (n > 1e-12) return scaled(v, 1.0 / n);
  }
}

// Degenerate-direction policy: resample w_d a few times, then fall back to a
// random unit input-space vector so callers always get a direction.
inline Tensor ods_vector_or_random(const Tensor& x, const MlpClassifier& model, Rng& rng, int max_tries = 10) {
  for (int t = 0; t < max_tries; ++t) {
    try {
      return ods_vector(x, model, sample_direction(model.num_classes(), rng));
    } catch (const DegenerateDirectionError&) {
    }
  }
  return random_unit_vector(x.size(), rng);
}

// +1 on the target class, -1 on the original class, 0 elsewhere.
inline DirectionVector multitargeted_direction(std::size_t y, std::size_t t, std::size_t num_classes) {
  if (y >= num_classes || t >= num_classes) throw std::out_of_range("multitargeted_direction: class out of range");
  if (y == t) throw std::invalid_argument("multitargeted_direction: target equals original label");
  DirectionVector d;
  d.w.assign(num_classes, 0.0);
  d.w[t] = 1.0;
  d.w[y] = -1.0;
  return d;
}

inline const MlpClassifier& pick_surrogate(const SurrogateEnsemble& ensemble, Rng& rng) {
  ensemble.validate();
  return ensemble.models[uniform_index(rng, ensemble.models.size())];
}

}  // namespace atk
