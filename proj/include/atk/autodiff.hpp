#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "atk/mlp.hpp"
#include "atk/tensor.hpp"

namespace atk {

// Scalar heads reducing logits to the value being differentiated:
// cross-entropy and margin take the true label, linear contracts the
// logits with a fixed output-space direction.
enum class HeadKind { CrossEntropy, Margin, Linear };

struct ScalarHead {
  HeadKind kind = HeadKind::CrossEntropy;
  std::size_t label = 0;
  std::vector<double> direction;

  static ScalarHead cross_entropy(std::size_t label) { return {HeadKind::CrossEntropy, label, {}}; }
  static ScalarHead margin(std::size_t label) { return {HeadKind::Margin, label, {}}; }
  static ScalarHead linear(std::vector<double> direction) { return {HeadKind::Linear, 0, std::move(direction)}; }
};

struct Gradient {
  Tensor wrt_input;
  std::vector<double> wrt_params;  // aligned with MlpClassifier's registry; empty unless requested
};

// Head value and d(value)/d(logits). Margin ties resolve to the lowest
// qualifying index, so the subgradient choice is deterministic.
inline double head_value_and_logit_grad(const ScalarHead& head, const Tensor& logits, std::vector<double>& dlogits) {
  std::size_t c = logits.size();
  dlogits.assign(c, 0.0);
  switch (head.kind) {
    case HeadKind::CrossEntropy: {
      if (head.label >= c) throw std::out_of_range("cross-entropy head: label out of range");
      double m = logits[0];
      for (std::size_t i = 1; i < c; ++i) m = std::max(m, logits[i]);
      double s = 0.0;
      for (std::size_t i = 0; i < c; ++i) s += std::exp(logits[i] - m);
      for (std::size_t i = 0; i < c; ++i) dlogits[i] = std::exp(logits[i] - m) / s;
      dlogits[head.label] -= 1.0;
      return std::log(s) + m - logits[head.label];
    }
    case HeadKind::Margin: {
      std::size_t other = best_other_index(logits, head.label);
      dlogits[other] = 1.0;
      dlogits[head.label] = -1.0;
      return logits[other] - logits[head.label];
    }
    case HeadKind::Linear: {
      if (head.direction.size() != c) throw DimensionError("linear head: direction length mismatch");
      double v = 0.0;
      for (std::size_t i = 0; i < c; ++i) {
        dlogits[i] = head.direction[i];
        v += head.direction[i] * logits[i];
      }
      return v;
    }
  }
  throw std::logic_error("unreachable head kind");
}

// Exact reverse-mode gradient of head(f(x)) for a single input row.
// ReLU uses the zero subgradient at kinks.
inline std::pair<double, Gradient> value_and_input_grad(const MlpClassifier& m, const Tensor& x,
                                                        const ScalarHead& head, bool with_params = false) {
  if (x.ndim() != 1 || x.size() != m.input_dim()) throw DimensionError("value_and_input_grad: rank-1 input of width D expected");

  std::size_t n_layers = m.num_layers();
  std::vector<Tensor> activations(n_layers + 1);  // activations[l] feeds layer l
  std::vector<Tensor> pre(n_layers);              // pre-activation outputs per layer
  activations[0] = x;
  for (std::size_t l = 0; l < n_layers; ++l) {
    pre[l] = affine(activations[l], m.weight(l), m.bias(l));
    activations[l + 1] = (l + 1 < n_layers) ? relu(pre[l]) : pre[l];
  }

  std::vector<double> delta;
  double value = head_value_and_logit_grad(head, activations[n_layers], delta);

  Gradient grad;
  if (with_params) grad.wrt_params.assign(m.param_count(), 0.0);

  // Registry offsets of each layer's block, walked back-to-front.
  std::vector<std::size_t> offsets(n_layers, 0);
  if (with_params) {
    std::size_t pos = 0;
    for (std::size_t l = 0; l < n_layers; ++l) {
      offsets[l] = pos;
      pos += m.weight(l).size() + m.bias(l).size();
    }
  }

  for (std::size_t li = n_layers; li-- > 0;) {
    const Tensor& w = m.weight(li);
    const Tensor& a_in = activations[li];
    std::size_t in_w = w.shape[0], out_w = w.shape[1];

    if (with_params) {
      double* gw = grad.wrt_params.data() + offsets[li];
      double* gb = gw + w.size();
      for (std::size_t i = 0; i < in_w; ++i)
        for (std::size_t j = 0; j < out_w; ++j) gw[i * out_w + j] += a_in[i] * delta[j];
      for (std::size_t j = 0; j < out_w; ++j) gb[j] += delta[j];
    }

    std::vector<double> prev(in_w, 0.0);
    for (std::size_t i = 0; i < in_w; ++i) {
      const double* w_row = w.values.data() + i * out_w;
      double s = 0.0;
      for (std::size_t j = 0; j < out_w; ++j) s += w_row[j] * delta[j];
      prev[i] = s;
    }
    if (li > 0) {
      const Tensor& z = pre[li - 1];
      for (std::size_t i = 0; i < in_w; ++i)
        if (z[i] <= 0.0) prev[i] = 0.0;
    }
    delta = std::move(prev);
  }

  grad.wrt_input = Tensor(x.shape, std::move(delta));
  require_finite(grad.wrt_input, "input gradient");
  return {value, std::move(grad)};
}

// Central-difference approximation, one coordinate at a time.
inline Tensor finite_diff_grad(const std::function<double(const Tensor&)>& eval, const Tensor& x, double step) {
  if (step <= 0.0) throw std::invalid_argument("finite_diff_grad: step must be positive");
  Tensor g(x.shape);
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double orig = probe[i];
    probe[i] = orig + step;
    double up = eval(probe);
    probe[i] = orig - step;
    double down = eval(probe);
    probe[i] = orig;
    g[i] = (up - down) / (2.0 * step);
  }
  return g;
}

// max_i |a_i - b_i| scaled by max(1, ||b||_inf); the gradient-check metric.
inline double max_relative_error(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw DimensionError("max_relative_error: shape mismatch");
  double num = 0.0, scale = 1.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num = std::max(num, std::abs(a[i] - b[i]));
    scale = std::max(scale, std::abs(b[i]));
  }
  return num / scale;
}

}  // namespace atk
