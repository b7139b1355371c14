#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace atk {

struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct NonFiniteError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Dense row-major tensor of doubles. Rank 1 for single inputs/logits,
// rank 2 for batches and weight matrices.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> values;

  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> s) : shape(std::move(s)), values(element_count(shape), 0.0) {}

  Tensor(std::vector<std::size_t> s, std::vector<double> v) : shape(std::move(s)), values(std::move(v)) {
    if (values.size() != element_count(shape)) throw DimensionError("value count does not match shape");
  }

  static std::size_t element_count(const std::vector<std::size_t>& s) {
    if (s.empty()) throw DimensionError("empty shape");
    std::size_t n = 1;
    for (std::size_t d : s) {
      if (d == 0) throw DimensionError("zero-sized dimension");
      n *= d;
    }
    return n;
  }

  std::size_t size() const { return values.size(); }
  std::size_t ndim() const { return shape.size(); }

  std::size_t rows() const {
    if (ndim() == 1) return 1;
    if (ndim() == 2) return shape[0];
    throw DimensionError("rows() needs rank 1 or 2");
  }

  std::size_t cols() const {
    if (ndim() == 1) return shape[0];
    if (ndim() == 2) return shape[1];
    throw DimensionError("cols() needs rank 1 or 2");
  }

  double& operator[](std::size_t i) { return values[i]; }
  double operator[](std::size_t i) const { return values[i]; }

  double& at(std::size_t r, std::size_t c) { return values[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return values[r * cols() + c]; }

  // Row r as a rank-1 tensor (copy).
  Tensor row(std::size_t r) const {
    std::size_t w = cols();
    Tensor out({w});
    std::copy(values.begin() + r * w, values.begin() + (r + 1) * w, out.values.begin());
    return out;
  }

  bool same_shape(const Tensor& other) const { return shape == other.shape; }
};

inline bool all_finite(const Tensor& t) {
  for (double v : t.values)
    if (!std::isfinite(v)) return false;
  return true;
}

inline void require_finite(const Tensor& t, const char* what) {
  if (!all_finite(t)) throw NonFiniteError(std::string("non-finite values in ") + what);
}

// out[b,j] = sum_i in[b,i] * w[i,j] + bias[j]
inline Tensor affine(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  std::size_t b = input.rows(), m = input.cols();
  if (weight.ndim() != 2 || weight.shape[0] != m) throw DimensionError("affine: inner dimensions disagree");
  std::size_t n = weight.shape[1];
  if (bias.ndim() != 1 || bias.shape[0] != n) throw DimensionError("affine: bias length mismatch");

  Tensor out(input.ndim() == 1 ? std::vector<std::size_t>{n} : std::vector<std::size_t>{b, n});
  for (std::size_t r = 0; r < b; ++r) {
    const double* in_row = input.values.data() + r * m;
    double* out_row = out.values.data() + r * n;
    for (std::size_t j = 0; j < n; ++j) out_row[j] = bias[j];
    for (std::size_t i = 0; i < m; ++i) {
      double x = in_row[i];
      const double* w_row = weight.values.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) out_row[j] += x * w_row[j];
    }
  }
  require_finite(out, "affine output");
  return out;
}

inline Tensor relu(const Tensor& input) {
  Tensor out = input;
  for (double& v : out.values) v = v > 0.0 ? v : 0.0;
  return out;
}

// -log softmax(logits)[label], max-subtracted for stability.
inline double softmax_cross_entropy(const Tensor& logits, std::size_t label) {
  if (logits.ndim() != 1) throw DimensionError("softmax_cross_entropy: rank-1 logits expected");
  std::size_t c = logits.size();
  if (label >= c) throw std::out_of_range("softmax_cross_entropy: label out of range");
  double m = logits[0];
  for (std::size_t i = 1; i < c; ++i) m = std::max(m, logits[i]);
  double s = 0.0;
  for (std::size_t i = 0; i < c; ++i) s += std::exp(logits[i] - m);
  double loss = std::log(s) + m - logits[label];
  if (!std::isfinite(loss)) throw NonFiniteError("softmax_cross_entropy diverged");
  return loss;
}

// Lowest index attaining the maximum.
inline std::size_t argmax_index(const Tensor& logits) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i)
    if (logits[i] > logits[best]) best = i;
  return best;
}

// Lowest index i != label maximizing logits[i].
inline std::size_t best_other_index(const Tensor& logits, std::size_t label) {
  std::size_t c = logits.size();
  if (c < 2) throw std::invalid_argument("best_other_index: need at least two classes");
  if (label >= c) throw std::out_of_range("best_other_index: label out of range");
  std::size_t best = label == 0 ? 1 : 0;
  for (std::size_t i = best + 1; i < c; ++i)
    if (i != label && logits[i] > logits[best]) best = i;
  return best;
}

// max_{i != label} logits[i] - logits[label]; positive iff misclassified
// (unique argmax case).
inline double margin_loss(const Tensor& logits, std::size_t label) {
  return logits[best_other_index(logits, label)] - logits[label];
}

inline double l2_norm(const Tensor& t) {
  double s = 0.0;
  for (double v : t.values) s += v * v;
  return std::sqrt(s);
}

inline double linf_norm(const Tensor& t) {
  double m = 0.0;
  for (double v : t.values) m = std::max(m, std::abs(v));
  return m;
}

inline double dot(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw DimensionError("dot: shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw DimensionError("sub: shape mismatch");
  Tensor out = a;
  for (std::size_t i = 0; i < b.size(); ++i) out[i] -= b[i];
  return out;
}

inline Tensor add_scaled(const Tensor& a, const Tensor& b, double scale) {
  if (!a.same_shape(b)) throw DimensionError("add_scaled: shape mismatch");
  Tensor out = a;
  for (std::size_t i = 0; i < b.size(); ++i) out[i] += scale * b[i];
  return out;
}

inline Tensor scaled(const Tensor& a, double scale) {
  Tensor out = a;
  for (double& v : out.values) v *= scale;
  return out;
}

inline double l2_dist(const Tensor& a, const Tensor& b) { return l2_norm(sub(a, b)); }

inline double linf_dist(const Tensor& a, const Tensor& b) { return linf_norm(sub(a, b)); }

inline Tensor clamp01(const Tensor& t) {
  Tensor out = t;
  for (double& v : out.values) v = std::clamp(v, 0.0, 1.0);
  return out;
}

}  // namespace atk
