#pragma once

#include <cstddef>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "atk/tensor.hpp"
#include "atk/util.hpp"

namespace atk {

struct ModelFormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ModelVersionError : ModelFormatError {
  using ModelFormatError::ModelFormatError;
};

// Fully connected classifier: ReLU on hidden layers, identity on the output.
// Parameter registry order: layer 0 weights (row-major), layer 0 biases,
// layer 1 weights, ... This order is the contract for gradients and
// serialization.
class MlpClassifier {
 public:
  MlpClassifier() = default;

  explicit MlpClassifier(std::vector<std::size_t> layer_sizes) : layer_sizes_(std::move(layer_sizes)) {
    validate_sizes();
    for (std::size_t l = 0; l + 1 < layer_sizes_.size(); ++l) {
      weights_.emplace_back(std::vector<std::size_t>{layer_sizes_[l], layer_sizes_[l + 1]});
      biases_.emplace_back(std::vector<std::size_t>{layer_sizes_[l + 1]});
    }
  }

  static MlpClassifier random_init(std::vector<std::size_t> layer_sizes, Rng& rng) {
    MlpClassifier m(std::move(layer_sizes));
    for (std::size_t l = 0; l < m.weights_.size(); ++l) {
      double scale = std::sqrt(2.0 / static_cast<double>(m.layer_sizes_[l]));
      for (double& w : m.weights_[l].values) w = normal_real(rng, 0.0, scale);
    }
    return m;
  }

  const std::vector<std::size_t>& layer_sizes() const { return layer_sizes_; }
  std::size_t input_dim() const { return layer_sizes_.front(); }
  std::size_t num_classes() const { return layer_sizes_.back(); }
  std::size_t num_layers() const { return weights_.size(); }

  const Tensor& weight(std::size_t l) const { return weights_[l]; }
  Tensor& weight(std::size_t l) { return weights_[l]; }
  const Tensor& bias(std::size_t l) const { return biases_[l]; }
  Tensor& bias(std::size_t l) { return biases_[l]; }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l < weights_.size(); ++l) n += weights_[l].size() + biases_[l].size();
    return n;
  }

  std::vector<double> get_params() const {
    std::vector<double> out;
    out.reserve(param_count());
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      out.insert(out.end(), weights_[l].values.begin(), weights_[l].values.end());
      out.insert(out.end(), biases_[l].values.begin(), biases_[l].values.end());
    }
    return out;
  }

  void set_params(const std::vector<double>& p) {
    if (p.size() != param_count()) throw DimensionError("set_params: registry size mismatch");
    std::size_t pos = 0;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      std::copy(p.begin() + pos, p.begin() + pos + weights_[l].size(), weights_[l].values.begin());
      pos += weights_[l].size();
      std::copy(p.begin() + pos, p.begin() + pos + biases_[l].size(), biases_[l].values.begin());
      pos += biases_[l].size();
    }
  }

 private:
  void validate_sizes() const {
    if (layer_sizes_.size() < 2) throw DimensionError("classifier needs at least input and output layers");
    for (std::size_t d : layer_sizes_)
      if (d == 0) throw DimensionError("zero-sized layer");
    if (layer_sizes_.back() < 2) throw DimensionError("classifier needs at least two output classes");
  }

  std::vector<std::size_t> layer_sizes_;
  std::vector<Tensor> weights_;
  std::vector<Tensor> biases_;
};

inline Tensor forward_logits(const MlpClassifier& m, const Tensor& x) {
  if (x.cols() != m.input_dim()) throw DimensionError("forward_logits: input width mismatch");
  Tensor a = x;
  for (std::size_t l = 0; l < m.num_layers(); ++l) {
    a = affine(a, m.weight(l), m.bias(l));
    if (l + 1 < m.num_layers()) a = relu(a);
  }
  return a;
}

// Argmax prediction for a single input row; ties break to the lowest index.
inline std::size_t predict(const MlpClassifier& m, const Tensor& x) {
  if (x.ndim() != 1) throw DimensionError("predict: rank-1 input expected");
  return argmax_index(forward_logits(m, x));
}

namespace detail {

inline std::string next_token(std::istream& in, const char* what) {
  std::string tok;
  if (!(in >> tok)) throw ModelFormatError(std::string("truncated file: expected ") + what);
  return tok;
}

inline void expect_token(std::istream& in, const std::string& want) {
  std::string tok = next_token(in, want.c_str());
  if (tok != want) throw ModelFormatError("malformed file: expected '" + want + "', got '" + tok + "'");
}

inline double read_double(std::istream& in, const char* what) {
  std::string tok = next_token(in, what);
  try {
    return parse_double(tok);
  } catch (const std::runtime_error& e) {
    throw ModelFormatError(std::string("malformed file: ") + e.what());
  }
}

inline std::uint64_t read_u64(std::istream& in, const char* what) {
  std::string tok = next_token(in, what);
  try {
    return parse_u64(tok);
  } catch (const std::runtime_error& e) {
    throw ModelFormatError(std::string("malformed file: ") + e.what());
  }
}

}  // namespace detail

constexpr int kModelFormatVersion = 1;

inline void save_model(const MlpClassifier& m, std::ostream& out) {
  out << "atkmodel " << kModelFormatVersion << "\n";
  out << "sizes " << m.layer_sizes().size();
  for (std::size_t d : m.layer_sizes()) out << ' ' << d;
  out << "\nparams " << m.param_count() << "\n";
  std::vector<double> p = m.get_params();
  for (std::size_t i = 0; i < p.size(); ++i) out << dtos(p[i]) << ((i + 1) % 8 == 0 ? '\n' : ' ');
  if (p.size() % 8 != 0) out << '\n';
  out << "end\n";
}

inline void save_model(const MlpClassifier& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ModelFormatError("cannot open model file for writing: " + path);
  save_model(m, out);
}

inline MlpClassifier load_model(std::istream& in) {
  detail::expect_token(in, "atkmodel");
  std::uint64_t version = detail::read_u64(in, "format version");
  if (version > kModelFormatVersion)
    throw ModelVersionError("model format version " + std::to_string(version) + " is newer than supported");
  if (version == 0) throw ModelFormatError("malformed file: version 0");

  detail::expect_token(in, "sizes");
  std::size_t n_sizes = detail::read_u64(in, "layer count");
  if (n_sizes < 2 || n_sizes > 64) throw ModelFormatError("malformed file: implausible layer count");
  std::vector<std::size_t> sizes(n_sizes);
  for (auto& d : sizes) d = detail::read_u64(in, "layer size");

  detail::expect_token(in, "params");
  std::size_t n_params = detail::read_u64(in, "parameter count");

  MlpClassifier m(sizes);
  if (n_params != m.param_count()) throw ModelFormatError("malformed file: parameter count disagrees with sizes");
  std::vector<double> p(n_params);
  for (auto& v : p) v = detail::read_double(in, "parameter value");
  detail::expect_token(in, "end");
  m.set_params(p);
  return m;
}

inline MlpClassifier load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ModelFormatError("cannot open model file: " + path);
  return load_model(in);
}

}  // namespace atk
