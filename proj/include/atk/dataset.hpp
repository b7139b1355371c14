#pragma once

#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "atk/tensor.hpp"
#include "atk/util.hpp"

namespace atk {

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Gaussian blob classes clipped to [0,1]^D. Class means share a common
// low-dimensional signal subspace while the noise is isotropic in all D
// dimensions, so classifiers trained on disjoint class subsets still share
// sensitive input directions.
struct DatasetSpec {
  std::size_t dims = 16;
  std::size_t classes = 2;
  std::size_t per_class = 100;
  std::uint64_t seed = 1;
  double sigma = 0.08;
  double separation = 0.45;      // minimum distance between class means
  std::size_t signal_dims = 0;   // 0 -> min(dims, 2*classes)
  double train_fraction = 0.8;

  std::size_t effective_signal_dims() const {
    std::size_t m = signal_dims == 0 ? std::min(dims, 2 * classes) : signal_dims;
    return std::min(m, dims);
  }

  void validate() const {
    if (dims < 2) throw DataError("degenerate spec: dims must be at least 2");
    if (classes < 2) throw DataError("degenerate spec: need at least 2 classes");
    if (per_class < 2) throw DataError("degenerate spec: need at least 2 samples per class");
    if (sigma <= 0.0 || separation <= 0.0) throw DataError("degenerate spec: sigma and separation must be positive");
    if (train_fraction <= 0.0 || train_fraction >= 1.0) throw DataError("degenerate spec: train_fraction in (0,1)");
  }
};

struct Dataset {
  DatasetSpec spec;
  Tensor train_x, test_x;  // {N, D}
  std::vector<std::size_t> train_y, test_y;

  std::size_t dims() const { return spec.dims; }
  std::size_t classes() const { return spec.classes; }
};

namespace detail {

// Orthonormal D x m basis via Gram-Schmidt on Gaussian draws.
inline std::vector<std::vector<double>> orthonormal_basis(std::size_t dims, std::size_t m, Rng& rng) {
  std::vector<std::vector<double>> basis;
  while (basis.size() < m) {
    std::vector<double> v(dims);
    for (double& x : v) x = normal_real(rng);
    for (const auto& b : basis) {
      double p = std::inner_product(v.begin(), v.end(), b.begin(), 0.0);
      for (std::size_t i = 0; i < dims; ++i) v[i] -= p * b[i];
    }
    double n = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
    if (n < 1e-8) continue;
    for (double& x : v) x /= n;
    basis.push_back(std::move(v));
  }
  return basis;
}

}  // namespace detail

inline Dataset generate_dataset(const DatasetSpec& spec) {
  spec.validate();
  Rng rng(mix_seed(spec.seed));
  std::size_t d = spec.dims, k = spec.classes, m = spec.effective_signal_dims();

  auto basis = detail::orthonormal_basis(d, m, rng);

  // Class means: offsets within the signal subspace, kept inside the box
  // with margin and pairwise separated.
  double radius = 0.4;
  std::vector<std::vector<double>> means;
  for (int attempt = 0; attempt < 20000 && means.size() < k; ++attempt) {
    std::vector<double> a(m);
    for (double& v : a) v = uniform_real(rng, -radius, radius);
    std::vector<double> mean(d, 0.5);
    for (std::size_t j = 0; j < m; ++j)
      for (std::size_t i = 0; i < d; ++i) mean[i] += a[j] * basis[j][i];
    bool ok = true;
    for (double v : mean)
      if (v < 0.08 || v > 0.92) ok = false;
    for (const auto& other : means) {
      double s = 0.0;
      for (std::size_t i = 0; i < d; ++i) s += (mean[i] - other[i]) * (mean[i] - other[i]);
      if (std::sqrt(s) < spec.separation) ok = false;
    }
    if (ok) means.push_back(std::move(mean));
  }
  if (means.size() < k) throw DataError("degenerate spec: could not place separated class means");

  std::size_t n_train_pc = static_cast<std::size_t>(spec.per_class * spec.train_fraction);
  if (n_train_pc == 0 || n_train_pc == spec.per_class) throw DataError("degenerate spec: empty split");
  std::size_t n_test_pc = spec.per_class - n_train_pc;

  // Draw per class, then interleave rows round-robin so any prefix of the
  // split stays class-balanced.
  std::vector<std::vector<std::vector<double>>> samples(k);
  for (std::size_t c = 0; c < k; ++c) {
    samples[c].resize(spec.per_class, std::vector<double>(d));
    for (auto& row : samples[c])
      for (std::size_t i = 0; i < d; ++i) row[i] = std::clamp(means[c][i] + spec.sigma * normal_real(rng), 0.0, 1.0);
  }

  Dataset out;
  out.spec = spec;
  out.train_x = Tensor({n_train_pc * k, d});
  out.test_x = Tensor({n_test_pc * k, d});
  out.train_y.resize(n_train_pc * k);
  out.test_y.resize(n_test_pc * k);
  for (std::size_t r = 0; r < n_train_pc; ++r)
    for (std::size_t c = 0; c < k; ++c) {
      std::size_t row = r * k + c;
      out.train_y[row] = c;
      for (std::size_t i = 0; i < d; ++i) out.train_x.at(row, i) = samples[c][r][i];
    }
  for (std::size_t r = 0; r < n_test_pc; ++r)
    for (std::size_t c = 0; c < k; ++c) {
      std::size_t row = r * k + c;
      out.test_y[row] = c;
      for (std::size_t i = 0; i < d; ++i) out.test_x.at(row, i) = samples[c][n_train_pc + r][i];
    }
  return out;
}

// Rows whose label is in [class_lo, class_hi), relabeled to start at 0.
// Used for class-disjoint surrogate training and for evaluation subsets.
inline Dataset class_slice(const Dataset& full, std::size_t class_lo, std::size_t class_hi) {
  if (class_lo >= class_hi || class_hi > full.classes()) throw DataError("class_slice: bad class range");
  Dataset out;
  out.spec = full.spec;
  out.spec.classes = class_hi - class_lo;
  auto slice = [&](const Tensor& x, const std::vector<std::size_t>& y, Tensor& ox, std::vector<std::size_t>& oy) {
    std::vector<std::size_t> keep;
    for (std::size_t r = 0; r < y.size(); ++r)
      if (y[r] >= class_lo && y[r] < class_hi) keep.push_back(r);
    ox = Tensor({keep.size(), full.dims()});
    oy.resize(keep.size());
    for (std::size_t i = 0; i < keep.size(); ++i) {
      oy[i] = y[keep[i]] - class_lo;
      for (std::size_t j = 0; j < full.dims(); ++j) ox.at(i, j) = x.at(keep[i], j);
    }
  };
  slice(full.train_x, full.train_y, out.train_x, out.train_y);
  slice(full.test_x, full.test_y, out.test_x, out.test_y);
  return out;
}

constexpr int kDatasetFormatVersion = 1;

inline void save_dataset(const Dataset& ds, std::ostream& out) {
  const DatasetSpec& s = ds.spec;
  out << "atkdata " << kDatasetFormatVersion << "\n";
  out << "dims " << s.dims << " classes " << s.classes << " per_class " << s.per_class << " seed " << s.seed
      << " sigma " << dtos(s.sigma) << " separation " << dtos(s.separation) << " signal_dims "
      << s.effective_signal_dims() << " train_fraction " << dtos(s.train_fraction) << "\n";
  auto dump = [&](const char* tag, const Tensor& x, const std::vector<std::size_t>& y) {
    out << tag << ' ' << y.size() << "\n";
    for (std::size_t r = 0; r < y.size(); ++r) {
      out << y[r];
      for (std::size_t i = 0; i < x.cols(); ++i) out << ' ' << dtos(x.at(r, i));
      out << "\n";
    }
  };
  dump("train", ds.train_x, ds.train_y);
  dump("test", ds.test_x, ds.test_y);
  out << "end\n";
}

inline void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open dataset file for writing: " + path);
  save_dataset(ds, out);
}

inline Dataset load_dataset(std::istream& in) {
  auto tok = [&](const char* what) {
    std::string t;
    if (!(in >> t)) throw DataError(std::string("truncated dataset file: expected ") + what);
    return t;
  };
  auto expect = [&](const std::string& want) {
    std::string t = tok(want.c_str());
    if (t != want) throw DataError("malformed dataset file: expected '" + want + "', got '" + t + "'");
  };

  expect("atkdata");
  std::uint64_t version = parse_u64(tok("version"));
  if (version > kDatasetFormatVersion) throw DataError("dataset format version newer than supported");

  Dataset ds;
  DatasetSpec& s = ds.spec;
  expect("dims");
  s.dims = parse_u64(tok("dims"));
  expect("classes");
  s.classes = parse_u64(tok("classes"));
  expect("per_class");
  s.per_class = parse_u64(tok("per_class"));
  expect("seed");
  s.seed = parse_u64(tok("seed"));
  expect("sigma");
  s.sigma = parse_double(tok("sigma"));
  expect("separation");
  s.separation = parse_double(tok("separation"));
  expect("signal_dims");
  s.signal_dims = parse_u64(tok("signal_dims"));
  expect("train_fraction");
  s.train_fraction = parse_double(tok("train_fraction"));

  auto read_block = [&](const char* tag, Tensor& x, std::vector<std::size_t>& y) {
    expect(tag);
    std::size_t n = parse_u64(tok("row count"));
    x = Tensor({std::max<std::size_t>(n, 1), s.dims});
    y.resize(n);
    for (std::size_t r = 0; r < n; ++r) {
      y[r] = parse_u64(tok("label"));
      if (y[r] >= s.classes) throw DataError("malformed dataset file: label out of range");
      for (std::size_t i = 0; i < s.dims; ++i) x.at(r, i) = parse_double(tok("feature"));
    }
  };
  read_block("train", ds.train_x, ds.train_y);
  read_block("test", ds.test_x, ds.test_y);
  expect("end");
  return ds;
}

inline Dataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset file: " + path);
  return load_dataset(in);
}

}  // namespace atk
