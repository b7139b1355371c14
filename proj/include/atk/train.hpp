#pragma once

#include <algorithm>
#include <numeric>
#include <optional>
#include <vector>

#include "atk/autodiff.hpp"
#include "atk/dataset.hpp"
#include "atk/mlp.hpp"
#include "atk/whitebox.hpp"

namespace atk {

struct TrainingDivergedError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class TrainOptimizer { Sgd, Adam };

// (epoch threshold, rate): rate applies while epoch < threshold.
struct LrSchedule {
  std::vector<std::pair<std::size_t, double>> entries;

  static LrSchedule constant(double rate) { return {{{std::numeric_limits<std::size_t>::max(), rate}}}; }

  void validate() const {
    if (entries.empty()) throw std::invalid_argument("empty learning-rate schedule");
    std::size_t prev = 0;
    bool first = true;
    for (const auto& [threshold, rate] : entries) {
      if (rate <= 0.0) throw std::invalid_argument("learning rates must be positive");
      if (!first && threshold <= prev) throw std::invalid_argument("schedule thresholds must increase strictly");
      prev = threshold;
      first = false;
    }
  }

  double at(std::size_t epoch) const {
    for (const auto& [threshold, rate] : entries)
      if (epoch < threshold) return rate;
    return entries.back().second;
  }
};

// Inner PGD settings for adversarial training.
struct AdversarialTrainConfig {
  double epsilon = 0.1;
  double eta = 0.02;
  std::size_t steps = 7;
};

struct TrainConfig {
  std::size_t epochs = 50;
  std::size_t batch_size = 32;
  TrainOptimizer optimizer = TrainOptimizer::Adam;
  LrSchedule schedule = LrSchedule::constant(1e-3);
  double weight_decay = 0.0;
  std::uint64_t seed = 1;
  std::optional<AdversarialTrainConfig> adversarial;
};

struct TrainReport {
  std::vector<double> epoch_loss;
  double train_accuracy = 0.0;
};

inline double accuracy(const MlpClassifier& m, const Tensor& x, const std::vector<std::size_t>& y) {
  if (y.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t r = 0; r < y.size(); ++r)
    if (predict(m, x.row(r)) == y[r]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(y.size());
}

namespace detail {

// Mean cross-entropy over the batch plus L2 weight decay; gradient lands in
// `grad` (registry order).
inline double batch_loss_and_grad(const MlpClassifier& m, const Tensor& batch_x,
                                  const std::vector<std::size_t>& batch_y, double weight_decay,
                                  std::vector<double>& grad) {
  std::size_t n = batch_y.size();
  grad.assign(m.param_count(), 0.0);
  double loss = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    auto [value, g] = value_and_input_grad(m, batch_x.row(r), ScalarHead::cross_entropy(batch_y[r]), true);
    loss += value;
    for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += g.wrt_params[i];
  }
  double inv = 1.0 / static_cast<double>(n);
  loss *= inv;
  for (double& g : grad) g *= inv;
  if (weight_decay > 0.0) {
    std::vector<double> p = m.get_params();
    for (std::size_t i = 0; i < p.size(); ++i) {
      grad[i] += weight_decay * p[i];
      loss += 0.5 * weight_decay * p[i] * p[i];
    }
  }
  return loss;
}

}  // namespace detail

// Deterministic under a fixed seed: init, shuffling, and adversarial starts
// all draw from the config seed, and accumulation order is fixed.
inline TrainReport train(MlpClassifier& model, const Tensor& x, const std::vector<std::size_t>& y,
                         const TrainConfig& cfg) {
  if (y.empty()) throw std::invalid_argument("train: empty dataset");
  if (x.rows() != y.size()) throw DimensionError("train: feature/label count mismatch");
  for (std::size_t label : y)
    if (label >= model.num_classes()) throw std::out_of_range("train: label out of range");
  cfg.schedule.validate();
  if (cfg.batch_size == 0) throw std::invalid_argument("train: batch size must be positive");

  TrainReport report;
  if (cfg.epochs == 0) {
    report.train_accuracy = accuracy(model, x, y);
    return report;
  }

  Rng rng(mix_seed(cfg.seed));
  std::vector<double> params = model.get_params();
  std::vector<double> grad;
  std::vector<double> adam_m(params.size(), 0.0), adam_v(params.size(), 0.0);
  std::size_t adam_t = 0;

  // Sign-PGD on the cross-entropy loss from a uniform start; the final
  // iterate is what enters the loss step.
  auto perturb = [&](Tensor row, std::size_t label) {
    const AdversarialTrainConfig& adv = *cfg.adversarial;
    Tensor x_adv = uniform_ball_sample(row, adv.epsilon, Norm::Linf, rng);
    for (std::size_t k = 0; k < adv.steps; ++k) {
      auto [value, g] = value_and_input_grad(model, x_adv, ScalarHead::cross_entropy(label));
      (void)value;
      for (std::size_t i = 0; i < x_adv.size(); ++i) {
        double gi = g.wrt_input[i];
        x_adv[i] += adv.eta * (gi > 0.0 ? 1.0 : (gi < 0.0 ? -1.0 : 0.0));
      }
      x_adv = project_ball(x_adv, row, adv.epsilon, Norm::Linf);
    }
    return x_adv;
  };

  std::vector<std::size_t> order(y.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double lr = cfg.schedule.at(epoch);
    double epoch_loss = 0.0;
    std::size_t n_batches = 0;

    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      std::size_t end = std::min(order.size(), start + cfg.batch_size);
      Tensor batch_x({end - start, model.input_dim()});
      std::vector<std::size_t> batch_y(end - start);
      for (std::size_t i = start; i < end; ++i) {
        Tensor row = x.row(order[i]);
        if (cfg.adversarial) row = perturb(std::move(row), y[order[i]]);
        std::copy(row.values.begin(), row.values.end(), batch_x.values.begin() + (i - start) * model.input_dim());
        batch_y[i - start] = y[order[i]];
      }

      double loss = detail::batch_loss_and_grad(model, batch_x, batch_y, cfg.weight_decay, grad);
      if (!std::isfinite(loss)) throw TrainingDivergedError("training loss is not finite");
      epoch_loss += loss;
      ++n_batches;

      if (cfg.optimizer == TrainOptimizer::Sgd) {
        for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr * grad[i];
      } else {
        ++adam_t;
        double c1 = 1.0 - std::pow(0.9, static_cast<double>(adam_t));
        double c2 = 1.0 - std::pow(0.999, static_cast<double>(adam_t));
        for (std::size_t i = 0; i < params.size(); ++i) {
          adam_m[i] = 0.9 * adam_m[i] + 0.1 * grad[i];
          adam_v[i] = 0.999 * adam_v[i] + 0.001 * grad[i] * grad[i];
          params[i] -= lr * (adam_m[i] / c1) / (std::sqrt(adam_v[i] / c2) + 1e-8);
        }
      }
      model.set_params(params);
    }
    report.epoch_loss.push_back(epoch_loss / static_cast<double>(n_batches));
  }

  report.train_accuracy = accuracy(model, x, y);
  return report;
}

inline TrainReport train(MlpClassifier& model, const Dataset& data, const TrainConfig& cfg) {
  return train(model, data.train_x, data.train_y, cfg);
}

}  // namespace atk
