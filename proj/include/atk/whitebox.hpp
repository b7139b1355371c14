#pragma once

#include <limits>
#include <optional>
#include <utility>
#include <vector>

#include "atk/autodiff.hpp"
#include "atk/mlp.hpp"
#include "atk/ods.hpp"
#include "atk/tensor.hpp"
#include "atk/util.hpp"

namespace atk {

enum class Norm { Linf, L2 };
enum class AttackLoss { Margin, CrossEntropy };
enum class StepRule { Sign, Adam };
enum class InitKind { Uniform, Odi, MultiTargeted };

// Piecewise-constant step size: `size` applies while step < threshold;
// steps past the last threshold keep the last size.
struct StepSchedule {
  std::vector<std::pair<std::size_t, double>> entries;

  static StepSchedule constant(double size) { return {{{std::numeric_limits<std::size_t>::max(), size}}}; }

  void validate() const {
    if (entries.empty()) throw std::invalid_argument("empty step schedule");
    std::size_t prev = 0;
    bool first = true;
    for (const auto& [threshold, size] : entries) {
      if (size <= 0.0) throw std::invalid_argument("step sizes must be positive");
      if (!first && threshold <= prev) throw std::invalid_argument("schedule thresholds must increase strictly");
      prev = threshold;
      first = false;
    }
  }

  double at(std::size_t step) const {
    for (const auto& [threshold, size] : entries)
      if (step < threshold) return size;
    return entries.back().second;
  }
};

struct WhiteboxAttackConfig {
  Norm norm = Norm::Linf;
  double epsilon = 0.1;
  StepSchedule eta = StepSchedule::constant(0.02);
  std::size_t steps = 20;
  std::size_t restarts = 1;
  AttackLoss loss = AttackLoss::Margin;
  StepRule optimizer = StepRule::Sign;
  InitKind init = InitKind::Uniform;
  std::size_t odi_steps = 2;
  double odi_eta = 0.0;  // 0 -> epsilon
  bool early_stop = true;

  double odi_step_size() const { return odi_eta > 0.0 ? odi_eta : epsilon; }

  void validate() const {
    if (epsilon <= 0.0) throw std::invalid_argument("epsilon must be positive");
    if (steps < 1 || restarts < 1) throw std::invalid_argument("steps and restarts must be at least 1");
    eta.validate();
  }
};

struct AttackResult {
  Tensor adversarial;
  bool success = false;
  double perturbation_norm = 0.0;
  std::size_t restarts_used = 0;
  double best_loss = -std::numeric_limits<double>::infinity();
  std::size_t success_step = SIZE_MAX;
  std::size_t queries = 0;  // black-box attacks only
};

inline double lp_dist(const Tensor& a, const Tensor& b, Norm norm) {
  return norm == Norm::Linf ? linf_dist(a, b) : l2_dist(a, b);
}

// Norm-ball projection followed by the pixel-box clip. The box clip can only
// shrink coordinate-wise distances to a point inside the box, so the result
// stays within B_eps(origin).
inline Tensor project_ball(const Tensor& candidate, const Tensor& origin, double epsilon, Norm norm) {
  if (!candidate.same_shape(origin)) throw DimensionError("project_ball: shape mismatch");
  Tensor out = candidate;
  if (norm == Norm::Linf) {
    for (std::size_t i = 0; i < out.size(); ++i)
      out[i] = std::clamp(out[i], origin[i] - epsilon, origin[i] + epsilon);
  } else {
    double d = l2_dist(candidate, origin);
    if (d > epsilon) {
      double f = epsilon / d;
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = origin[i] + f * (out[i] - origin[i]);
    }
  }
  return clamp01(out);
}

inline bool inside_ball(const Tensor& p, const Tensor& origin, double epsilon, Norm norm, double slack = 1e-9) {
  if (lp_dist(p, origin, norm) > epsilon + slack) return false;
  for (double v : p.values)
    if (v < -slack || v > 1.0 + slack) return false;
  return true;
}

// Uniform sample from B_eps(origin) intersected with the box.
inline Tensor uniform_ball_sample(const Tensor& origin, double epsilon, Norm norm, Rng& rng) {
  Tensor out = origin;
  if (norm == Norm::Linf) {
    for (double& v : out.values) v += uniform_real(rng, -epsilon, epsilon);
  } else {
    Tensor dir = random_unit_vector(origin.size(), rng);
    double r = epsilon * std::pow(uniform_real(rng, 0.0, 1.0), 1.0 / static_cast<double>(origin.size()));
    out = add_scaled(origin, dir, r);
  }
  return clamp01(out);
}

namespace detail {

// Restart-cycled target class for the multitargeted direction: walks the
// classes != y in increasing order.
inline std::size_t cycled_target(std::size_t y, std::size_t restart_index, std::size_t num_classes) {
  std::size_t t = restart_index % (num_classes - 1);
  return t < y ? t : t + 1;
}

struct AdamState {
  std::vector<double> m, v;
  std::size_t t = 0;
  // standard defaults
  static constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  explicit AdamState(std::size_t n) : m(n, 0.0), v(n, 0.0) {}

  // Returns the update direction for a gradient-ascent step of unit rate.
  std::vector<double> direction(const Tensor& grad) {
    ++t;
    std::vector<double> out(grad.size());
    double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < grad.size(); ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
      out[i] = (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
    }
    return out;
  }
};

}  // namespace detail

// Output-diversified start point: uniform sample in the ball followed by a
// few steps that push w_d . f(x) uphill. The direction is fixed for the whole
// initialization; the sign step applies under Linf, the raw vector under L2.
inline Tensor odi_init(const Tensor& x_org, const MlpClassifier& model, std::size_t y, std::size_t restart_index,
                       const WhiteboxAttackConfig& cfg, Rng& rng) {
  if (cfg.init == InitKind::Uniform) throw std::invalid_argument("odi_init: config requests uniform init");
  Tensor x = uniform_ball_sample(x_org, cfg.epsilon, cfg.norm, rng);
  std::size_t c = model.num_classes();

  DirectionVector wd = cfg.init == InitKind::MultiTargeted
                           ? multitargeted_direction(y, detail::cycled_target(y, restart_index, c), c)
                           : sample_direction(c, rng);

  double eta = cfg.odi_step_size();
  for (std::size_t k = 0; k < cfg.odi_steps; ++k) {
    Tensor v;
    try {
      v = ods_vector(x, model, wd);
    } catch (const DegenerateDirectionError&) {
      if (cfg.init == InitKind::MultiTargeted) {
        v = random_unit_vector(x.size(), rng);
      } else {
        bool found = false;
        for (int t = 0; t < 10 && !found; ++t) {
          wd = sample_direction(c, rng);
          try {
            v = ods_vector(x, model, wd);
            found = true;
          } catch (const DegenerateDirectionError&) {
          }
        }
        if (!found) v = random_unit_vector(x.size(), rng);
      }
    }
    if (cfg.norm == Norm::Linf) {
      Tensor step = x;
      for (std::size_t i = 0; i < step.size(); ++i)
        step[i] += eta * (v[i] > 0.0 ? 1.0 : (v[i] < 0.0 ? -1.0 : 0.0));
      x = project_ball(step, x_org, cfg.epsilon, cfg.norm);
    } else {
      x = project_ball(add_scaled(x, v, eta), x_org, cfg.epsilon, cfg.norm);
    }
  }
  return x;
}

// Projected ascent on the configured loss from a given start point.
// On success the first adversarial iterate is returned; with early_stop the
// loop ends there, otherwise it keeps refining best_loss for traces.
inline AttackResult pgd_attack(const MlpClassifier& target, const Tensor& x_org, std::size_t y, const Tensor& start,
                               const WhiteboxAttackConfig& cfg) {
  cfg.validate();
  if (!inside_ball(start, x_org, cfg.epsilon, cfg.norm))
    throw std::invalid_argument("pgd_attack: start point outside the perturbation ball");

  ScalarHead head = cfg.loss == AttackLoss::Margin ? ScalarHead::margin(y) : ScalarHead::cross_entropy(y);
  AttackResult res;
  res.restarts_used = 1;

  Tensor x = start;
  if (predict(target, x) != y) {
    res.adversarial = x;
    res.success = true;
    res.success_step = 0;
    res.best_loss = value_and_input_grad(target, x, head).first;
    res.perturbation_norm = lp_dist(x, x_org, cfg.norm);
    return res;
  }

  detail::AdamState adam(x.size());
  std::optional<Tensor> first_success;

  for (std::size_t k = 0; k < cfg.steps; ++k) {
    auto [value, grad] = value_and_input_grad(target, x, head);
    res.best_loss = std::max(res.best_loss, value);

    double eta = cfg.eta.at(k);
    Tensor candidate = x;
    if (cfg.optimizer == StepRule::Sign) {
      for (std::size_t i = 0; i < x.size(); ++i) {
        double g = grad.wrt_input[i];
        candidate[i] += eta * (g > 0.0 ? 1.0 : (g < 0.0 ? -1.0 : 0.0));
      }
    } else {
      auto dir = adam.direction(grad.wrt_input);
      for (std::size_t i = 0; i < x.size(); ++i) candidate[i] += eta * dir[i];
    }
    x = project_ball(candidate, x_org, cfg.epsilon, cfg.norm);

    if (!res.success && predict(target, x) != y) {
      res.success = true;
      res.success_step = k + 1;
      first_success = x;
      if (cfg.early_stop) break;
    }
  }

  double final_value = value_and_input_grad(target, x, head).first;
  res.best_loss = std::max(res.best_loss, final_value);
  res.adversarial = first_success ? *first_success : x;
  res.perturbation_norm = lp_dist(res.adversarial, x_org, cfg.norm);
  return res;
}

struct CwConfig {
  std::size_t max_iters = 100;
  std::size_t search_steps = 10;
  double lr = 0.1;
  double initial_const = 0.01;
  double init_radius = 1.0;  // L2 ball for the start sample
  InitKind init = InitKind::Uniform;  // Uniform = clipped Gaussian noise
  std::size_t odi_steps = 2;
  double odi_eta = 0.0;
};

// Gaussian-direction start for C&W: x + eps * w/||w||, w ~ N(0, I).
inline Tensor cw_gaussian_init(const Tensor& x_org, double radius, Rng& rng) {
  Tensor dir = random_unit_vector(x_org.size(), rng);
  return clamp01(add_scaled(x_org, dir, radius));
}

// Minimal-L2 search: tanh-space box change of variables, margin-style hinge,
// binary search over the trade-off constant. Returns the smallest valid
// adversarial seen anywhere in the search.
inline AttackResult cw_attack(const MlpClassifier& target, const Tensor& x_org, std::size_t y, const Tensor& init,
                              const CwConfig& cfg) {
  AttackResult res;
  res.restarts_used = 1;
  res.adversarial = x_org;
  res.perturbation_norm = 0.0;

  if (predict(target, x_org) != y) {
    res.success = true;
    res.best_loss = 0.0;
    return res;
  }

  auto to_w = [](double v) {
    double c = std::clamp(v, 1e-6, 1.0 - 1e-6);
    return std::atanh(2.0 * c - 1.0);
  };

  std::vector<double> w0(x_org.size());
  for (std::size_t i = 0; i < x_org.size(); ++i) w0[i] = to_w(init[i]);

  double best_norm = std::numeric_limits<double>::infinity();
  Tensor best_adv;

  double c_lo = 0.0, c_hi = -1.0;  // c_hi < 0 means no upper bound yet
  double c = cfg.initial_const;

  for (std::size_t search = 0; search < cfg.search_steps; ++search) {
    std::vector<double> w = w0;
    detail::AdamState adam(w.size());
    bool found_here = false;

    for (std::size_t it = 0; it < cfg.max_iters; ++it) {
      Tensor x_adv({x_org.size()});
      std::vector<double> dxdw(w.size());
      for (std::size_t i = 0; i < w.size(); ++i) {
        double th = std::tanh(w[i]);
        x_adv[i] = 0.5 * (th + 1.0);
        dxdw[i] = 0.5 * (1.0 - th * th);
      }

      auto [margin, grad] = value_and_input_grad(target, x_adv, ScalarHead::margin(y));
      double dist = l2_dist(x_adv, x_org);

      if (margin > 0.0 || predict(target, x_adv) != y) {
        found_here = true;
        if (dist < best_norm) {
          best_norm = dist;
          best_adv = x_adv;
        }
      }

      // objective: ||x_adv - x||^2 + c * max(-margin, 0); descend in w
      Tensor obj_grad({w.size()});
      for (std::size_t i = 0; i < w.size(); ++i) {
        double g = 2.0 * (x_adv[i] - x_org[i]);
        if (margin < 0.0) g -= c * grad.wrt_input[i];
        obj_grad[i] = -g * dxdw[i];  // ascent direction of -objective
      }
      auto dir = adam.direction(obj_grad);
      for (std::size_t i = 0; i < w.size(); ++i) w[i] += cfg.lr * dir[i];
    }

    if (found_here) {
      c_hi = c;
      c = 0.5 * (c_lo + c_hi);
    } else {
      c_lo = c;
      c = c_hi < 0.0 ? c * 10.0 : 0.5 * (c_lo + c_hi);
    }
  }

  if (best_norm < std::numeric_limits<double>::infinity()) {
    res.success = true;
    res.adversarial = best_adv;
    res.perturbation_norm = best_norm;
    res.best_loss = -best_norm;
  }
  return res;
}

struct RestartEntry {
  bool success = false;
  double value = 0.0;  // best loss (PGD) or perturbation norm (C&W)
};

struct RestartOutcome {
  AttackResult best;
  std::vector<RestartEntry> per_restart;
};

enum class RestartObjective { FirstSuccess, MinPerturbation };

// Runs `fn(restart_index, rng)` up to n_restarts times. FirstSuccess keeps
// accuracy semantics (stop at the first hit); MinPerturbation evaluates every
// restart and keeps the smallest successful perturbation.
template <typename AttackFn>
RestartOutcome run_with_restarts(AttackFn&& fn, std::size_t n_restarts, RestartObjective objective, Rng& rng) {
  if (n_restarts < 1) throw std::invalid_argument("run_with_restarts: need at least one restart");
  RestartOutcome out;
  bool have_best = false;

  for (std::size_t r = 0; r < n_restarts; ++r) {
    AttackResult res = fn(r, rng);
    RestartEntry entry;
    entry.success = res.success;
    entry.value = objective == RestartObjective::FirstSuccess ? res.best_loss : res.perturbation_norm;
    out.per_restart.push_back(entry);

    bool better = false;
    if (!have_best) {
      better = true;
    } else if (objective == RestartObjective::FirstSuccess) {
      better = (res.success && !out.best.success) ||
               (res.success == out.best.success && res.best_loss > out.best.best_loss);
    } else {
      if (res.success && out.best.success) better = res.perturbation_norm < out.best.perturbation_norm;
      else better = res.success && !out.best.success;
    }
    if (better) {
      out.best = res;
      have_best = true;
    }
    out.best.restarts_used = r + 1;
    if (objective == RestartObjective::FirstSuccess && out.best.success) break;
  }
  return out;
}

// PGD with the configured initialization across restarts.
inline RestartOutcome pgd_with_restarts(const MlpClassifier& target, const Tensor& x_org, std::size_t y,
                                        const WhiteboxAttackConfig& cfg, Rng& rng) {
  cfg.validate();
  return run_with_restarts(
      [&](std::size_t restart, Rng& r) {
        Tensor start = cfg.init == InitKind::Uniform ? uniform_ball_sample(x_org, cfg.epsilon, cfg.norm, r)
                                                     : odi_init(x_org, target, y, restart, cfg, r);
        return pgd_attack(target, x_org, y, start, cfg);
      },
      cfg.restarts, RestartObjective::FirstSuccess, rng);
}

// C&W restarts keep the minimum perturbation over all restarts.
inline RestartOutcome cw_with_restarts(const MlpClassifier& target, const Tensor& x_org, std::size_t y,
                                       const CwConfig& cfg, std::size_t n_restarts, Rng& rng) {
  WhiteboxAttackConfig odi_cfg;
  odi_cfg.norm = Norm::L2;
  odi_cfg.epsilon = cfg.init_radius;
  odi_cfg.init = InitKind::Odi;
  odi_cfg.odi_steps = cfg.odi_steps;
  odi_cfg.odi_eta = cfg.odi_eta;

  return run_with_restarts(
      [&](std::size_t restart, Rng& r) {
        Tensor init = cfg.init == InitKind::Odi ? odi_init(x_org, target, y, restart, odi_cfg, r)
                                                : cw_gaussian_init(x_org, cfg.init_radius, r);
        return cw_attack(target, x_org, y, init, cfg);
      },
      n_restarts, RestartObjective::MinPerturbation, rng);
}

}  // namespace atk
