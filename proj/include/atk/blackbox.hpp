#pragma once

#include <deque>
#include <numeric>
#include <optional>
#include <vector>

#include "atk/ods.hpp"
#include "atk/whitebox.hpp"

namespace atk {

struct BudgetExhaustedError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct OracleModeError : std::logic_error {
  using std::logic_error::logic_error;
};

struct InitializationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Query-counted view of the target. Score mode exposes logits, decision mode
// only the predicted label; every call costs exactly one query.
class QueryOracle {
 public:
  enum class Mode { Score, Decision };

  QueryOracle(const MlpClassifier& target, Mode mode, std::size_t budget)
      : target_(&target), mode_(mode), budget_(budget) {}

  Mode mode() const { return mode_; }
  std::size_t queries() const { return count_; }
  std::size_t budget() const { return budget_; }
  std::size_t remaining() const { return budget_ - count_; }

  Tensor score(const Tensor& x) {
    if (mode_ != Mode::Score) throw OracleModeError("score queries are not available in decision mode");
    consume();
    return forward_logits(*target_, x);
  }

  std::size_t label(const Tensor& x) {
    consume();
    return predict(*target_, x);
  }

 private:
  void consume() {
    if (count_ >= budget_) throw BudgetExhaustedError("query budget exhausted");
    ++count_;
  }

  const MlpClassifier* target_;
  Mode mode_;
  std::size_t count_ = 0;
  std::size_t budget_;
};

// Unit-norm update-direction source. Pixel basis walks a shuffled coordinate
// permutation (fresh shuffle per pass); Gaussian draws are normalized;
// the surrogate kinds follow the output-diversified sampling rule.
class Sampler {
 public:
  enum class Kind { PixelBasis, Gaussian, Ods, MultiTargeted };

  static Sampler pixel_basis(std::size_t dims, std::uint64_t seed) {
    Sampler s(Kind::PixelBasis, seed);
    s.dims_ = dims;
    s.perm_.resize(dims);
    std::iota(s.perm_.begin(), s.perm_.end(), 0);
    s.perm_pos_ = dims;  // force shuffle on first draw
    return s;
  }

  static Sampler gaussian(std::size_t dims, std::uint64_t seed) {
    Sampler s(Kind::Gaussian, seed);
    s.dims_ = dims;
    return s;
  }

  static Sampler ods(const SurrogateEnsemble& ensemble, std::uint64_t seed) {
    ensemble.validate();
    Sampler s(Kind::Ods, seed);
    s.ensemble_ = &ensemble;
    s.dims_ = ensemble.input_dim();
    return s;
  }

  // Directions +1 toward a random other class, -1 away from label y.
  static Sampler multitargeted(const SurrogateEnsemble& ensemble, std::size_t y, std::uint64_t seed) {
    ensemble.validate();
    if (y >= ensemble.num_classes()) throw std::out_of_range("multitargeted sampler: label out of range");
    Sampler s(Kind::MultiTargeted, seed);
    s.ensemble_ = &ensemble;
    s.dims_ = ensemble.input_dim();
    s.label_ = y;
    return s;
  }

  Kind kind() const { return kind_; }
  std::size_t dims() const { return dims_; }

  Tensor draw(const Tensor& x) {
    switch (kind_) {
      case Kind::PixelBasis: {
        if (perm_pos_ >= dims_) {
          std::shuffle(perm_.begin(), perm_.end(), rng_);
          perm_pos_ = 0;
        }
        Tensor v({dims_});
        v[perm_[perm_pos_++]] = 1.0;
        return v;
      }
      case Kind::Gaussian:
        return random_unit_vector(dims_, rng_);
      case Kind::Ods: {
        const MlpClassifier& g = pick_surrogate(*ensemble_, rng_);
        return sampled_ods(x, g);
      }
      case Kind::MultiTargeted: {
        const MlpClassifier& g = pick_surrogate(*ensemble_, rng_);
        std::size_t c = g.num_classes();
        std::size_t t = uniform_index(rng_, c - 1);
        if (t >= label_) ++t;
        try {
          return ods_vector(x, g, multitargeted_direction(label_, t, c));
        } catch (const DegenerateDirectionError&) {
          return random_unit_vector(dims_, rng_);
        }
      }
    }
    throw std::logic_error("unreachable sampler kind");
  }

 private:
  Sampler(Kind kind, std::uint64_t seed) : kind_(kind), rng_(mix_seed(seed)) {}

  Tensor sampled_ods(const Tensor& x, const MlpClassifier& g) {
    return ods_vector_or_random(x, g, rng_);
  }

  Kind kind_;
  Rng rng_;
  std::size_t dims_ = 0;
  const SurrogateEnsemble* ensemble_ = nullptr;
  std::size_t label_ = 0;
  std::vector<std::size_t> perm_;
  std::size_t perm_pos_ = 0;
};

// (query index, objective or distance) rows for efficiency curves.
struct QueryTracePoint {
  std::size_t query = 0;
  double value = 0.0;
};

struct BlackboxOutcome {
  AttackResult result;
  std::vector<QueryTracePoint> trace;
};

namespace detail {

// SimBA/RGF objective: margin loss away from y (untargeted) or negative
// cross-entropy toward t (targeted); higher is better in both cases.
struct BlackboxObjective {
  std::size_t y = 0;
  std::optional<std::size_t> target_class;

  double value(const Tensor& logits) const {
    return target_class ? -softmax_cross_entropy(logits, *target_class) : margin_loss(logits, y);
  }

  bool success(const Tensor& logits) const {
    std::size_t p = argmax_index(logits);
    return target_class ? p == *target_class : p != y;
  }
};

}  // namespace detail

// Simple black-box attack: per iteration draw one direction and try +/- step,
// keeping the first move that improves the objective (at most two queries).
// SamplerT needs draw(x) -> unit Tensor and kind() -> Sampler::Kind.
template <typename SamplerT>
BlackboxOutcome simba_attack(QueryOracle& oracle, const Tensor& x, std::size_t y, SamplerT& sampler,
                             double step, std::size_t max_iters,
                             std::optional<std::size_t> target_class = std::nullopt) {
  if (oracle.mode() != QueryOracle::Mode::Score) throw OracleModeError("simba needs a score oracle");
  detail::BlackboxObjective obj{y, target_class};

  BlackboxOutcome out;
  out.result.adversarial = x;
  Tensor x_adv = x;

  try {
    Tensor logits = oracle.score(x_adv);
    double current = obj.value(logits);
    out.trace.push_back({oracle.queries(), current});
    if (obj.success(logits)) {
      out.result.success = true;
      out.result.best_loss = current;
      out.result.queries = oracle.queries();
      return out;
    }

    for (std::size_t it = 0; it < max_iters; ++it) {
      Tensor q = sampler.draw(x_adv);
      for (double alpha : {step, -step}) {
        Tensor candidate = clamp01(add_scaled(x_adv, q, alpha));
        Tensor cand_logits = oracle.score(candidate);
        double v = obj.value(cand_logits);
        if (v > current) {
          x_adv = std::move(candidate);
          current = v;
          out.trace.push_back({oracle.queries(), current});
          if (obj.success(cand_logits)) {
            out.result.success = true;
            out.result.success_step = it + 1;
          }
          break;
        }
      }
      if (out.result.success) break;
      if (oracle.remaining() == 0) break;
    }
    out.result.best_loss = current;
  } catch (const BudgetExhaustedError&) {
    out.result.success = false;
  }

  out.result.adversarial = x_adv;
  out.result.queries = oracle.queries();
  out.result.perturbation_norm = l2_dist(x_adv, x);
  return out;
}

struct BoundaryConfig {
  std::size_t max_steps = SIZE_MAX;  // effectively query-budget bound
  double orth_step = 0.01;           // delta, relative to current distance
  double shrink = 0.01;              // epsilon of the contraction rule
  std::size_t adapt_window = 20;
  double adapt_factor = 1.5;
  std::size_t max_init_tries = 1000;
};

struct BoundaryTargeted {
  std::size_t target_class;
  Tensor seed_image;
};

// Decision-based attack walking the boundary. Each trial tests the orthogonal
// move on the sphere around the original image first; only if that point is
// still adversarial is the contracted candidate tested, chosen so that
// d_old - d_new = shrink * d_old. x_adv moves only when the contracted point
// is adversarial, so the held distance strictly decreases on acceptance.
// The two step sizes adapt from their own acceptance windows; a collapsed
// shrink recovers because a near-zero contraction is accepted whenever the
// spherical test passes.
template <typename SamplerT>
BlackboxOutcome boundary_attack(QueryOracle& oracle, const Tensor& x, std::size_t y, SamplerT& sampler,
                                const BoundaryConfig& cfg, Rng& rng,
                                std::optional<BoundaryTargeted> targeted = std::nullopt) {
  BlackboxOutcome out;
  auto is_adversarial = [&](std::size_t lbl) { return targeted ? lbl == targeted->target_class : lbl != y; };

  Tensor x_adv;
  double orth_step = cfg.orth_step;
  double shrink = cfg.shrink;

  try {
    // Initial adversarial point.
    if (targeted) {
      if (!is_adversarial(oracle.label(targeted->seed_image)))
        throw InitializationError("targeted seed image is not classified as the target class");
      x_adv = targeted->seed_image;
    } else {
      bool found = false;
      for (std::size_t t = 0; t < cfg.max_init_tries && !found; ++t) {
        Tensor candidate({x.size()});
        for (double& v : candidate.values) v = uniform_real(rng, 0.0, 1.0);
        if (is_adversarial(oracle.label(candidate))) {
          x_adv = std::move(candidate);
          found = true;
        }
      }
      if (!found) throw InitializationError("no adversarial starting point found");
    }

    double dist = l2_dist(x_adv, x);
    out.trace.push_back({oracle.queries(), dist});

    std::size_t orth_trials = 0, orth_hits = 0;
    std::size_t shrink_trials = 0, shrink_hits = 0;

    for (std::size_t step = 0; step < cfg.max_steps && oracle.remaining() > 0 && dist > 0.0; ++step) {
      Tensor q = sampler.draw(x_adv);

      Tensor to_orig = sub(x, x_adv);
      Tensor dir = scaled(to_orig, 1.0 / dist);

      // remove the radial component, rescale to the orthogonal step
      Tensor q_perp = add_scaled(q, dir, -dot(q, dir));
      double qn = l2_norm(q_perp);
      if (qn < 1e-12) continue;  // degenerate draw, no query spent
      q_perp = scaled(q_perp, orth_step * dist / qn);

      // orthogonal candidate back on the sphere of radius dist around x
      Tensor from_orig = sub(add_scaled(x_adv, q_perp, 1.0), x);
      double fn = l2_norm(from_orig);
      if (fn < 1e-12) continue;
      Tensor on_sphere = clamp01(add_scaled(x, from_orig, dist / fn));

      ++orth_trials;
      if (is_adversarial(oracle.label(on_sphere))) {
        ++orth_hits;
        bool contracted = false;
        if (oracle.remaining() > 0) {
          Tensor candidate = clamp01(add_scaled(x, from_orig, (1.0 - shrink) * dist / fn));
          ++shrink_trials;
          if (is_adversarial(oracle.label(candidate))) {
            ++shrink_hits;
            double new_dist = l2_dist(candidate, x);
            if (new_dist < dist) {
              x_adv = std::move(candidate);
              dist = new_dist;
              out.trace.push_back({oracle.queries(), dist});
              contracted = true;
            }
          }
        }
        if (!contracted) {
          // distance-neutral drift along the sphere; this is what lets the
          // walk slide out of boundary corners where contraction stalls
          double sphere_dist = l2_dist(on_sphere, x);
          if (sphere_dist <= dist) {
            x_adv = std::move(on_sphere);
            if (sphere_dist < dist) {
              dist = sphere_dist;
              out.trace.push_back({oracle.queries(), dist});
            }
          }
        }
      }

      if (orth_trials >= cfg.adapt_window) {
        double rate = static_cast<double>(orth_hits) / static_cast<double>(orth_trials);
        if (rate > 0.5) orth_step = std::min(orth_step * cfg.adapt_factor, 2.0);
        else if (rate < 0.25) orth_step = std::max(orth_step / cfg.adapt_factor, 1e-4);
        orth_trials = orth_hits = 0;
      }
      if (shrink_trials >= cfg.adapt_window) {
        double rate = static_cast<double>(shrink_hits) / static_cast<double>(shrink_trials);
        if (rate > 0.5) shrink = std::min(shrink * cfg.adapt_factor, 0.5);
        else if (rate < 0.25) shrink = std::max(shrink / cfg.adapt_factor, 1e-9);
        shrink_trials = shrink_hits = 0;
      }
    }

    out.result.success = true;  // decision attacks always hold an adversarial
  } catch (const BudgetExhaustedError&) {
    out.result.success = x_adv.size() > 0;
  }

  if (x_adv.size() == 0) {
    out.result.adversarial = x;
    out.result.success = false;
  } else {
    out.result.adversarial = x_adv;
    out.result.perturbation_norm = l2_dist(x_adv, x);
  }
  out.result.queries = oracle.queries();
  return out;
}

struct RgfEstimate {
  Tensor grad;
  double base_loss = 0.0;
  Tensor base_logits;
};

// Random-gradient-free estimate: ghat = (1/q) sum_i ((L(x + mu u_i) - L(x)) / mu) u_i.
// Gaussian draws are orthonormalized before probing; surrogate-driven draws
// are used as sampled. Costs exactly q + 1 queries.
template <typename SamplerT>
RgfEstimate rgf_estimate_gradient(QueryOracle& oracle, const Tensor& x,
                                  const detail::BlackboxObjective& objective, SamplerT& sampler,
                                  std::size_t num_samples, double mu) {
  if (oracle.mode() != QueryOracle::Mode::Score) throw OracleModeError("rgf needs a score oracle");
  if (num_samples < 1) throw std::invalid_argument("rgf: need at least one sample");
  if (mu <= 0.0) throw std::invalid_argument("rgf: smoothing must be positive");

  RgfEstimate est;
  est.base_logits = oracle.score(x);
  est.base_loss = objective.value(est.base_logits);

  std::vector<Tensor> dirs;
  dirs.reserve(num_samples);
  while (dirs.size() < num_samples) {
    Tensor u = sampler.draw(x);
    if (sampler.kind() == Sampler::Kind::Gaussian) {
      for (const Tensor& b : dirs) u = add_scaled(u, b, -dot(u, b));
      double n = l2_norm(u);
      if (n < 1e-9) continue;  // dependent draw; try again
      u = scaled(u, 1.0 / n);
    }
    dirs.push_back(std::move(u));
  }

  est.grad = Tensor(x.shape);
  for (const Tensor& u : dirs) {
    double loss = objective.value(oracle.score(add_scaled(x, u, mu)));
    double coeff = (loss - est.base_loss) / (mu * static_cast<double>(num_samples));
    est.grad = add_scaled(est.grad, u, coeff);
  }
  return est;
}

struct RgfAttackConfig {
  Norm norm = Norm::L2;
  double epsilon = 0.5;
  double step = 0.1;
  std::size_t num_samples = 10;
  double mu = 0.005;
  std::size_t max_iters = SIZE_MAX;
};

// Iterative ascent driven by the RGF estimate, projected to the epsilon-ball.
template <typename SamplerT>
BlackboxOutcome rgf_attack(QueryOracle& oracle, const Tensor& x, std::size_t y, SamplerT& sampler,
                           const RgfAttackConfig& cfg, std::optional<std::size_t> target_class = std::nullopt) {
  detail::BlackboxObjective obj{y, target_class};
  BlackboxOutcome out;
  out.result.adversarial = x;

  if (cfg.epsilon <= 0.0) {
    out.result.success = false;
    return out;
  }

  Tensor x_adv = x;
  try {
    for (std::size_t it = 0; it < cfg.max_iters; ++it) {
      if (oracle.remaining() < cfg.num_samples + 1) break;
      RgfEstimate est = rgf_estimate_gradient(oracle, x_adv, obj, sampler, cfg.num_samples, cfg.mu);
      out.trace.push_back({oracle.queries(), est.base_loss});
      if (obj.success(est.base_logits)) {
        out.result.success = true;
        out.result.success_step = it;
        out.result.best_loss = est.base_loss;
        break;
      }

      Tensor candidate = x_adv;
      if (cfg.norm == Norm::Linf) {
        for (std::size_t i = 0; i < candidate.size(); ++i) {
          double g = est.grad[i];
          candidate[i] += cfg.step * (g > 0.0 ? 1.0 : (g < 0.0 ? -1.0 : 0.0));
        }
      } else {
        double n = l2_norm(est.grad);
        if (n < 1e-12) continue;
        candidate = add_scaled(candidate, est.grad, cfg.step / n);
      }
      x_adv = project_ball(candidate, x, cfg.epsilon, cfg.norm);
    }

    // Final iterate check if the loop ended without a verdict.
    if (!out.result.success && oracle.remaining() > 0) {
      Tensor logits = oracle.score(x_adv);
      out.trace.push_back({oracle.queries(), obj.value(logits)});
      if (obj.success(logits)) {
        out.result.success = true;
        out.result.best_loss = obj.value(logits);
      }
    }
  } catch (const BudgetExhaustedError&) {
    out.result.success = false;
  }

  out.result.adversarial = x_adv;
  out.result.queries = oracle.queries();
  out.result.perturbation_norm = l2_dist(x_adv, x);
  return out;
}

}  // namespace atk
