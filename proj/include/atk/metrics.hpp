#pragma once

#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "atk/mlp.hpp"
#include "atk/tensor.hpp"
#include "atk/util.hpp"

namespace atk {

// One observation per row. `index` is a restart number for white-box traces
// and a query count for black-box traces; `value` is the family's scalar
// (loss, perturbation norm, or distance).
struct TraceRow {
  std::size_t input_id = 0;
  std::string method;
  std::size_t index = 0;
  double value = 0.0;
  bool success = false;
};

struct TraceTable {
  std::vector<TraceRow> rows;

  void append(TraceRow row) {
    if (row.method.empty()) throw std::invalid_argument("trace row needs a method label");
    rows.push_back(std::move(row));
  }

  std::vector<std::string> methods() const {
    std::set<std::string> seen;
    for (const auto& r : rows) seen.insert(r.method);
    return {seen.begin(), seen.end()};
  }
};

inline void save_trace_csv(const TraceTable& t, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open trace file for writing: " + path);
  out << "input_id,method,index,value,success\n";
  for (const auto& r : t.rows)
    out << r.input_id << ',' << r.method << ',' << r.index << ',' << dtos(r.value) << ',' << (r.success ? 1 : 0)
        << "\n";
}

inline TraceTable load_trace_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open trace file: " + path);
  TraceTable t;
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty trace file: " + path);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    TraceRow r;
    std::size_t p0 = line.find(','), p1 = line.find(',', p0 + 1), p2 = line.find(',', p1 + 1),
                p3 = line.find(',', p2 + 1);
    if (p3 == std::string::npos) throw std::runtime_error("malformed trace row: " + line);
    r.input_id = parse_u64(line.substr(0, p0));
    r.method = line.substr(p0 + 1, p1 - p0 - 1);
    r.index = parse_u64(line.substr(p1 + 1, p2 - p1 - 1));
    r.value = parse_double(line.substr(p2 + 1, p3 - p2 - 1));
    r.success = line.substr(p3 + 1) == "1";
    t.rows.push_back(std::move(r));
  }
  return t;
}

// Lower-median convention: for even counts take the lower of the two middle
// elements.
inline double lower_median(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median of empty set");
  std::size_t k = (v.size() - 1) / 2;
  std::nth_element(v.begin(), v.begin() + k, v.end());
  return v[k];
}

// Mean L2 distance between model outputs over all unordered pairs.
inline double pairwise_output_distance(const std::vector<Tensor>& points, const MlpClassifier& model) {
  if (points.size() < 2) throw std::invalid_argument("pairwise_output_distance: need at least two points");
  std::vector<Tensor> logits;
  logits.reserve(points.size());
  for (const auto& p : points) logits.push_back(forward_logits(model, p));
  double sum = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < logits.size(); ++i)
    for (std::size_t j = i + 1; j < logits.size(); ++j) {
      sum += l2_dist(logits[i], logits[j]);
      ++pairs;
    }
  return sum / static_cast<double>(pairs);
}

struct Curve {
  std::vector<std::size_t> x;
  std::vector<double> y;
};

// Accuracy after r restarts: fraction of inputs with no success at any
// restart <= r. Cumulative OR makes the curve non-increasing.
inline std::map<std::string, Curve> accuracy_vs_restarts(const TraceTable& trace) {
  std::map<std::string, std::map<std::size_t, std::size_t>> first_success;  // method -> input -> restart
  std::map<std::string, std::set<std::size_t>> inputs;
  std::map<std::string, std::size_t> max_restart;

  for (const auto& r : trace.rows) {
    inputs[r.method].insert(r.input_id);
    max_restart[r.method] = std::max(max_restart[r.method], r.index);
    if (r.success) {
      auto [it, inserted] = first_success[r.method].try_emplace(r.input_id, r.index);
      if (!inserted) it->second = std::min(it->second, r.index);
    }
  }

  std::map<std::string, Curve> out;
  for (const auto& [method, ids] : inputs) {
    Curve c;
    double n = static_cast<double>(ids.size());
    for (std::size_t r = 1; r <= max_restart[method]; ++r) {
      std::size_t broken = 0;
      for (std::size_t id : ids) {
        auto it = first_success[method].find(id);
        if (it != first_success[method].end() && it->second <= r) ++broken;
      }
      c.x.push_back(r);
      c.y.push_back(1.0 - static_cast<double>(broken) / n);
    }
    out[method] = std::move(c);
  }
  return out;
}

struct EfficiencySummary {
  double success_rate = 0.0;
  double avg_queries_on_success = 0.0;  // failures excluded
  double median_perturbation = 0.0;     // over successful rows
  std::size_t inputs = 0;
  std::size_t failures = 0;
};

// Consumes one final row per (method, input): index = queries used,
// value = final perturbation norm.
inline std::map<std::string, EfficiencySummary> query_efficiency_summary(const TraceTable& trace) {
  std::map<std::string, std::vector<const TraceRow*>> by_method;
  for (const auto& r : trace.rows) by_method[r.method].push_back(&r);

  std::map<std::string, EfficiencySummary> out;
  for (const auto& [method, rows] : by_method) {
    EfficiencySummary s;
    s.inputs = rows.size();
    std::vector<double> perturbations;
    double query_sum = 0.0;
    std::size_t successes = 0;
    for (const TraceRow* r : rows) {
      if (r->success) {
        ++successes;
        query_sum += static_cast<double>(r->index);
        perturbations.push_back(r->value);
      } else {
        ++s.failures;
      }
    }
    s.success_rate = rows.empty() ? 0.0 : static_cast<double>(successes) / static_cast<double>(rows.size());
    s.avg_queries_on_success = successes == 0 ? 0.0 : query_sum / static_cast<double>(successes);
    s.median_perturbation = perturbations.empty() ? 0.0 : lower_median(std::move(perturbations));
    out[method] = std::move(s);
  }
  return out;
}

struct BudgetPoint {
  std::size_t budget = 0;
  double median = 0.0;
  bool truncated = false;  // some input's trace ended before the budget
};

// Distance-vs-query traces -> per-budget median of each input's best
// distance achieved within the budget.
inline std::map<std::string, std::vector<BudgetPoint>> perturbation_at_budget(const TraceTable& trace,
                                                                              const std::vector<std::size_t>& budgets) {
  std::map<std::string, std::map<std::size_t, std::vector<const TraceRow*>>> grouped;
  for (const auto& r : trace.rows) grouped[r.method][r.input_id].push_back(&r);

  std::map<std::string, std::vector<BudgetPoint>> out;
  for (auto& [method, per_input] : grouped) {
    for (auto& [id, rows] : per_input)
      std::sort(rows.begin(), rows.end(), [](const TraceRow* a, const TraceRow* b) { return a->index < b->index; });

    for (std::size_t budget : budgets) {
      BudgetPoint pt;
      pt.budget = budget;
      std::vector<double> best;
      for (const auto& [id, rows] : per_input) {
        double b = rows.front()->value;  // fallback when the budget precedes the first observation
        for (const TraceRow* r : rows)
          if (r->index <= budget) b = std::min(b, r->value);
        if (rows.back()->index < budget) pt.truncated = true;  // horizon ended early; last value carried forward
        best.push_back(b);
      }
      pt.median = best.empty() ? 0.0 : lower_median(std::move(best));
      out[method].push_back(pt);
    }
  }
  return out;
}

inline void save_curve_csv(const std::map<std::string, Curve>& curves, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open curve file for writing: " + path);
  out << "method,x,y\n";
  for (const auto& [method, c] : curves)
    for (std::size_t i = 0; i < c.x.size(); ++i) out << method << ',' << c.x[i] << ',' << dtos(c.y[i]) << "\n";
}

}  // namespace atk
