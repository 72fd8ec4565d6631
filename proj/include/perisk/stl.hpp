#pragma once

#include <cstddef>
#include <iosfwd>
#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace perisk::stl {

// Discrete step-index interval, both endpoints inclusive.
struct Interval {
  std::size_t lo = 0;
  std::size_t hi = 0;
};

// Atomic predicate over one named trace channel. The margin is oriented so
// positive means satisfied: value - bound when `greater`, else bound - value.
// `scale` normalizes margins into [-1, 1] for the normalized-mean metric.
struct Predicate {
  std::string channel;
  double bound = 0.0;
  bool greater = true;
  double scale = 100.0;
};

struct Formula;
using FormulaPtr = std::shared_ptr<const Formula>;

struct Formula {
  enum class Kind { True, Pred, Not, And, Or, Always, Eventually, Until };
  Kind kind = Kind::True;
  Predicate pred;     // Kind::Pred
  Interval interval;  // temporal operators
  FormulaPtr a;       // first child
  FormulaPtr b;       // second child (And/Or/Until)
};

FormulaPtr f_true();
FormulaPtr f_pred(Predicate p);
FormulaPtr f_not(FormulaPtr a);
FormulaPtr f_and(FormulaPtr a, FormulaPtr b);
FormulaPtr f_or(FormulaPtr a, FormulaPtr b);
FormulaPtr f_always(Interval i, FormulaPtr a);
FormulaPtr f_eventually(Interval i, FormulaPtr a);
FormulaPtr f_until(Interval i, FormulaPtr a, FormulaPtr b);

// Fixed-step multi-channel signal. rows[t][c] pairs with channels[c].
struct Trace {
  std::vector<std::string> channels;
  std::vector<std::vector<double>> rows;
  double dt = 0.05;

  std::size_t length() const { return rows.size(); }
  std::size_t channel_index(const std::string& name) const;  // SchemaError
  double value(std::size_t t, std::size_t c) const { return rows[t][c]; }
};

enum class Metric { Classical, Agm, Smooth };

struct MetricSpec {
  Metric metric = Metric::Classical;
  double smooth_k = 10.0;
};

Metric metric_from_name(const std::string& name);       // ArgumentError
std::string metric_name(Metric m);

// Hard min/max robustness; positive sign means the formula holds at t.
double eval_classical(const Trace& trace, const FormulaPtr& f, std::size_t t);

// Arithmetic-geometric-mean robustness over scale-normalized margins;
// result in [-1, 1], sign-consistent with eval_classical.
double eval_agm(const Trace& trace, const FormulaPtr& f, std::size_t t);

// Softmin/cumulative robustness with sharpness k > 0.
double eval_smooth(const Trace& trace, const FormulaPtr& f, std::size_t t,
                   double k);

double robustness(const Trace& trace, const FormulaPtr& f,
                  const MetricSpec& spec, std::size_t t = 0);

// Stable ascending sort by robustness at t = 0; front = least safe.
std::vector<std::pair<std::size_t, double>> rank_trajectories(
    const std::vector<Trace>& traces, const FormulaPtr& f,
    const MetricSpec& spec);

// Prefix notation, e.g. "(always 0 99 (geq dist_m 2.0))". Predicates are
// (geq chan bound [scale]) / (leq chan bound [scale]); operators: not, and,
// or, always, eventually, until; constant: true.
FormulaPtr parse_formula(const std::string& text);  // SchemaError
std::string format_formula(const FormulaPtr& f);

// CSV with header "step,time_s,<channel>..."; extra writer columns may be
// appended by callers. Empty cells read back as NaN.
void write_trace_csv(const Trace& trace, std::ostream& out);
Trace read_trace_csv(std::istream& in);
void write_trace_csv_file(const Trace& trace, const std::string& path);
Trace read_trace_csv_file(const std::string& path);

}  // namespace perisk::stl
