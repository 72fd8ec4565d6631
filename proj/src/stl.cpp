#include "perisk/stl.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "perisk/errors.hpp"
#include "perisk/numeric.hpp"

namespace perisk::stl {

namespace {

Interval checked(Interval i) {
  if (i.lo > i.hi) {
    throw ArgumentError("interval lo " + std::to_string(i.lo) +
                        " exceeds hi " + std::to_string(i.hi));
  }
  return i;
}

FormulaPtr node(Formula f) { return std::make_shared<const Formula>(std::move(f)); }

}  // namespace

FormulaPtr f_true() { return node({.kind = Formula::Kind::True}); }

FormulaPtr f_pred(Predicate p) {
  if (!(p.scale > 0.0)) throw ArgumentError("predicate scale must be positive");
  Formula f{.kind = Formula::Kind::Pred};
  f.pred = std::move(p);
  return node(std::move(f));
}

FormulaPtr f_not(FormulaPtr a) {
  return node({.kind = Formula::Kind::Not, .a = std::move(a)});
}

FormulaPtr f_and(FormulaPtr a, FormulaPtr b) {
  return node({.kind = Formula::Kind::And, .a = std::move(a), .b = std::move(b)});
}

FormulaPtr f_or(FormulaPtr a, FormulaPtr b) {
  return node({.kind = Formula::Kind::Or, .a = std::move(a), .b = std::move(b)});
}

FormulaPtr f_always(Interval i, FormulaPtr a) {
  return node({.kind = Formula::Kind::Always,
               .interval = checked(i),
               .a = std::move(a)});
}

FormulaPtr f_eventually(Interval i, FormulaPtr a) {
  return node({.kind = Formula::Kind::Eventually,
               .interval = checked(i),
               .a = std::move(a)});
}

FormulaPtr f_until(Interval i, FormulaPtr a, FormulaPtr b) {
  return node({.kind = Formula::Kind::Until,
               .interval = checked(i),
               .a = std::move(a),
               .b = std::move(b)});
}

std::size_t Trace::channel_index(const std::string& name) const {
  for (std::size_t c = 0; c < channels.size(); ++c) {
    if (channels[c] == name) return c;
  }
  throw SchemaError("unknown trace channel '" + name + "'");
}

Metric metric_from_name(const std::string& name) {
  if (name == "classical") return Metric::Classical;
  if (name == "agm") return Metric::Agm;
  if (name == "smooth") return Metric::Smooth;
  throw ArgumentError("unknown metric '" + name + "'");
}

std::string metric_name(Metric m) {
  switch (m) {
    case Metric::Classical: return "classical";
    case Metric::Agm: return "agm";
    case Metric::Smooth: return "smooth";
  }
  return "?";
}

namespace {

// Conjunction aggregate over normalized values: geometric mean of (1 + r_i)
// minus 1 when all positive, otherwise the arithmetic mean of the
// violating (non-positive) values. Closed over [-1, 1].
double agm_and(const std::vector<double>& vals) {
  const double m = static_cast<double>(vals.size());
  bool all_pos = true;
  double neg_sum = 0.0;
  for (double v : vals) {
    if (v <= 0.0) {
      all_pos = false;
      neg_sum += v;
    }
  }
  if (all_pos) {
    double log_acc = 0.0;
    for (double v : vals) log_acc += std::log1p(v);
    return std::exp(log_acc / m) - 1.0;
  }
  return neg_sum / m;
}

double agm_or(std::vector<double> vals) {
  for (double& v : vals) v = -v;
  return -agm_and(vals);
}

struct Evaluator {
  const Trace& trace;
  Metric metric;
  double k;

  double agg_and(const std::vector<double>& vals) const {
    switch (metric) {
      case Metric::Classical: return *std::min_element(vals.begin(), vals.end());
      case Metric::Agm: return agm_and(vals);
      case Metric::Smooth: return softmin(vals, k);
    }
    return 0.0;
  }

  double agg_or(const std::vector<double>& vals) const {
    switch (metric) {
      case Metric::Classical: return *std::max_element(vals.begin(), vals.end());
      case Metric::Agm: return agm_or(vals);
      case Metric::Smooth: return softmax_val(vals, k);
    }
    return 0.0;
  }

  // Eventually rewards accumulated satisfaction under the smooth metric:
  // sum of positive parts when any value is positive, softmax otherwise.
  double agg_eventually(const std::vector<double>& vals) const {
    if (metric != Metric::Smooth) return agg_or(vals);
    double pos = 0.0;
    bool any_pos = false;
    for (double v : vals) {
      if (v > 0.0) {
        any_pos = true;
        pos += v;
      }
    }
    return any_pos ? pos : softmax_val(vals, k);
  }

  std::size_t window_end(const Interval& i, std::size_t t) const {
    const std::size_t hi = t + i.hi;
    if (hi >= trace.length()) {
      throw HorizonError("window [" + std::to_string(i.lo) + "," +
                         std::to_string(i.hi) + "] at step " +
                         std::to_string(t) + " exceeds trace length " +
                         std::to_string(trace.length()));
    }
    return hi;
  }

  double eval(const FormulaPtr& f, std::size_t t) const {
    switch (f->kind) {
      case Formula::Kind::True:
        return metric == Metric::Agm ? 1.0 : kPosInf;
      case Formula::Kind::Pred: {
        const auto& p = f->pred;
        const double v = trace.value(t, trace.channel_index(p.channel));
        double margin = p.greater ? v - p.bound : p.bound - v;
        if (metric == Metric::Agm) {
          margin /= p.scale;
          if (margin < -1.0 || margin > 1.0) {
            throw NormalizationError(
                "scaled margin " + std::to_string(margin) + " for channel '" +
                p.channel + "' outside [-1, 1]; raise the predicate scale");
          }
        }
        return margin;
      }
      case Formula::Kind::Not:
        return -eval(f->a, t);
      case Formula::Kind::And:
        return agg_and({eval(f->a, t), eval(f->b, t)});
      case Formula::Kind::Or:
        return agg_or({eval(f->a, t), eval(f->b, t)});
      case Formula::Kind::Always: {
        const std::size_t hi = window_end(f->interval, t);
        std::vector<double> vals;
        vals.reserve(f->interval.hi - f->interval.lo + 1);
        for (std::size_t u = t + f->interval.lo; u <= hi; ++u) {
          vals.push_back(eval(f->a, u));
        }
        return agg_and(vals);
      }
      case Formula::Kind::Eventually: {
        const std::size_t hi = window_end(f->interval, t);
        std::vector<double> vals;
        vals.reserve(f->interval.hi - f->interval.lo + 1);
        for (std::size_t u = t + f->interval.lo; u <= hi; ++u) {
          vals.push_back(eval(f->a, u));
        }
        return agg_eventually(vals);
      }
      case Formula::Kind::Until: {
        const std::size_t hi = window_end(f->interval, t);
        std::vector<double> holds;  // r(a, t..u), grown incrementally
        for (std::size_t u = t; u < t + f->interval.lo; ++u) {
          holds.push_back(eval(f->a, u));
        }
        std::vector<double> cands;
        cands.reserve(f->interval.hi - f->interval.lo + 1);
        for (std::size_t u = t + f->interval.lo; u <= hi; ++u) {
          holds.push_back(eval(f->a, u));
          cands.push_back(agg_and({eval(f->b, u), agg_and(holds)}));
        }
        return agg_or(cands);
      }
    }
    throw ArgumentError("corrupt formula node");
  }
};

}  // namespace

double eval_classical(const Trace& trace, const FormulaPtr& f, std::size_t t) {
  return Evaluator{trace, Metric::Classical, 0.0}.eval(f, t);
}

double eval_agm(const Trace& trace, const FormulaPtr& f, std::size_t t) {
  return Evaluator{trace, Metric::Agm, 0.0}.eval(f, t);
}

double eval_smooth(const Trace& trace, const FormulaPtr& f, std::size_t t,
                   double k) {
  if (!(k > 0.0)) throw ParameterError("smooth sharpness k must be positive");
  return Evaluator{trace, Metric::Smooth, k}.eval(f, t);
}

double robustness(const Trace& trace, const FormulaPtr& f,
                  const MetricSpec& spec, std::size_t t) {
  switch (spec.metric) {
    case Metric::Classical: return eval_classical(trace, f, t);
    case Metric::Agm: return eval_agm(trace, f, t);
    case Metric::Smooth: return eval_smooth(trace, f, t, spec.smooth_k);
  }
  throw ArgumentError("unknown metric selector");
}

std::vector<std::pair<std::size_t, double>> rank_trajectories(
    const std::vector<Trace>& traces, const FormulaPtr& f,
    const MetricSpec& spec) {
  std::vector<std::pair<std::size_t, double>> out;
  out.reserve(traces.size());
  for (std::size_t i = 0; i < traces.size(); ++i) {
    out.emplace_back(i, robustness(traces[i], f, spec));
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const auto& l, const auto& r) { return l.second < r.second; });
  return out;
}

namespace {

struct Parser {
  std::vector<std::string> tokens;
  std::vector<std::size_t> offsets;
  std::size_t pos = 0;

  explicit Parser(const std::string& text) {
    std::size_t i = 0;
    while (i < text.size()) {
      const char c = text[i];
      if (std::isspace(static_cast<unsigned char>(c))) {
        ++i;
      } else if (c == '(' || c == ')') {
        tokens.emplace_back(1, c);
        offsets.push_back(i);
        ++i;
      } else {
        std::size_t j = i;
        while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j])) &&
               text[j] != '(' && text[j] != ')') {
          ++j;
        }
        tokens.push_back(text.substr(i, j - i));
        offsets.push_back(i);
        i = j;
      }
    }
  }

  [[noreturn]] void fail(const std::string& msg) const {
    const std::size_t at = pos < offsets.size() ? offsets[pos]
                          : (offsets.empty() ? 0 : offsets.back() + 1);
    throw SchemaError("formula parse error at offset " + std::to_string(at) +
                      ": " + msg);
  }

  const std::string& peek() {
    if (pos >= tokens.size()) fail("unexpected end of input");
    return tokens[pos];
  }

  std::string next() {
    const std::string& t = peek();
    ++pos;
    return t;
  }

  void expect(const std::string& t) {
    if (next() != t) {
      --pos;
      fail("expected '" + t + "'");
    }
  }

  double number() {
    const std::string t = next();
    try {
      std::size_t used = 0;
      const double v = std::stod(t, &used);
      if (used != t.size()) throw std::invalid_argument(t);
      return v;
    } catch (const std::exception&) {
      --pos;
      fail("expected a number, got '" + t + "'");
    }
  }

  std::size_t index() {
    const double v = number();
    if (v < 0.0 || v != std::floor(v)) {
      --pos;
      fail("expected a nonnegative step index");
    }
    return static_cast<std::size_t>(v);
  }

  FormulaPtr formula() {
    if (peek() == "true") {
      next();
      return f_true();
    }
    expect("(");
    const std::string op = next();
    FormulaPtr out;
    if (op == "geq" || op == "leq") {
      Predicate p;
      p.channel = next();
      p.bound = number();
      p.greater = (op == "geq");
      if (peek() != ")") p.scale = number();
      out = f_pred(std::move(p));
    } else if (op == "not") {
      out = f_not(formula());
    } else if (op == "and" || op == "or") {
      out = formula();
      do {
        FormulaPtr rhs = formula();
        out = (op == "and") ? f_and(out, rhs) : f_or(out, rhs);
      } while (peek() != ")");
    } else if (op == "always" || op == "eventually") {
      Interval i{index(), index()};
      if (i.lo > i.hi) fail("interval lo exceeds hi");
      out = (op == "always") ? f_always(i, formula()) : f_eventually(i, formula());
    } else if (op == "until") {
      Interval i{index(), index()};
      if (i.lo > i.hi) fail("interval lo exceeds hi");
      FormulaPtr a = formula();
      out = f_until(i, a, formula());
    } else {
      --pos;
      fail("unknown operator '" + op + "'");
    }
    expect(")");
    return out;
  }
};

std::string fmt_num(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

FormulaPtr parse_formula(const std::string& text) {
  Parser p(text);
  FormulaPtr f = p.formula();
  if (p.pos != p.tokens.size()) p.fail("trailing input after formula");
  return f;
}

std::string format_formula(const FormulaPtr& f) {
  switch (f->kind) {
    case Formula::Kind::True:
      return "true";
    case Formula::Kind::Pred: {
      const auto& p = f->pred;
      std::string s = "(" + std::string(p.greater ? "geq" : "leq") + " " +
                      p.channel + " " + fmt_num(p.bound);
      if (p.scale != 100.0) s += " " + fmt_num(p.scale);
      return s + ")";
    }
    case Formula::Kind::Not:
      return "(not " + format_formula(f->a) + ")";
    case Formula::Kind::And:
      return "(and " + format_formula(f->a) + " " + format_formula(f->b) + ")";
    case Formula::Kind::Or:
      return "(or " + format_formula(f->a) + " " + format_formula(f->b) + ")";
    case Formula::Kind::Always:
    case Formula::Kind::Eventually: {
      const char* op = f->kind == Formula::Kind::Always ? "always" : "eventually";
      return "(" + std::string(op) + " " + std::to_string(f->interval.lo) + " " +
             std::to_string(f->interval.hi) + " " + format_formula(f->a) + ")";
    }
    case Formula::Kind::Until:
      return "(until " + std::to_string(f->interval.lo) + " " +
             std::to_string(f->interval.hi) + " " + format_formula(f->a) + " " +
             format_formula(f->b) + ")";
  }
  return "?";
}

void write_trace_csv(const Trace& trace, std::ostream& out) {
  out << "step,time_s";
  for (const auto& c : trace.channels) out << ',' << c;
  out << '\n';
  out << std::setprecision(17);
  for (std::size_t t = 0; t < trace.rows.size(); ++t) {
    out << t << ',' << static_cast<double>(t) * trace.dt;
    for (double v : trace.rows[t]) out << ',' << v;
    out << '\n';
  }
}

Trace read_trace_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw SchemaError("empty trace file");
  auto split = [](const std::string& s) {
    std::vector<std::string> parts;
    std::string cur;
    for (char c : s) {
      if (c == ',') {
        parts.push_back(cur);
        cur.clear();
      } else if (c != '\r') {
        cur += c;
      }
    }
    parts.push_back(cur);
    return parts;
  };
  const auto header = split(line);
  if (header.size() < 2 || header[0] != "step" || header[1] != "time_s") {
    throw SchemaError("trace header must start with 'step,time_s'");
  }
  Trace trace;
  trace.channels.assign(header.begin() + 2, header.end());
  std::vector<double> times;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto parts = split(line);
    if (parts.size() != header.size()) {
      throw SchemaError("trace line " + std::to_string(line_no) + " has " +
                        std::to_string(parts.size()) + " fields, expected " +
                        std::to_string(header.size()));
    }
    std::vector<double> row;
    row.reserve(trace.channels.size());
    for (std::size_t c = 2; c < parts.size(); ++c) {
      row.push_back(parts[c].empty() ? std::nan("") : std::stod(parts[c]));
    }
    times.push_back(std::stod(parts[1]));
    trace.rows.push_back(std::move(row));
  }
  if (trace.rows.empty()) throw SchemaError("trace file has no data rows");
  if (times.size() >= 2) trace.dt = times[1] - times[0];
  return trace;
}

void write_trace_csv_file(const Trace& trace, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ArgumentError("cannot open '" + path + "' for writing");
  write_trace_csv(trace, out);
}

Trace read_trace_csv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ArgumentError("cannot open trace file '" + path + "'");
  return read_trace_csv(in);
}

}  // namespace perisk::stl
