#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <fstream>

#include "perisk/ais.hpp"
#include "perisk/errors.hpp"
#include "perisk/assignment.hpp"
#include "perisk/numeric.hpp"
#include "perisk/oracle.hpp"
#include "perisk/pem.hpp"
#include "perisk/sim.hpp"
#include "perisk/stl.hpp"

namespace py = pybind11;
using namespace perisk;

namespace {

stl::Trace make_trace(const std::vector<std::string>& channels,
                      const std::vector<std::vector<double>>& rows, double dt) {
  stl::Trace trace;
  trace.channels = channels;
  trace.rows = rows;
  trace.dt = dt;
  return trace;
}

stl::MetricSpec make_metric(const std::string& name, double smooth_k) {
  return {stl::metric_from_name(name), smooth_k};
}

pem::Pem logistic_gap_pem(double intercept, double slope) {
  pem::Pem model;
  model.kind = pem::Pem::Kind::LogisticGap;
  model.p0 = intercept;
  model.slope = slope;
  return model;
}

// pybind11 holders reject shared_ptr-to-const, so formulas cross the
// boundary inside a mutable handle.
struct FormulaHandle {
  stl::FormulaPtr ptr;
};

std::vector<std::uint8_t> to_labels(const std::vector<int>& labels) {
  std::vector<std::uint8_t> out;
  out.reserve(labels.size());
  for (int v : labels) {
    if (v != 0 && v != 1) throw ArgumentError("labels must be 0 or 1");
    out.push_back(static_cast<std::uint8_t>(v));
  }
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "rare-event failure estimation core";

  py::class_<FormulaHandle>(m, "Formula")
      .def("__repr__",
           [](const FormulaHandle& f) { return stl::format_formula(f.ptr); });

  m.def(
      "parse_formula",
      [](const std::string& text) {
        return FormulaHandle{stl::parse_formula(text)};
      },
      py::arg("text"));
  m.def(
      "format_formula",
      [](const FormulaHandle& f) { return stl::format_formula(f.ptr); },
      py::arg("formula"));

  m.def(
      "robustness",
      [](const std::vector<std::string>& channels,
         const std::vector<std::vector<double>>& rows,
         const FormulaHandle& formula, const std::string& metric,
         double smooth_k, double dt) {
        return stl::robustness(make_trace(channels, rows, dt), formula.ptr,
                               make_metric(metric, smooth_k));
      },
      py::arg("channels"), py::arg("rows"), py::arg("formula"),
      py::arg("metric") = "classical", py::arg("smooth_k") = 10.0,
      py::arg("dt") = 0.05);

  m.def(
      "rank_trajectories",
      [](const std::vector<std::string>& channels,
         const std::vector<std::vector<std::vector<double>>>& traces,
         const FormulaHandle& formula, const std::string& metric,
         double smooth_k) {
        std::vector<stl::Trace> ts;
        ts.reserve(traces.size());
        for (const auto& rows : traces)
          ts.push_back(make_trace(channels, rows, 0.05));
        return stl::rank_trajectories(ts, formula.ptr,
                                      make_metric(metric, smooth_k));
      },
      py::arg("channels"), py::arg("traces"), py::arg("formula"),
      py::arg("metric") = "classical", py::arg("smooth_k") = 10.0);

  m.def(
      "bce",
      [](const std::vector<double>& predictions,
         const std::vector<int>& labels) {
        return pem::bce(predictions, to_labels(labels));
      },
      py::arg("predictions"), py::arg("labels"));
  m.def(
      "roc_auc",
      [](const std::vector<double>& scores, const std::vector<int>& labels) {
        return pem::roc_auc(scores, to_labels(labels));
      },
      py::arg("scores"), py::arg("labels"));

  m.def(
      "solve_assignment",
      [](const std::vector<std::vector<double>>& cost) {
        const pem::MatchResult r = pem::solve_assignment(cost);
        return py::make_tuple(r.pairs, r.total_cost);
      },
      py::arg("cost"));
  m.def(
      "match_boxes",
      [](const std::vector<std::vector<double>>& gt,
         const std::vector<std::vector<double>>& pred) {
        pem::BoxMatchProblem problem;
        auto to_box = [](const std::vector<double>& v) {
          if (v.size() < 4) throw ArgumentError("box needs 4 coordinates");
          return pem::Box{v[0], v[1], v[2], v[3]};
        };
        for (const auto& b : gt) problem.gt.push_back(to_box(b));
        for (const auto& b : pred) problem.pred.push_back(to_box(b));
        const pem::MatchResult r = pem::hungarian_match(problem);
        return py::make_tuple(r.pairs, r.total_cost);
      },
      py::arg("gt"), py::arg("pred"));
  m.def(
      "iou",
      [](const std::vector<double>& a, const std::vector<double>& b) {
        return pem::iou({a[0], a[1], a[2], a[3]}, {b[0], b[1], b[2], b[3]});
      },
      py::arg("a"), py::arg("b"));

  m.def("required_samples", &ais::required_samples, py::arg("mu"),
        py::arg("rel_err"));
  m.def(
      "cem_threshold",
      [](const std::vector<double>& sorted_values, double sigma, double gamma) {
        return ais::cem_threshold(sorted_values, sigma, gamma);
      },
      py::arg("sorted_values"), py::arg("sigma"), py::arg("gamma"));
  m.def(
      "log_sum_exp",
      [](const std::vector<double>& xs) { return log_sum_exp(xs); },
      py::arg("xs"));

  m.def(
      "enumerate_failure_probability",
      [](double intercept, double slope, const std::string& formula_text,
         const std::string& metric, double smooth_k, double gamma) {
        const sim::ScenarioConfig cfg = sim::small_scenario();
        const auto scorer =
            sim::scorer_from_pem(logistic_gap_pem(intercept, slope));
        const auto result = oracle::exact_mu(
            scorer, cfg, stl::parse_formula(formula_text),
            make_metric(metric, smooth_k), gamma);
        py::dict out;
        out["mu"] = result.mu;
        out["log10_mu"] = result.log10_mu;
        out["n_fail_sequences"] = result.n_fail_sequences;
        out["n_total"] = result.n_total;
        return out;
      },
      py::arg("intercept") = 7.0, py::arg("slope") = -1.1,
      py::arg("formula_text") = "(always 0 11 (geq dist_m 2.0))",
      py::arg("metric") = "classical", py::arg("smooth_k") = 10.0,
      py::arg("gamma") = 0.0);

  m.def(
      "gen_synthetic_log",
      [](const std::string& path, std::size_t n, std::uint64_t seed) {
        std::ofstream out(path);
        if (!out) throw ArgumentError("cannot open " + path);
        pem::write_detection_log(pem::gen_synthetic_log(n, seed), out);
      },
      py::arg("path"), py::arg("n"), py::arg("seed"));

  py::register_exception<SchemaError>(m, "SchemaError", PyExc_ValueError);
  py::register_exception<ArgumentError>(m, "ArgumentError", PyExc_ValueError);
  py::register_exception<CapabilityError>(m, "CapabilityError",
                                          PyExc_RuntimeError);
}
