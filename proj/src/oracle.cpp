#include "perisk/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>

#include "perisk/errors.hpp"
#include "perisk/numeric.hpp"

namespace perisk::oracle {

namespace {

std::size_t effective_cap(std::size_t horizon_cap) {
  return std::min(horizon_cap, kHorizonCapHard);
}

void check_horizon(const sim::ScenarioConfig& scenario, std::size_t horizon_cap) {
  const std::size_t cap = effective_cap(horizon_cap);
  if (scenario.horizon > cap) {
    throw CapabilityError(
        "enumeration refused: horizon " + std::to_string(scenario.horizon) +
        " exceeds cap " + std::to_string(cap) + " (2^(T-1) = 2^" +
        std::to_string(scenario.horizon - 1) + " sequences)");
  }
}

// Depth-first walk over all action sequences. The trace buffer is reused;
// row t is rewritten on the way down, so leaves always see a full trace.
struct Enumerator {
  const sim::StateProb& target;
  const sim::StateProb* proposal;  // optional second stream
  const sim::ScenarioConfig& scenario;
  const stl::FormulaPtr& formula;
  const stl::MetricSpec& metric;
  double gamma;
  stl::Trace trace;

  // leaf(bits, log_p, log_q) called for every failing sequence
  template <typename Leaf>
  void run(Leaf&& leaf) {
    trace = sim::make_empty_trace(scenario.horizon, scenario.dt);
    walk(sim::initial_state(scenario), 0, 0.0, 0.0, 0u,
         std::forward<Leaf>(leaf));
  }

  template <typename Leaf>
  void walk(const sim::SimState& s, std::size_t depth, double log_p,
            double log_q, std::uint32_t bits, Leaf&& leaf) {
    if (depth + 1 == scenario.horizon) {
      sim::set_trace_row(trace, depth, s, 1.0);
      const double r = stl::robustness(trace, formula, metric);
      if (r <= gamma) leaf(bits, log_p, log_q);
      return;
    }
    const double p = clamp_prob(target(s));
    const double q = proposal ? clamp_prob((*proposal)(s)) : p;
    for (int a = 1; a >= 0; --a) {
      sim::set_trace_row(trace, depth, s, static_cast<double>(a));
      walk(sim::step(s, a != 0, scenario), depth + 1,
           log_p + std::log(a ? p : 1.0 - p), log_q + std::log(a ? q : 1.0 - q),
           a ? (bits | (1u << depth)) : bits, leaf);
    }
  }
};

// Order-invariant mass accumulation: sort the collected logs, then fold.
double lse_sorted(std::vector<double> logs) {
  std::sort(logs.begin(), logs.end());
  return log_sum_exp(logs);
}

}  // namespace

EnumerationResult exact_mu(const sim::StateProb& target,
                           const sim::ScenarioConfig& scenario,
                           const stl::FormulaPtr& formula,
                           const stl::MetricSpec& metric, double gamma,
                           std::size_t horizon_cap, bool keep_table) {
  scenario.validate();
  check_horizon(scenario, horizon_cap);
  EnumerationResult result;
  result.n_total = std::uint64_t{1} << (scenario.horizon - 1);
  std::vector<double> fail_logs;
  Enumerator enumerator{target, nullptr, scenario, formula, metric, gamma, {}};
  enumerator.run([&](std::uint32_t bits, double log_p, double) {
    fail_logs.push_back(log_p);
    if (keep_table) result.failing.push_back({bits, log_p});
  });
  result.n_fail_sequences = fail_logs.size();
  const double log_mu = lse_sorted(fail_logs);
  result.mu = std::exp(log_mu);
  result.log10_mu = log_mu / std::log(10.0);
  if (fail_logs.empty()) {
    result.mean_fail_nll = std::nan("");
  } else {
    double nll = 0.0;
    for (double lp : fail_logs) nll += std::exp(lp - log_mu) * -lp;
    result.mean_fail_nll = nll;
  }
  if (keep_table) {
    std::sort(result.failing.begin(), result.failing.end(),
              [](const auto& a, const auto& b) { return a.bits < b.bits; });
  }
  return result;
}

double exact_is_expectation(const sim::StateProb& target,
                            const sim::StateProb& proposal,
                            const sim::ScenarioConfig& scenario,
                            const stl::FormulaPtr& formula,
                            const stl::MetricSpec& metric, double gamma,
                            std::size_t horizon_cap) {
  scenario.validate();
  check_horizon(scenario, horizon_cap);
  std::vector<double> term_logs;
  Enumerator enumerator{target, &proposal, scenario, formula, metric, gamma, {}};
  enumerator.run([&](std::uint32_t, double log_p, double log_q) {
    const double lw = log_p - log_q;  // ln(p/q), the importance weight
    term_logs.push_back(log_q + lw);  // ln(q * w)
  });
  return std::exp(lse_sorted(term_logs));
}

std::vector<ProposalMass> perfect_proposal_mass(
    const sim::StateProb& target, const sim::ScenarioConfig& scenario,
    const stl::FormulaPtr& formula, const stl::MetricSpec& metric, double gamma,
    std::size_t horizon_cap) {
  const EnumerationResult result =
      exact_mu(target, scenario, formula, metric, gamma, horizon_cap, true);
  if (result.n_fail_sequences == 0) {
    throw UndefinedProposalError(
        "failure probability is zero; the ideal proposal does not exist");
  }
  const double log_mu = result.log10_mu * std::log(10.0);
  std::vector<ProposalMass> masses;
  masses.reserve(result.failing.size());
  for (const auto& seq : result.failing) {
    masses.push_back(
        {seq.bits, std::exp(seq.log_target - log_mu), seq.log_target});
  }
  return masses;
}

std::string enumeration_to_json(const EnumerationResult& result) {
  nlohmann::json j;
  j["mu"] = result.mu;
  j["log10_mu"] =
      std::isfinite(result.log10_mu) ? nlohmann::json(result.log10_mu) : nullptr;
  j["n_fail_sequences"] = result.n_fail_sequences;
  j["n_total"] = result.n_total;
  j["mean_fail_nll"] = std::isfinite(result.mean_fail_nll)
                           ? nlohmann::json(result.mean_fail_nll)
                           : nullptr;
  return j.dump(2);
}

}  // namespace perisk::oracle
