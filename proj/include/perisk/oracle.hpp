#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "perisk/sim.hpp"
#include "perisk/stl.hpp"

namespace perisk::oracle {

// 2^(T-1) rollouts; the hard cap bounds runtime, the default keeps a full
// enumeration interactive.
inline constexpr std::size_t kHorizonCapHard = 20;
inline constexpr std::size_t kHorizonCapDefault = 14;

struct EnumerationResult {
  double mu = 0.0;
  double log10_mu = 0.0;  // -inf when nothing fails
  std::size_t n_fail_sequences = 0;
  std::uint64_t n_total = 0;
  // q*-weighted mean of -ln p(tau) over failing sequences; NaN if none.
  double mean_fail_nll = 0.0;

  struct FailSeq {
    std::uint32_t bits = 0;  // bit t = action after state t
    double log_target = 0.0;
  };
  std::vector<FailSeq> failing;  // populated on request, sorted by bits
};

// Exhaustive failure probability: sum of p(tau) over action sequences with
// r(tau) <= gamma, accumulated by sorted log-sum-exp (order invariant).
// CapabilityError when the horizon exceeds the cap.
EnumerationResult exact_mu(const sim::StateProb& target,
                           const sim::ScenarioConfig& scenario,
                           const stl::FormulaPtr& formula,
                           const stl::MetricSpec& metric, double gamma,
                           std::size_t horizon_cap = kHorizonCapDefault,
                           bool keep_table = false);

// Sum over all sequences of q(tau) * 1{fail} * p(tau)/q(tau), with the
// weight formed explicitly from the two log-likelihoods; must equal
// exact_mu up to rounding for any strictly positive proposal.
double exact_is_expectation(const sim::StateProb& target,
                            const sim::StateProb& proposal,
                            const sim::ScenarioConfig& scenario,
                            const stl::FormulaPtr& formula,
                            const stl::MetricSpec& metric, double gamma,
                            std::size_t horizon_cap = kHorizonCapDefault);

struct ProposalMass {
  std::uint32_t bits = 0;
  double mass = 0.0;        // p(tau) / mu
  double log_target = 0.0;  // ln p(tau)
};

// The zero-variance proposal: p restricted to failing sequences,
// normalized. UndefinedProposalError when mu = 0.
std::vector<ProposalMass> perfect_proposal_mass(
    const sim::StateProb& target, const sim::ScenarioConfig& scenario,
    const stl::FormulaPtr& formula, const stl::MetricSpec& metric, double gamma,
    std::size_t horizon_cap = kHorizonCapDefault);

std::string enumeration_to_json(const EnumerationResult& result);

}  // namespace perisk::oracle
