#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "perisk/mlp.hpp"
#include "perisk/sim.hpp"
#include "perisk/stl.hpp"

namespace perisk::ais {

// State-dependent proposal q(detected | gap): 1 input, two hidden layers
// of 32, sigmoid output.
struct ProposalModel {
  mlp::Mlp net;
};

sim::StateProb scorer(const ProposalModel& proposal);

struct CemConfig {
  std::size_t stages = 10;          // K
  std::size_t stage_samples = 100;  // N_kappa
  std::size_t eval_samples = 100;   // N_e
  double quantile = 0.95;           // sigma in [0.95, 1)
  double alpha = 0.1;               // weight smoothing in [0, 1]
  double gamma = 0.0;               // failure threshold on robustness
  std::size_t pretrain_rollouts = 100;
  std::size_t stall_patience = 3;
  mlp::OptimConfig optim{.lr = 1e-2, .epochs = 500};

  void validate() const;  // ParameterError
};

struct EstimationReport {
  double mu_hat = 0.0;
  double log10_mu = 0.0;  // -inf when no failures observed
  double std_error = 0.0;
  std::size_t n_fail = 0;
  std::size_t n_total = 0;
  double mean_fail_nll = 0.0;  // NaN when no failures
  std::vector<double> stage_gammas;
  std::size_t sim_count = 0;
  bool stalled = false;
  double wall_seconds = 0.0;  // never serialized; outputs stay reproducible
};

struct StageDiag {
  std::size_t stage = 0;
  double gamma_k = 0.0;
  std::size_t n_fail = 0;       // count of r <= gamma in the stage batch
  double mean_log_weight = 0.0;  // over the whole stage batch
  double loss = 0.0;             // KL loss after the stage's optimization
};

// Plain failure-fraction estimate over the batch: mean of 1{r <= gamma}.
EstimationReport mc_estimate(const std::vector<sim::Trajectory>& trajectories,
                             const stl::FormulaPtr& formula,
                             const stl::MetricSpec& metric, double gamma);

// Samples needed for a target relative error at failure probability mu:
// ceil(1 / (rel_err^2 * mu)).
std::uint64_t required_samples(double mu, double rel_err);

// Log importance weight: sum_t (ln target_p - ln proposal_p).
double log_weight(const sim::Trajectory& traj);

// Importance-weighted estimate; per-trajectory weights exp(log_weight)
// with the log-domain failure mass also reported via log10_mu.
EstimationReport is_estimate(const std::vector<sim::Trajectory>& trajectories,
                             const stl::FormulaPtr& formula,
                             const stl::MetricSpec& metric, double gamma);

// Stage threshold: max(gamma, elite robustness quantile). The elite set is
// the lowest (1 - sigma) fraction of the sorted values, so the returned
// threshold is the value at ascending index N - 1 - floor(sigma * N).
double cem_threshold(std::span<const double> sorted_values, double sigma,
                     double gamma);

struct KlLoss {
  double loss = 0.0;
  std::vector<double> grad;  // d loss / d proposal parameters
};

// Smoothed cross-entropy stage loss: sum over qualifying trajectories
// (r <= gamma_k) of w_i^alpha * -(sum_t ln q(realized action)), with
// weights max-normalized in log domain and treated as constants.
// StallError when nothing qualifies.
KlLoss smoothed_kl_loss(const std::vector<sim::Trajectory>& trajectories,
                        const ProposalModel& proposal, double gamma_k,
                        double alpha, const stl::FormulaPtr& formula,
                        const stl::MetricSpec& metric);

struct PretrainResult {
  ProposalModel proposal;
  double mean_abs_gap = 0.0;  // |q - pem| averaged over visited states
  std::size_t n_points = 0;
};

// Regresses the proposal onto the pem's probabilities over states visited
// by pretrain_rollouts target-sampled rollouts.
PretrainResult pretrain_proposal(const sim::StateProb& pem,
                                 const sim::ScenarioConfig& scenario,
                                 const CemConfig& cem, std::uint64_t seed);

struct AdaptiveResult {
  EstimationReport report;
  std::vector<StageDiag> stages;
  ProposalModel proposal;
};

// Full adaptation loop: pretrain, K stages of sample/threshold/optimize
// with stall detection, then a final eval batch scored by is_estimate.
AdaptiveResult adaptive_est(const sim::StateProb& pem,
                            const stl::FormulaPtr& formula,
                            const sim::ScenarioConfig& scenario,
                            const CemConfig& cem, const stl::MetricSpec& metric,
                            std::uint64_t seed);

struct CurveRow {
  double gap = 0.0;
  double proposal_p = 0.0;
  double pem_p = 0.0;
};

std::vector<CurveRow> proposal_curve(
    const std::function<double(double)>& proposal_p,
    const std::function<double(double)>& pem_p, std::span<const double> grid);

std::string report_to_json(const EstimationReport& report);
std::string diag_to_json(const StageDiag& diag);
void write_curve_csv(const std::vector<CurveRow>& rows, std::ostream& out);

}  // namespace perisk::ais
