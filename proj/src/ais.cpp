#include "perisk/ais.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <json.hpp>
#include <ostream>

#include "perisk/errors.hpp"
#include "perisk/numeric.hpp"
#include "perisk/rng.hpp"

namespace perisk::ais {

sim::StateProb scorer(const ProposalModel& proposal) {
  return [net = proposal.net](const sim::SimState& s) {
    return net.prob(sim::proposal_features(s));
  };
}

void CemConfig::validate() const {
  if (stages < 1) throw ParameterError("need at least one stage");
  if (stage_samples < 2) throw ParameterError("need at least 2 stage samples");
  if (eval_samples < 1) throw ParameterError("need at least 1 eval sample");
  if (!(quantile >= 0.95 && quantile < 1.0)) {
    throw ParameterError("quantile must lie in [0.95, 1)");
  }
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw ParameterError("alpha must lie in [0, 1]");
  }
  if (pretrain_rollouts < 1) throw ParameterError("need pretrain rollouts");
}

namespace {

std::vector<double> batch_robustness(
    const std::vector<sim::Trajectory>& trajectories,
    const stl::FormulaPtr& formula, const stl::MetricSpec& metric) {
  std::vector<double> rs;
  rs.reserve(trajectories.size());
  for (const auto& traj : trajectories) {
    rs.push_back(stl::robustness(sim::to_trace(traj), formula, metric));
  }
  return rs;
}

// Shared mean/SE/NLL accounting. values[i] is the estimator's value on
// trajectory i; fail_lws holds log weights of the failing trajectories.
EstimationReport summarize(const std::vector<double>& values,
                           const std::vector<double>& fail_lws,
                           const std::vector<sim::Trajectory>& trajectories,
                           const std::vector<bool>& fails) {
  EstimationReport report;
  const std::size_t n = values.size();
  report.n_total = n;
  report.sim_count = n;
  double sum = 0.0;
  for (double v : values) sum += v;
  report.mu_hat = sum / static_cast<double>(n);
  double ss = 0.0;
  for (double v : values) ss += (v - report.mu_hat) * (v - report.mu_hat);
  report.std_error =
      n > 1 ? std::sqrt(ss / static_cast<double>(n - 1)) /
                  std::sqrt(static_cast<double>(n))
            : 0.0;
  std::vector<double> sorted_lws = fail_lws;
  std::sort(sorted_lws.begin(), sorted_lws.end());
  report.log10_mu =
      (log_sum_exp(sorted_lws) - std::log(static_cast<double>(n))) /
      std::log(10.0);
  report.n_fail = fail_lws.size();
  double nll_sum = 0.0;
  std::size_t nll_count = 0;
  for (std::size_t i = 0; i < trajectories.size(); ++i) {
    if (!fails[i]) continue;
    if (trajectories[i].target_p.size() == trajectories[i].actions.size() &&
        !trajectories[i].target_p.empty()) {
      nll_sum += -sim::rollout_log_probability(trajectories[i], sim::Which::Target);
      ++nll_count;
    }
  }
  report.mean_fail_nll = nll_count > 0
                             ? nll_sum / static_cast<double>(nll_count)
                             : std::nan("");
  return report;
}

}  // namespace

EstimationReport mc_estimate(const std::vector<sim::Trajectory>& trajectories,
                             const stl::FormulaPtr& formula,
                             const stl::MetricSpec& metric, double gamma) {
  if (trajectories.empty()) throw ArgumentError("empty trajectory batch");
  const std::vector<double> rs = batch_robustness(trajectories, formula, metric);
  std::vector<double> values(rs.size(), 0.0);
  std::vector<double> fail_lws;
  std::vector<bool> fails(rs.size(), false);
  for (std::size_t i = 0; i < rs.size(); ++i) {
    if (rs[i] <= gamma) {
      values[i] = 1.0;
      fails[i] = true;
      fail_lws.push_back(0.0);
    }
  }
  return summarize(values, fail_lws, trajectories, fails);
}

std::uint64_t required_samples(double mu, double rel_err) {
  if (!(mu > 0.0 && mu < 1.0)) {
    throw ArgumentError("mu must lie strictly inside (0, 1)");
  }
  if (!(rel_err > 0.0)) throw ArgumentError("relative error must be positive");
  return static_cast<std::uint64_t>(std::ceil(1.0 / (rel_err * rel_err * mu)));
}

double log_weight(const sim::Trajectory& traj) {
  const std::size_t n = traj.actions.size();
  if (traj.target_p.size() != n || traj.proposal_p.size() != n || n == 0) {
    throw ArgumentError("log weight needs both probability streams");
  }
  double lw = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    lw += std::log(traj.target_p[t]) - std::log(traj.proposal_p[t]);
  }
  return lw;
}

EstimationReport is_estimate(const std::vector<sim::Trajectory>& trajectories,
                             const stl::FormulaPtr& formula,
                             const stl::MetricSpec& metric, double gamma) {
  if (trajectories.empty()) throw ArgumentError("empty trajectory batch");
  const std::vector<double> rs = batch_robustness(trajectories, formula, metric);
  std::vector<double> values(rs.size(), 0.0);
  std::vector<double> fail_lws;
  std::vector<bool> fails(rs.size(), false);
  for (std::size_t i = 0; i < rs.size(); ++i) {
    if (rs[i] <= gamma) {
      const double lw = log_weight(trajectories[i]);
      values[i] = std::exp(lw);
      fails[i] = true;
      fail_lws.push_back(lw);
    }
  }
  return summarize(values, fail_lws, trajectories, fails);
}

double cem_threshold(std::span<const double> sorted_values, double sigma,
                     double gamma) {
  if (sorted_values.empty()) throw ArgumentError("empty robustness batch");
  if (!(sigma >= 0.95 && sigma < 1.0)) {
    throw ParameterError("quantile must lie in [0.95, 1)");
  }
  for (std::size_t i = 1; i < sorted_values.size(); ++i) {
    if (sorted_values[i] < sorted_values[i - 1]) {
      throw ArgumentError("robustness values must be sorted ascending");
    }
  }
  const auto n = sorted_values.size();
  // Elite threshold: the least-robust (1-sigma) fraction of the batch sits
  // at or below the returned value, so each stage refits on the worst few
  // percent of rollouts. Strong selection is what lets ten stages reach
  // events at the 1e-7 scale; a keep-(sigma) reading would lower the
  // reachable quantile by only 5% per stage.
  const auto from_top =
      static_cast<std::size_t>(std::floor(sigma * static_cast<double>(n)));
  if (from_top >= n) throw ArgumentError("quantile index out of range");
  return std::max(gamma, sorted_values[n - 1 - from_top]);
}

namespace {

// Qualifying decision points, labeled with realized actions and weighted
// by the max-normalized smoothed trajectory weight.
mlp::Batch kl_batch(const std::vector<sim::Trajectory>& trajectories,
                    const std::vector<double>& rs, double gamma_k,
                    double alpha) {
  std::vector<std::size_t> qualifying;
  for (std::size_t i = 0; i < rs.size(); ++i) {
    if (rs[i] <= gamma_k) qualifying.push_back(i);
  }
  if (qualifying.empty()) {
    throw StallError("no trajectory at or below the stage threshold");
  }
  double max_lw = kNegInf;
  std::vector<double> lws;
  lws.reserve(qualifying.size());
  for (std::size_t i : qualifying) {
    lws.push_back(log_weight(trajectories[i]));
    max_lw = std::max(max_lw, lws.back());
  }
  mlp::Batch batch;
  for (std::size_t q = 0; q < qualifying.size(); ++q) {
    const auto& traj = trajectories[qualifying[q]];
    const double w = std::exp(alpha * (lws[q] - max_lw));
    for (std::size_t t = 0; t < traj.actions.size(); ++t) {
      batch.x.push_back(sim::proposal_features(traj.states[t]));
      batch.y.push_back(traj.actions[t] ? 1.0 : 0.0);
      batch.w.push_back(w);
    }
  }
  return batch;
}

}  // namespace

KlLoss smoothed_kl_loss(const std::vector<sim::Trajectory>& trajectories,
                        const ProposalModel& proposal, double gamma_k,
                        double alpha, const stl::FormulaPtr& formula,
                        const stl::MetricSpec& metric) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw ParameterError("alpha must lie in [0, 1]");
  }
  const std::vector<double> rs = batch_robustness(trajectories, formula, metric);
  const mlp::Batch batch = kl_batch(trajectories, rs, gamma_k, alpha);
  KlLoss out;
  out.loss = mlp::loss_and_grad(proposal.net, batch, &out.grad);
  return out;
}

PretrainResult pretrain_proposal(const sim::StateProb& pem,
                                 const sim::ScenarioConfig& scenario,
                                 const CemConfig& cem, std::uint64_t seed) {
  cem.validate();
  mlp::Batch batch;
  for (std::size_t i = 0; i < cem.pretrain_rollouts; ++i) {
    const sim::Trajectory traj =
        sim::rollout(pem, pem, scenario, derive_seed(seed, 0x9e0000 + i));
    for (std::size_t t = 0; t < traj.actions.size(); ++t) {
      batch.x.push_back(sim::proposal_features(traj.states[t]));
      batch.y.push_back(clamp_prob(pem(traj.states[t])));
    }
  }
  batch.w.assign(batch.x.size(), 1.0 / static_cast<double>(batch.x.size()));
  PretrainResult result;
  result.n_points = batch.x.size();
  result.proposal.net =
      mlp::make_mlp(1, mlp::MlpSpec{.hidden = {32, 32}}, derive_seed(seed, 0x71));
  mlp::fit_standardizer(result.proposal.net, batch.x);
  mlp::adam_fit(result.proposal.net, batch, cem.optim);
  double gap_sum = 0.0;
  for (std::size_t i = 0; i < batch.x.size(); ++i) {
    gap_sum += std::abs(result.proposal.net.prob(batch.x[i]) - batch.y[i]);
  }
  result.mean_abs_gap = gap_sum / static_cast<double>(batch.x.size());
  return result;
}

AdaptiveResult adaptive_est(const sim::StateProb& pem,
                            const stl::FormulaPtr& formula,
                            const sim::ScenarioConfig& scenario,
                            const CemConfig& cem, const stl::MetricSpec& metric,
                            std::uint64_t seed) {
  const auto t_start = std::chrono::steady_clock::now();
  scenario.validate();
  cem.validate();
  AdaptiveResult result;
  PretrainResult pre = pretrain_proposal(pem, scenario, cem, seed);
  result.proposal = std::move(pre.proposal);
  std::size_t sim_count = cem.pretrain_rollouts;
  double prev_gamma = kPosInf;
  std::size_t non_improving = 0;
  bool stalled = false;
  std::vector<double> stage_gammas;
  for (std::size_t stage = 1; stage <= cem.stages; ++stage) {
    const sim::StateProb q = scorer(result.proposal);
    auto sample_batch = [&](std::uint64_t salt) {
      std::vector<sim::Trajectory> batch;
      batch.reserve(cem.stage_samples);
      for (std::size_t i = 0; i < cem.stage_samples; ++i) {
        batch.push_back(sim::rollout(
            q, pem, scenario, derive_seed(seed, salt + stage * 1000003 + i)));
      }
      return batch;
    };
    std::vector<sim::Trajectory> trajs = sample_batch(0);
    sim_count += cem.stage_samples;
    std::vector<double> rs = batch_robustness(trajs, formula, metric);
    // One retry with the same proposal if the batch misses the previous
    // threshold entirely.
    if (stage > 1 &&
        *std::min_element(rs.begin(), rs.end()) > stage_gammas.back()) {
      trajs = sample_batch(0x7e7e00);
      sim_count += cem.stage_samples;
      rs = batch_robustness(trajs, formula, metric);
    }
    std::vector<double> sorted = rs;
    std::sort(sorted.begin(), sorted.end());
    double gamma_k = cem_threshold(sorted, cem.quantile, cem.gamma);
    // Deterministic dynamics can pile enough rollouts onto the largest
    // robustness value that the upper quantile lands on the batch maximum.
    // The trim would then be empty and the stage a no-op, so tighten to the
    // next value strictly below; an all-equal batch (nothing below) keeps
    // the quantile and lets the stall counter decide.
    if (gamma_k > cem.gamma && gamma_k == sorted.back()) {
      for (auto it = sorted.rbegin(); it != sorted.rend(); ++it) {
        if (*it < gamma_k) {
          gamma_k = std::max(cem.gamma, *it);
          break;
        }
      }
    }
    stage_gammas.push_back(gamma_k);

    const mlp::Batch batch = kl_batch(trajs, rs, gamma_k, cem.alpha);
    mlp::adam_fit(result.proposal.net, batch, cem.optim);
    const double loss = mlp::loss_and_grad(result.proposal.net, batch, nullptr);

    StageDiag diag;
    diag.stage = stage;
    diag.gamma_k = gamma_k;
    for (double r : rs) {
      if (r <= cem.gamma) ++diag.n_fail;
    }
    double lw_sum = 0.0;
    for (const auto& traj : trajs) lw_sum += log_weight(traj);
    diag.mean_log_weight = lw_sum / static_cast<double>(trajs.size());
    diag.loss = loss;
    result.stages.push_back(diag);

    if (gamma_k > cem.gamma && gamma_k >= prev_gamma - 1e-12) {
      ++non_improving;
    } else {
      non_improving = 0;
    }
    prev_gamma = gamma_k;
    if (non_improving >= cem.stall_patience) {
      stalled = true;
      break;
    }
  }
  const sim::StateProb q = scorer(result.proposal);
  std::vector<sim::Trajectory> eval;
  eval.reserve(cem.eval_samples);
  for (std::size_t i = 0; i < cem.eval_samples; ++i) {
    eval.push_back(
        sim::rollout(q, pem, scenario, derive_seed(seed, 0xe7a10000 + i)));
  }
  sim_count += cem.eval_samples;
  result.report = is_estimate(eval, formula, metric, cem.gamma);
  result.report.stage_gammas = stage_gammas;
  result.report.sim_count = sim_count;
  result.report.stalled = stalled;
  result.report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start)
          .count();
  return result;
}

std::vector<CurveRow> proposal_curve(
    const std::function<double(double)>& proposal_p,
    const std::function<double(double)>& pem_p, std::span<const double> grid) {
  if (grid.empty()) throw ArgumentError("empty gap grid");
  std::vector<CurveRow> rows;
  rows.reserve(grid.size());
  for (double gap : grid) {
    rows.push_back({gap, proposal_p(gap), pem_p(gap)});
  }
  return rows;
}

namespace {

nlohmann::json finite_or_null(double v) {
  if (std::isfinite(v)) return v;
  return nullptr;
}

}  // namespace

std::string report_to_json(const EstimationReport& report) {
  nlohmann::json j;
  j["mu_hat"] = report.mu_hat;
  j["log10_mu"] = finite_or_null(report.log10_mu);
  j["std_error"] = report.std_error;
  j["n_fail"] = report.n_fail;
  j["n_total"] = report.n_total;
  j["mean_fail_nll"] = finite_or_null(report.mean_fail_nll);
  j["stage_gammas"] = report.stage_gammas;
  j["sim_count"] = report.sim_count;
  j["stalled"] = report.stalled;
  return j.dump(2);
}

std::string diag_to_json(const StageDiag& diag) {
  nlohmann::json j;
  j["stage"] = diag.stage;
  j["gamma_k"] = diag.gamma_k;
  j["n_fail"] = diag.n_fail;
  j["mean_log_weight"] = diag.mean_log_weight;
  j["loss"] = diag.loss;
  return j.dump();
}

void write_curve_csv(const std::vector<CurveRow>& rows, std::ostream& out) {
  out << "gap_m,proposal_p,pem_p\n";
  out << std::setprecision(17);
  for (const auto& row : rows) {
    out << row.gap << ',' << row.proposal_p << ',' << row.pem_p << '\n';
  }
}

}  // namespace perisk::ais
