#include "perisk/sim.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>

#include "perisk/errors.hpp"
#include "perisk/numeric.hpp"
#include "perisk/rng.hpp"

namespace perisk::sim {

void ScenarioConfig::validate() const {
  if (horizon < 2) throw ArgumentError("horizon must be at least 2 steps");
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0)) {
      throw ArgumentError(std::string(name) + " must be positive");
    }
  };
  positive(dt, "dt");
  positive(initial_speed, "initial_speed");
  positive(initial_gap, "initial_gap");
  positive(lead_decel, "lead_decel");
  positive(ego_emergency_decel, "ego_emergency_decel");
  positive(emergency_range, "emergency_range");
  positive(crash_threshold, "crash_threshold");
  positive(ego_target_speed, "ego_target_speed");
  positive(ego_max_accel, "ego_max_accel");
  positive(speed_gain, "speed_gain");
  if (!(crash_threshold < emergency_range && emergency_range < initial_gap)) {
    throw ArgumentError(
        "need crash_threshold < emergency_range < initial_gap");
  }
}

ScenarioConfig small_scenario() {
  // Sized so 2^(horizon-1) action patterns enumerate in milliseconds while a
  // crash still needs a long chain of missed detections: the ego starts just
  // outside the braking band and hovers near it, so most steps are live
  // detect/miss decisions rather than irrelevant far-field ones.
  ScenarioConfig cfg;
  cfg.horizon = 12;
  cfg.dt = 0.25;
  cfg.initial_gap = 5.15;
  cfg.emergency_range = 5.0;
  cfg.lead_brake_step = 1;
  cfg.lead_decel = 1.0;
  cfg.ego_emergency_decel = 1.5;
  return cfg;
}

SimState initial_state(const ScenarioConfig& cfg) {
  return {0, 0.0, cfg.initial_speed, cfg.initial_gap, cfg.initial_speed};
}

SimState step(const SimState& s, bool detected, const ScenarioConfig& cfg) {
  double lead_v = s.lead_speed;
  if (s.step >= cfg.lead_brake_step) {
    lead_v = std::max(0.0, lead_v - cfg.lead_decel * cfg.dt);
  }
  double ego_v;
  if (detected && s.gap() < cfg.emergency_range) {
    ego_v = std::max(0.0, s.ego_speed - cfg.ego_emergency_decel * cfg.dt);
  } else {
    const double accel =
        std::clamp(cfg.speed_gain * (cfg.ego_target_speed - s.ego_speed),
                   -cfg.ego_max_accel, cfg.ego_max_accel);
    ego_v = std::max(0.0, s.ego_speed + accel * cfg.dt);
  }
  const double lead_pos = s.lead_pos + lead_v * cfg.dt;
  const double ego_pos = std::min(s.ego_pos + ego_v * cfg.dt, lead_pos);
  return {s.step + 1, ego_pos, ego_v, lead_pos, lead_v};
}

Trajectory rollout(const StateProb& proposal, const StateProb& target,
                   const ScenarioConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  Trajectory traj;
  traj.dt = cfg.dt;
  traj.states.reserve(cfg.horizon);
  traj.actions.reserve(cfg.horizon - 1);
  traj.target_p.reserve(cfg.horizon - 1);
  traj.proposal_p.reserve(cfg.horizon - 1);
  SimState s = initial_state(cfg);
  traj.states.push_back(s);
  for (std::size_t t = 0; t + 1 < cfg.horizon; ++t) {
    const double q = clamp_prob(proposal(s));
    const double p = clamp_prob(target(s));
    const bool detected = rng.bernoulli(q);
    traj.actions.push_back(detected ? 1 : 0);
    traj.proposal_p.push_back(detected ? q : 1.0 - q);
    traj.target_p.push_back(detected ? p : 1.0 - p);
    s = step(s, detected, cfg);
    traj.states.push_back(s);
  }
  return traj;
}

Trajectory replay_actions(std::span<const std::uint8_t> actions,
                          const StateProb& proposal, const StateProb& target,
                          const ScenarioConfig& cfg) {
  cfg.validate();
  if (actions.size() + 1 != cfg.horizon) {
    throw ArgumentError("need horizon - 1 actions to replay");
  }
  Trajectory traj;
  traj.dt = cfg.dt;
  traj.states.reserve(cfg.horizon);
  SimState s = initial_state(cfg);
  traj.states.push_back(s);
  for (std::uint8_t a : actions) {
    const double q = clamp_prob(proposal(s));
    const double p = clamp_prob(target(s));
    const bool detected = a != 0;
    traj.actions.push_back(detected ? 1 : 0);
    traj.proposal_p.push_back(detected ? q : 1.0 - q);
    traj.target_p.push_back(detected ? p : 1.0 - p);
    s = step(s, detected, cfg);
    traj.states.push_back(s);
  }
  return traj;
}

pem::Salient salient_of_state(const SimState& s) {
  return pem::make_salient("car", "none", {0.0, 0.0, s.gap()}, 0.0);
}

std::vector<double> proposal_features(const SimState& s) { return {s.gap()}; }

double rollout_log_probability(const Trajectory& traj, Which which) {
  const auto& stream = which == Which::Target ? traj.target_p : traj.proposal_p;
  if (stream.size() != traj.actions.size() || stream.empty()) {
    throw ArgumentError("trajectory is missing the requested probability stream");
  }
  double total = 0.0;
  for (double p : stream) total += std::log(p);
  return total;
}

double min_gap(const Trajectory& traj) {
  double g = kPosInf;
  for (const auto& s : traj.states) g = std::min(g, s.gap());
  return g;
}

const std::vector<std::string> kTraceChannels = {
    "dist_m", "ego_v_mps", "lead_v_mps", "ego_x_m", "lead_x_m", "act"};

stl::Trace make_empty_trace(std::size_t horizon, double dt) {
  stl::Trace trace;
  trace.channels = kTraceChannels;
  trace.rows.assign(horizon, std::vector<double>(kTraceChannels.size(), 0.0));
  trace.dt = dt;
  return trace;
}

void set_trace_row(stl::Trace& trace, std::size_t t, const SimState& s,
                   double act) {
  auto& row = trace.rows[t];
  row[0] = s.gap();
  row[1] = s.ego_speed;
  row[2] = s.lead_speed;
  row[3] = s.ego_pos;
  row[4] = s.lead_pos;
  row[5] = act;
}

stl::Trace to_trace(const Trajectory& traj) {
  stl::Trace trace = make_empty_trace(traj.states.size(), traj.dt);
  for (std::size_t t = 0; t < traj.states.size(); ++t) {
    const double act = t < traj.actions.size()
                           ? static_cast<double>(traj.actions[t])
                           : 1.0;
    set_trace_row(trace, t, traj.states[t], act);
  }
  return trace;
}

void write_trajectory_csv(const Trajectory& traj, std::ostream& out) {
  out << "step,time_s,dist_m,ego_v_mps,lead_v_mps,ego_x_m,lead_x_m,"
         "action,target_p,proposal_p\n";
  out << std::setprecision(17);
  for (std::size_t t = 0; t < traj.states.size(); ++t) {
    const auto& s = traj.states[t];
    out << t << ',' << static_cast<double>(t) * traj.dt << ',' << s.gap() << ','
        << s.ego_speed << ',' << s.lead_speed << ',' << s.ego_pos << ','
        << s.lead_pos << ',';
    if (t < traj.actions.size()) {
      out << static_cast<int>(traj.actions[t]) << ',' << traj.target_p[t] << ','
          << traj.proposal_p[t];
    } else {
      out << ",,";
    }
    out << '\n';
  }
}

StateProb scorer_from_pem(pem::Pem model) {
  return [model = std::move(model)](const SimState& s) {
    const pem::Salient sal = salient_of_state(s);
    return pem::pem_eval(model, sal);
  };
}

}  // namespace perisk::sim
