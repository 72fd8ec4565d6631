#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "perisk/pem.hpp"
#include "perisk/stl.hpp"

namespace perisk::sim {

// Two-car braking scenario: the lead vehicle brakes on schedule; the ego
// vehicle emergency-brakes only while the obstacle is detected inside the
// emergency range, otherwise tracks its target speed.
struct ScenarioConfig {
  std::size_t horizon = 100;  // states per rollout (T)
  double dt = 0.05;
  double initial_speed = 19.44;  // both cars, m/s (70 km/h)
  double initial_gap = 15.0;
  std::size_t lead_brake_step = 50;
  double lead_decel = 5.0;
  double ego_emergency_decel = 8.0;
  double emergency_range = 10.0;
  double crash_threshold = 2.0;
  double ego_target_speed = 19.44;
  double ego_max_accel = 3.0;
  double speed_gain = 1.0;  // 1/s

  void validate() const;  // ArgumentError
};

// Enumerable variant: short horizon, coarse steps, gentle lead braking.
// Total perception failure crashes; near-perfect perception stays safe.
ScenarioConfig small_scenario();

struct SimState {
  std::size_t step = 0;
  double ego_pos = 0.0;
  double ego_speed = 0.0;
  double lead_pos = 0.0;
  double lead_speed = 0.0;

  double gap() const { return lead_pos - ego_pos; }
};

SimState initial_state(const ScenarioConfig& cfg);

// Deterministic semi-implicit Euler update; speeds floor at zero and the
// ego position is capped at the lead position (gap never negative).
SimState step(const SimState& s, bool detected, const ScenarioConfig& cfg);

// Per-state detection probability source (target PEM or learned proposal).
using StateProb = std::function<double(const SimState&)>;

struct Trajectory {
  std::vector<SimState> states;       // length T
  std::vector<std::uint8_t> actions;  // length T-1
  std::vector<double> target_p;       // probability of the realized action
  std::vector<double> proposal_p;
  double dt = 0.05;
};

// Draws each detection from `proposal` and records both models'
// probabilities of the realized action (clamped into [eps, 1-eps]).
Trajectory rollout(const StateProb& proposal, const StateProb& target,
                   const ScenarioConfig& cfg, std::uint64_t seed);

// Rebuilds the state sequence for a fixed action sequence (states are a
// pure function of actions) and re-records both probability streams.
Trajectory replay_actions(std::span<const std::uint8_t> actions,
                          const StateProb& proposal, const StateProb& target,
                          const ScenarioConfig& cfg);

// Category car, occlusion none, camera-frame location (0, 0, gap), zero yaw.
pem::Salient salient_of_state(const SimState& s);

// The proposal sees a single feature: the gap in metres.
std::vector<double> proposal_features(const SimState& s);

enum class Which { Target, Proposal };

// Sum of log per-step realized-action probabilities (Which selects the
// stream); ArgumentError if that stream was not recorded.
double rollout_log_probability(const Trajectory& traj, Which which);

double min_gap(const Trajectory& traj);

// Channels: dist_m, ego_v_mps, lead_v_mps, ego_x_m, lead_x_m, act.
// act holds the detection drawn at that step; the final row pads act = 1.
extern const std::vector<std::string> kTraceChannels;
stl::Trace make_empty_trace(std::size_t horizon, double dt);
void set_trace_row(stl::Trace& trace, std::size_t t, const SimState& s,
                   double act);
stl::Trace to_trace(const Trajectory& traj);

// Trace CSV plus action,target_p,proposal_p columns (blank on the last row).
void write_trajectory_csv(const Trajectory& traj, std::ostream& out);

// Adapts a salient-space PEM to a per-state scorer.
StateProb scorer_from_pem(pem::Pem model);

}  // namespace perisk::sim
