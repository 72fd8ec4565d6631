#include <cmath>
#include <doctest.h>
#include <sstream>

#include "perisk/errors.hpp"
#include "perisk/numeric.hpp"
#include "perisk/sim.hpp"

using namespace perisk;

namespace {

sim::StateProb constant(double p) {
  return [p](const sim::SimState&) { return p; };
}

}  // namespace

TEST_CASE("single-step kinematics") {
  sim::ScenarioConfig cfg;
  cfg.validate();

  SUBCASE("emergency braking sheds 8 m/s^2") {
    sim::SimState s = sim::initial_state(cfg);
    s.lead_pos = s.ego_pos + 9.0;  // inside the emergency range
    const auto next = sim::step(s, true, cfg);
    CHECK(next.ego_speed == doctest::Approx(19.44 - 8.0 * 0.05));
  }
  SUBCASE("at target speed with no detection the speed holds") {
    const sim::SimState s = sim::initial_state(cfg);
    const auto next = sim::step(s, false, cfg);
    CHECK(next.ego_speed == doctest::Approx(19.44));
  }
  SUBCASE("detection outside the emergency range does not brake") {
    sim::SimState s = sim::initial_state(cfg);
    s.lead_pos = s.ego_pos + 14.0;
    const auto next = sim::step(s, true, cfg);
    CHECK(next.ego_speed == doctest::Approx(19.44));
  }
  SUBCASE("acceleration toward target is clamped") {
    sim::SimState s = sim::initial_state(cfg);
    s.ego_speed = 5.0;  // tracking error 14.44, clamp at +3
    const auto next = sim::step(s, false, cfg);
    CHECK(next.ego_speed == doctest::Approx(5.0 + 3.0 * 0.05));
  }
  SUBCASE("the braking lead stops after 49 steps") {
    sim::ScenarioConfig hard = cfg;
    hard.lead_decel = 8.0;
    hard.lead_brake_step = 0;
    sim::SimState s = sim::initial_state(hard);
    std::size_t steps = 0;
    while (s.lead_speed > 0.0) {
      s = sim::step(s, false, hard);
      ++steps;
    }
    CHECK(steps == 49);
  }
  SUBCASE("the lead cruises before its brake step") {
    sim::SimState s = sim::initial_state(cfg);
    for (int t = 0; t < 10; ++t) {
      s = sim::step(s, false, cfg);
      CHECK(s.lead_speed == doctest::Approx(19.44));
    }
  }
  SUBCASE("the gap never goes negative") {
    sim::ScenarioConfig tight = cfg;
    tight.initial_gap = 2.5;
    sim::SimState s = sim::initial_state(tight);
    s.lead_speed = 0.0;
    for (int t = 0; t < 40; ++t) {
      s = sim::step(s, false, tight);
      CHECK(s.gap() >= 0.0);
    }
    CHECK(s.gap() == doctest::Approx(0.0));
  }
}

TEST_CASE("config validation rejects broken geometry") {
  sim::ScenarioConfig cfg;
  cfg.crash_threshold = 12.0;  // >= emergency range
  CHECK_THROWS_AS(cfg.validate(), ArgumentError);
  cfg = {};
  cfg.emergency_range = 20.0;  // >= initial gap
  CHECK_THROWS_AS(cfg.validate(), ArgumentError);
  cfg = {};
  cfg.dt = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ArgumentError);
  cfg = {};
  cfg.horizon = 1;
  CHECK_THROWS_AS(cfg.validate(), ArgumentError);
}

TEST_CASE("perfect detection stays safe, total blindness crashes") {
  const sim::ScenarioConfig cfg;  // defaults
  const auto seeing =
      sim::rollout(constant(1.0 - kProbEps), constant(1.0 - kProbEps), cfg, 1);
  CHECK(sim::min_gap(seeing) > cfg.crash_threshold);

  const auto blind = sim::rollout(constant(kProbEps), constant(kProbEps), cfg, 1);
  CHECK(sim::min_gap(blind) <= cfg.crash_threshold);
  CHECK(sim::min_gap(blind) == doctest::Approx(0.0));

  // the enumerable variant keeps the same calibration
  const auto small = sim::small_scenario();
  CHECK(sim::min_gap(sim::rollout(constant(1.0 - kProbEps),
                                  constant(1.0 - kProbEps), small, 1)) >
        small.crash_threshold);
  CHECK(sim::min_gap(sim::rollout(constant(kProbEps), constant(kProbEps),
                                  small, 1)) <= small.crash_threshold);
}

TEST_CASE("rollouts are deterministic and length-consistent") {
  const sim::ScenarioConfig cfg = sim::small_scenario();
  const auto a = sim::rollout(constant(0.6), constant(0.8), cfg, 77);
  const auto b = sim::rollout(constant(0.6), constant(0.8), cfg, 77);
  const auto c = sim::rollout(constant(0.6), constant(0.8), cfg, 78);

  REQUIRE(a.states.size() == cfg.horizon);
  REQUIRE(a.actions.size() == cfg.horizon - 1);
  REQUIRE(a.target_p.size() == cfg.horizon - 1);
  REQUIRE(a.proposal_p.size() == cfg.horizon - 1);
  CHECK(a.actions == b.actions);
  for (std::size_t t = 0; t < a.states.size(); ++t) {
    CHECK(a.states[t].ego_pos == b.states[t].ego_pos);
    CHECK(a.states[t].lead_pos == b.states[t].lead_pos);
  }
  bool differs = false;
  for (std::size_t t = 0; t < a.actions.size(); ++t)
    if (a.actions[t] != c.actions[t]) differs = true;
  CHECK(differs);
}

TEST_CASE("recorded probabilities are the realized-action probabilities") {
  const sim::ScenarioConfig cfg = sim::small_scenario();
  const auto traj = sim::rollout(constant(0.3), constant(0.9), cfg, 5);
  for (std::size_t t = 0; t < traj.actions.size(); ++t) {
    const double want_q = traj.actions[t] ? 0.3 : 0.7;
    const double want_p = traj.actions[t] ? 0.9 : 0.1;
    CHECK(traj.proposal_p[t] == doctest::Approx(want_q));
    CHECK(traj.target_p[t] == doctest::Approx(want_p));
    CHECK(traj.target_p[t] >= kProbEps);
    CHECK(traj.target_p[t] <= 1.0 - kProbEps);
  }

  // sampling under the target itself makes the streams identical
  const auto same = sim::rollout(constant(0.3), constant(0.3), cfg, 5);
  for (std::size_t t = 0; t < same.actions.size(); ++t)
    CHECK(same.target_p[t] == same.proposal_p[t]);
}

TEST_CASE("replaying recorded actions reproduces the states exactly") {
  const sim::ScenarioConfig cfg = sim::small_scenario();
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto traj = sim::rollout(constant(0.5), constant(0.7), cfg, seed);
    const auto again =
        sim::replay_actions(traj.actions, constant(0.5), constant(0.7), cfg);
    REQUIRE(again.states.size() == traj.states.size());
    for (std::size_t t = 0; t < traj.states.size(); ++t) {
      CHECK(again.states[t].ego_pos == traj.states[t].ego_pos);
      CHECK(again.states[t].ego_speed == traj.states[t].ego_speed);
      CHECK(again.states[t].lead_pos == traj.states[t].lead_pos);
      CHECK(again.states[t].lead_speed == traj.states[t].lead_speed);
    }
    for (std::size_t t = 0; t < traj.actions.size(); ++t) {
      CHECK(again.target_p[t] == traj.target_p[t]);
      CHECK(again.proposal_p[t] == traj.proposal_p[t]);
    }
  }
}

TEST_CASE("flipping a miss to a detection never shrinks the minimum gap") {
  sim::ScenarioConfig cfg = sim::small_scenario();
  REQUIRE(cfg.horizon <= 12);
  const std::size_t n_actions = cfg.horizon - 1;
  const auto q = constant(0.5);
  for (std::uint32_t bits = 0; bits < (1u << n_actions); ++bits) {
    std::vector<std::uint8_t> actions(n_actions);
    for (std::size_t t = 0; t < n_actions; ++t)
      actions[t] = (bits >> t) & 1u;
    const double base = sim::min_gap(sim::replay_actions(actions, q, q, cfg));
    for (std::size_t t = 0; t < n_actions; ++t) {
      if (actions[t]) continue;
      auto flipped = actions;
      flipped[t] = 1;
      const double up = sim::min_gap(sim::replay_actions(flipped, q, q, cfg));
      CHECK(up >= base - 1e-12);
    }
  }
}

TEST_CASE("log probability sums the chosen stream") {
  const sim::ScenarioConfig cfg = sim::small_scenario();
  auto traj = sim::rollout(constant(0.5), constant(0.25), cfg, 9);
  traj.actions = {1, 0};
  traj.target_p = {0.5, 0.25};
  traj.proposal_p = {0.5, 0.5};
  CHECK(sim::rollout_log_probability(traj, sim::Which::Target) ==
        doctest::Approx(std::log(0.125)));
  CHECK(sim::rollout_log_probability(traj, sim::Which::Proposal) ==
        doctest::Approx(std::log(0.25)));

  // twenty consecutive misses at detection probability 0.99
  sim::Trajectory misses;
  misses.actions.assign(20, 0);
  misses.proposal_p.assign(20, 0.5);
  misses.target_p.assign(20, 0.01);
  CHECK(sim::rollout_log_probability(misses, sim::Which::Target) ==
        doctest::Approx(20.0 * std::log(0.01)));
  CHECK(std::exp(sim::rollout_log_probability(misses, sim::Which::Target)) ==
        doctest::Approx(1e-40).epsilon(1e-9));

  sim::Trajectory empty_stream;
  empty_stream.target_p = {};
  empty_stream.proposal_p.clear();
  CHECK_THROWS_AS(sim::rollout_log_probability(empty_stream, sim::Which::Proposal),
                  ArgumentError);
}

TEST_CASE("states project to salient vectors and proposal features") {
  sim::SimState s;
  s.ego_pos = 3.0;
  s.lead_pos = 15.3;
  const auto sal = sim::salient_of_state(s);
  CHECK(sal[0] == 1.0);              // car
  CHECK(sal[6] == 1.0);              // no occlusion
  CHECK(sal[11] == doctest::Approx(12.3));  // z = gap
  CHECK(sal[9] == 0.0);
  CHECK(sal[12] == 0.0);

  sim::SimState zero = s;
  zero.ego_pos = zero.lead_pos;
  CHECK(sim::salient_of_state(zero)[11] == 0.0);

  const auto features = sim::proposal_features(s);
  REQUIRE(features.size() == 1);
  CHECK(features[0] == doctest::Approx(12.3));
}

TEST_CASE("trajectories export as monitorable traces") {
  const sim::ScenarioConfig cfg = sim::small_scenario();
  const auto traj = sim::rollout(constant(0.5), constant(0.5), cfg, 31);
  const auto trace = sim::to_trace(traj);
  REQUIRE(trace.channels == sim::kTraceChannels);
  REQUIRE(trace.rows.size() == cfg.horizon);
  CHECK(trace.dt == doctest::Approx(cfg.dt));
  const std::size_t dist = trace.channel_index("dist_m");
  const std::size_t act = trace.channel_index("act");
  for (std::size_t t = 0; t < trace.rows.size(); ++t) {
    CHECK(trace.rows[t][dist] ==
          doctest::Approx(traj.states[t].lead_pos - traj.states[t].ego_pos));
    if (t + 1 < trace.rows.size()) {
      CHECK(trace.rows[t][act] == double(traj.actions[t]));
    } else {
      CHECK(trace.rows[t][act] == 1.0);  // pad: no action after the last state
    }
  }

  std::ostringstream out;
  sim::write_trajectory_csv(traj, out);
  const std::string text = out.str();
  CHECK(text.find("action,target_p,proposal_p") != std::string::npos);
  // one header plus one line per state
  std::size_t lines = 0;
  for (char ch : text)
    if (ch == '\n') ++lines;
  CHECK(lines == cfg.horizon + 1);
}

TEST_CASE("a salient-space scorer adapts to states") {
  pem::Pem model;
  model.kind = pem::Pem::Kind::LogisticGap;
  model.p0 = 2.0;
  model.slope = 0.25;
  const auto scorer = sim::scorer_from_pem(model);
  sim::SimState s;
  s.lead_pos = 12.0;
  CHECK(scorer(s) == doctest::Approx(sigmoid(2.0 + 0.25 * 12.0)));
}
