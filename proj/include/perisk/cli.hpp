#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "perisk/ais.hpp"
#include "perisk/pem.hpp"
#include "perisk/sim.hpp"
#include "perisk/stl.hpp"

namespace perisk::cli {

// Flat sectioned key = value config; unknown keys are rejected so typos
// surface immediately. Empty text yields all defaults.
struct RunConfig {
  sim::ScenarioConfig scenario;
  ais::CemConfig cem;
  stl::MetricSpec metric;
  std::string formula_text;  // empty: always keep dist_m above crash_threshold

  std::string pem_kind = "logistic_gap";  // logistic_gap | constant | file
  double pem_intercept = 2.0;
  double pem_slope = 0.25;
  double pem_p = 0.5;
  std::string pem_path;

  std::vector<std::uint64_t> seeds{1};
  std::string out_dir;  // empty: $PERISK_OUT or "out"
  double naive_p = 0.5;
  std::size_t mc_samples = 0;  // 0: cem.eval_samples
};

RunConfig parse_run_config(const std::string& text);   // SchemaError
RunConfig load_run_config(const std::string& path);

stl::FormulaPtr config_formula(const RunConfig& cfg);
pem::Pem config_pem(const RunConfig& cfg);

// Write-then-rename so partial output never lands under the final name.
void write_file_atomic(const std::string& path, const std::string& content);

// Exit codes: 0 success (including stalled partial results), 2 input
// error, 3 capability refusal.
int run_cli(int argc, const char* const* argv);

}  // namespace perisk::cli
