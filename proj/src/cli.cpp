#include "perisk/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <sstream>

#include "perisk/assignment.hpp"
#include "perisk/errors.hpp"
#include "perisk/numeric.hpp"
#include "perisk/oracle.hpp"
#include "perisk/rng.hpp"

namespace fs = std::filesystem;

namespace perisk::cli {

namespace {

constexpr const char* kVersion = "0.1.0";

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw SchemaError("config key '" + key + "': expected a number, got '" +
                      value + "'");
  }
}

std::size_t to_count(const std::string& key, const std::string& value) {
  const double v = to_double(key, value);
  if (v < 0.0 || v != std::floor(v)) {
    throw SchemaError("config key '" + key + "': expected a whole number");
  }
  return static_cast<std::size_t>(v);
}

}  // namespace

RunConfig parse_run_config(const std::string& text) {
  RunConfig cfg;
  std::vector<std::pair<std::string, std::string>> entries;  // key, value
  std::string section;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[') {
      if (t.back() != ']') {
        throw SchemaError("config line " + std::to_string(line_no) +
                          ": unterminated section header");
      }
      section = trim(t.substr(1, t.size() - 2));
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw SchemaError("config line " + std::to_string(line_no) +
                        ": expected key = value");
    }
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    if (section.empty() || key.empty()) {
      throw SchemaError("config line " + std::to_string(line_no) +
                        ": key outside a [section] or empty key");
    }
    entries.emplace_back(section + "." + key, value);
  }

  // The scenario preset resets every scenario field, so apply it first and
  // let explicit keys override regardless of file order.
  for (const auto& [key, value] : entries) {
    if (key != "scenario.preset") continue;
    if (value == "small") {
      cfg.scenario = sim::small_scenario();
    } else if (value == "default") {
      cfg.scenario = sim::ScenarioConfig{};
    } else {
      throw SchemaError("config key 'scenario.preset': unknown preset '" +
                        value + "'");
    }
  }

  for (const auto& [key, value] : entries) {
    auto& sc = cfg.scenario;
    auto& cem = cfg.cem;
    if (key == "scenario.preset") {
    } else if (key == "scenario.horizon") {
      sc.horizon = to_count(key, value);
    } else if (key == "scenario.dt") {
      sc.dt = to_double(key, value);
    } else if (key == "scenario.initial_speed") {
      sc.initial_speed = to_double(key, value);
    } else if (key == "scenario.initial_gap") {
      sc.initial_gap = to_double(key, value);
    } else if (key == "scenario.lead_brake_step") {
      sc.lead_brake_step = to_count(key, value);
    } else if (key == "scenario.lead_decel") {
      sc.lead_decel = to_double(key, value);
    } else if (key == "scenario.ego_emergency_decel") {
      sc.ego_emergency_decel = to_double(key, value);
    } else if (key == "scenario.emergency_range") {
      sc.emergency_range = to_double(key, value);
    } else if (key == "scenario.crash_threshold") {
      sc.crash_threshold = to_double(key, value);
    } else if (key == "scenario.ego_target_speed") {
      sc.ego_target_speed = to_double(key, value);
    } else if (key == "scenario.ego_max_accel") {
      sc.ego_max_accel = to_double(key, value);
    } else if (key == "scenario.speed_gain") {
      sc.speed_gain = to_double(key, value);
    } else if (key == "pem.kind") {
      if (value != "logistic_gap" && value != "constant" && value != "file") {
        throw SchemaError("config key 'pem.kind': unknown kind '" + value + "'");
      }
      cfg.pem_kind = value;
    } else if (key == "pem.intercept") {
      cfg.pem_intercept = to_double(key, value);
    } else if (key == "pem.slope") {
      cfg.pem_slope = to_double(key, value);
    } else if (key == "pem.p") {
      cfg.pem_p = to_double(key, value);
    } else if (key == "pem.path") {
      cfg.pem_path = value;
    } else if (key == "cem.stages") {
      cem.stages = to_count(key, value);
    } else if (key == "cem.stage_samples") {
      cem.stage_samples = to_count(key, value);
    } else if (key == "cem.eval_samples") {
      cem.eval_samples = to_count(key, value);
    } else if (key == "cem.quantile") {
      cem.quantile = to_double(key, value);
    } else if (key == "cem.alpha") {
      cem.alpha = to_double(key, value);
    } else if (key == "cem.gamma") {
      cem.gamma = to_double(key, value);
    } else if (key == "cem.pretrain_rollouts") {
      cem.pretrain_rollouts = to_count(key, value);
    } else if (key == "cem.stall_patience") {
      cem.stall_patience = to_count(key, value);
    } else if (key == "cem.epochs") {
      cem.optim.epochs = to_count(key, value);
    } else if (key == "cem.lr") {
      cem.optim.lr = to_double(key, value);
    } else if (key == "metric.kind") {
      cfg.metric.metric = stl::metric_from_name(value);
    } else if (key == "metric.smooth_k") {
      cfg.metric.smooth_k = to_double(key, value);
    } else if (key == "formula.spec") {
      cfg.formula_text = value;
    } else if (key == "run.seeds") {
      cfg.seeds.clear();
      std::istringstream ss(value);
      std::string tok;
      while (std::getline(ss, tok, ',')) {
        const std::string st = trim(tok);
        if (st.empty()) continue;
        cfg.seeds.push_back(static_cast<std::uint64_t>(
            to_count("run.seeds", st)));
      }
      if (cfg.seeds.empty()) {
        throw SchemaError("config key 'run.seeds': needs at least one seed");
      }
    } else if (key == "run.out_dir") {
      cfg.out_dir = value;
    } else if (key == "run.naive_p") {
      cfg.naive_p = to_double(key, value);
    } else if (key == "run.mc_samples") {
      cfg.mc_samples = to_count(key, value);
    } else {
      throw SchemaError("unknown config key '" + key + "'");
    }
  }
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ArgumentError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

stl::FormulaPtr config_formula(const RunConfig& cfg) {
  if (!cfg.formula_text.empty()) return stl::parse_formula(cfg.formula_text);
  std::ostringstream os;
  os << "(always 0 " << cfg.scenario.horizon - 1 << " (geq dist_m "
     << cfg.scenario.crash_threshold << "))";
  return stl::parse_formula(os.str());
}

pem::Pem config_pem(const RunConfig& cfg) {
  pem::Pem model;
  if (cfg.pem_kind == "logistic_gap") {
    model.kind = pem::Pem::Kind::LogisticGap;
    model.p0 = cfg.pem_intercept;
    model.slope = cfg.pem_slope;
  } else if (cfg.pem_kind == "constant") {
    model.kind = pem::Pem::Kind::Constant;
    model.p0 = cfg.pem_p;
  } else {
    if (cfg.pem_path.empty()) {
      throw SchemaError("pem.kind = file requires pem.path");
    }
    model = pem::load_pem(cfg.pem_path);
  }
  return model;
}

void write_file_atomic(const std::string& path, const std::string& content) {
  const fs::path target(path);
  if (target.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(target.parent_path(), ec);
  }
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ArgumentError("cannot open '" + tmp.string() + "' for writing");
    out << content;
    if (!out) throw ArgumentError("short write to '" + tmp.string() + "'");
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) {
    throw ArgumentError("cannot move '" + tmp.string() + "' into place: " +
                        ec.message());
  }
}

namespace {

std::string default_out_dir(const std::string& requested) {
  if (!requested.empty()) return requested;
  if (const char* env = std::getenv("PERISK_OUT"); env && *env) return env;
  return "out";
}

mlp::MlpSpec parse_layers(const std::string& text) {
  mlp::MlpSpec spec;
  std::istringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    const std::string t = trim(tok);
    if (t.empty()) continue;
    spec.hidden.push_back(to_count("--layers", t));
  }
  return spec;
}

struct TrainArgs {
  std::string log_path, out_path, report_path;
  std::string layers = "20,20,20";
  std::size_t epochs = 300;
  double lr = 1e-3;
  std::size_t folds = 5;
  std::uint64_t seed = 0;
};

int run_train(const TrainArgs& args, bool train_model) {
  const auto records = pem::read_detection_log_file(args.log_path);
  const mlp::MlpSpec spec = parse_layers(args.layers);
  const mlp::OptimConfig opt{.lr = args.lr, .epochs = args.epochs};
  const pem::CalibrationReport report =
      pem::cross_validate(records, spec, opt, args.folds, args.seed);
  if (train_model) {
    const pem::Pem model = pem::train_pem(records, spec, opt, args.seed);
    write_file_atomic(args.out_path, pem::pem_to_json(model) + "\n");
    std::cerr << "model written to " << args.out_path << "\n";
  }
  std::string report_path = args.report_path;
  if (report_path.empty()) {
    report_path = train_model ? args.out_path + ".report.json"
                              : (fs::path(default_out_dir("")) /
                                 "calibration_report.json")
                                    .string();
  }
  write_file_atomic(report_path, pem::calibration_to_json(report) + "\n");
  std::cerr << "held-out bce " << report.mean_bce << ", roc-auc "
            << report.mean_roc_auc << " over " << report.folds << " folds ("
            << report_path << ")\n";
  return 0;
}

struct EstimateArgs {
  std::string config_path;
  std::string method = "adaptive";
  std::string metric;  // empty: from config
  std::vector<std::uint64_t> seeds;
  std::string out_dir;
};

std::vector<sim::Trajectory> sample_batch(const sim::StateProb& proposal,
                                          const sim::StateProb& target,
                                          const sim::ScenarioConfig& scenario,
                                          std::size_t n, std::uint64_t seed) {
  std::vector<sim::Trajectory> batch;
  batch.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    batch.push_back(sim::rollout(proposal, target, scenario,
                                 derive_seed(seed, 0xba7c4 + i)));
  }
  return batch;
}

int run_estimate(const EstimateArgs& args) {
  RunConfig cfg = load_run_config(args.config_path);
  if (!args.seeds.empty()) cfg.seeds = args.seeds;
  if (!args.out_dir.empty()) cfg.out_dir = args.out_dir;
  if (!args.metric.empty()) cfg.metric.metric = stl::metric_from_name(args.metric);
  cfg.scenario.validate();
  cfg.cem.validate();
  const std::string out_dir = default_out_dir(cfg.out_dir);
  const stl::FormulaPtr formula = config_formula(cfg);
  const pem::Pem pem_model = config_pem(cfg);
  const sim::StateProb target = sim::scorer_from_pem(pem_model);

  nlohmann::json per_seed = nlohmann::json::array();
  std::vector<double> mu_hats;
  for (const std::uint64_t seed : cfg.seeds) {
    ais::EstimationReport report;
    if (args.method == "mc") {
      const std::size_t n =
          cfg.mc_samples > 0 ? cfg.mc_samples : cfg.cem.eval_samples;
      report = ais::mc_estimate(
          sample_batch(target, target, cfg.scenario, n, seed), formula,
          cfg.metric, cfg.cem.gamma);
    } else if (args.method == "naive-flat") {
      const double p = cfg.naive_p;
      const sim::StateProb flat = [p](const sim::SimState&) { return p; };
      const std::size_t n =
          cfg.mc_samples > 0 ? cfg.mc_samples : cfg.cem.eval_samples;
      report = ais::is_estimate(
          sample_batch(flat, target, cfg.scenario, n, seed), formula,
          cfg.metric, cfg.cem.gamma);
    } else if (args.method == "adaptive") {
      const ais::AdaptiveResult result = ais::adaptive_est(
          target, formula, cfg.scenario, cfg.cem, cfg.metric, seed);
      report = result.report;
      std::ostringstream diag;
      for (const auto& stage : result.stages) {
        diag << ais::diag_to_json(stage) << '\n';
      }
      write_file_atomic(
          (fs::path(out_dir) / ("diagnostics_seed" + std::to_string(seed) +
                                ".jsonl")).string(),
          diag.str());
      std::vector<double> grid;
      for (double g = 0.0; g <= cfg.scenario.initial_gap + 5.0; g += 0.25) {
        grid.push_back(g);
      }
      const mlp::Mlp& net = result.proposal.net;
      const auto curve = ais::proposal_curve(
          [&net](double gap) {
            const std::vector<double> x{gap};
            return net.prob(x);
          },
          [&pem_model](double gap) {
            const pem::Salient s =
                pem::make_salient("car", "none", {0.0, 0.0, gap}, 0.0);
            return pem::pem_eval(pem_model, s);
          },
          grid);
      std::ostringstream curve_csv;
      ais::write_curve_csv(curve, curve_csv);
      write_file_atomic(
          (fs::path(out_dir) / ("proposal_curve_seed" + std::to_string(seed) +
                                ".csv")).string(),
          curve_csv.str());
      if (report.stalled) {
        std::cerr << "seed " << seed
                  << ": threshold stopped improving; partial results kept\n";
      }
    } else {
      throw ArgumentError("unknown method '" + args.method +
                          "' (expected mc, naive-flat, or adaptive)");
    }
    write_file_atomic(
        (fs::path(out_dir) / ("report_seed" + std::to_string(seed) + ".json"))
            .string(),
        ais::report_to_json(report) + "\n");
    std::cerr << "seed " << seed << ": mu_hat " << report.mu_hat << " ("
              << report.n_fail << "/" << report.n_total << " failures, "
              << report.sim_count << " sims, " << report.wall_seconds
              << " s)\n";
    mu_hats.push_back(report.mu_hat);
    nlohmann::json entry;
    entry["seed"] = seed;
    entry["mu_hat"] = report.mu_hat;
    entry["log10_mu"] = std::isfinite(report.log10_mu)
                            ? nlohmann::json(report.log10_mu)
                            : nullptr;
    entry["std_error"] = report.std_error;
    entry["n_fail"] = report.n_fail;
    entry["n_total"] = report.n_total;
    entry["stalled"] = report.stalled;
    per_seed.push_back(entry);
  }
  double mean = 0.0;
  for (double m : mu_hats) mean += m;
  mean /= static_cast<double>(mu_hats.size());
  double ss = 0.0;
  for (double m : mu_hats) ss += (m - mean) * (m - mean);
  const double se =
      mu_hats.size() > 1
          ? std::sqrt(ss / static_cast<double>(mu_hats.size() - 1)) /
                std::sqrt(static_cast<double>(mu_hats.size()))
          : 0.0;
  nlohmann::json agg;
  agg["method"] = args.method;
  agg["metric"] = stl::metric_name(cfg.metric.metric);
  agg["mean_mu_hat"] = mean;
  agg["std_error_across_seeds"] = se;
  agg["per_seed"] = per_seed;
  write_file_atomic((fs::path(out_dir) / "aggregate.json").string(),
                    agg.dump(2) + "\n");
  std::cerr << "aggregate mu_hat " << mean << " +- " << se << " over "
            << mu_hats.size() << " seeds -> " << out_dir << "\n";
  return 0;
}

int run_oracle(const std::string& config_path, const std::string& out_path,
               std::size_t cap) {
  const RunConfig cfg = load_run_config(config_path);
  const oracle::EnumerationResult result =
      oracle::exact_mu(sim::scorer_from_pem(config_pem(cfg)), cfg.scenario,
                       config_formula(cfg), cfg.metric, cfg.cem.gamma, cap);
  const std::string text = oracle::enumeration_to_json(result) + "\n";
  if (out_path.empty()) {
    std::cout << text;
  } else {
    write_file_atomic(out_path, text);
  }
  std::cerr << "exact mu " << result.mu << " (" << result.n_fail_sequences
            << "/" << result.n_total << " failing sequences)\n";
  return 0;
}

int run_rank(const std::string& dir, const std::string& formula_text,
             const std::string& metric_name_arg, double smooth_k,
             const std::string& out_path) {
  const stl::FormulaPtr formula = stl::parse_formula(formula_text);
  stl::MetricSpec metric;
  metric.metric = stl::metric_from_name(metric_name_arg);
  metric.smooth_k = smooth_k;
  std::vector<std::string> files;
  if (!fs::is_directory(dir)) {
    throw ArgumentError("'" + dir + "' is not a directory");
  }
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".csv") {
      files.push_back(entry.path().string());
    }
  }
  std::sort(files.begin(), files.end());
  std::vector<std::pair<std::string, double>> rows;
  for (const auto& file : files) {
    try {
      const stl::Trace trace = stl::read_trace_csv_file(file);
      rows.emplace_back(file, stl::robustness(trace, formula, metric));
    } catch (const Error& e) {
      std::cerr << "warning: skipping " << file << ": " << e.what() << "\n";
    }
  }
  std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
    return a.second < b.second;
  });
  std::ostringstream csv;
  csv << "file,robustness\n" << std::setprecision(17);
  for (const auto& [file, r] : rows) csv << file << ',' << r << '\n';
  if (out_path.empty()) {
    std::cout << csv.str();
  } else {
    write_file_atomic(out_path, csv.str());
  }
  return 0;
}

int run_gen_log(std::size_t n, std::uint64_t seed, const std::string& out_path) {
  const auto records = pem::gen_synthetic_log(n, seed);
  std::ostringstream os;
  pem::write_detection_log(records, os);
  write_file_atomic(out_path, os.str());
  std::cerr << "wrote " << records.size() << " records to " << out_path << "\n";
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"rare-event failure probability estimation for "
               "perception-driven braking scenarios"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  TrainArgs train_args;
  auto* train = app.add_subcommand("train-pem",
                                   "fit a detection-probability surrogate "
                                   "and report held-out calibration");
  train->add_option("--log", train_args.log_path, "detection log (JSON lines)")
      ->required();
  train->add_option("--out", train_args.out_path, "model output path")
      ->required();
  train->add_option("--report", train_args.report_path,
                    "calibration report path (default: <out>.report.json)");
  train->add_option("--layers", train_args.layers, "hidden widths");
  train->add_option("--epochs", train_args.epochs, "training epochs");
  train->add_option("--lr", train_args.lr, "learning rate");
  train->add_option("--folds", train_args.folds, "cross-validation folds");
  train->add_option("--seed", train_args.seed, "training seed");

  TrainArgs cal_args;
  auto* calibrate = app.add_subcommand(
      "calibrate", "cross-validate a surrogate without persisting a model");
  calibrate->add_option("--log", cal_args.log_path, "detection log")->required();
  calibrate->add_option("--out", cal_args.report_path, "report path");
  calibrate->add_option("--layers", cal_args.layers, "hidden widths");
  calibrate->add_option("--epochs", cal_args.epochs, "training epochs");
  calibrate->add_option("--lr", cal_args.lr, "learning rate");
  calibrate->add_option("--folds", cal_args.folds, "folds");
  calibrate->add_option("--seed", cal_args.seed, "seed");

  EstimateArgs est_args;
  auto* estimate = app.add_subcommand(
      "estimate", "estimate the failure probability of a configured scenario");
  estimate->add_option("--config", est_args.config_path, "run config file")
      ->required();
  estimate
      ->add_option("--method", est_args.method, "mc | naive-flat | adaptive")
      ->check(CLI::IsMember({"mc", "naive-flat", "adaptive"}));
  estimate->add_option("--metric", est_args.metric,
                       "classical | agm | smooth (default: config)");
  estimate->add_option("--seed", est_args.seeds,
                       "seed(s); overrides the config's list");
  estimate->add_option("--out", est_args.out_dir, "output directory");

  std::string oracle_config, oracle_out;
  std::size_t oracle_cap = oracle::kHorizonCapDefault;
  auto* oracle_cmd = app.add_subcommand(
      "oracle", "exact failure probability by action-sequence enumeration");
  oracle_cmd->add_option("--config", oracle_config, "run config file")
      ->required();
  oracle_cmd->add_option("--out", oracle_out, "output path (default: stdout)");
  oracle_cmd->add_option("--cap", oracle_cap, "horizon refusal cap");

  std::string rank_dir, rank_formula, rank_metric = "classical", rank_out;
  double rank_k = 10.0;
  auto* rank = app.add_subcommand(
      "rank", "order trace files by robustness, least safe first");
  rank->add_option("--traces", rank_dir, "directory of trace CSV files")
      ->required();
  rank->add_option("--formula", rank_formula, "prefix formula text")->required();
  rank->add_option("--metric", rank_metric, "classical | agm | smooth")
      ->check(CLI::IsMember({"classical", "agm", "smooth"}));
  rank->add_option("--smooth-k", rank_k, "smooth metric sharpness");
  rank->add_option("--out", rank_out, "output CSV (default: stdout)");

  std::size_t gen_n = 20000;
  std::uint64_t gen_seed = 1;
  std::string gen_out;
  auto* gen = app.add_subcommand("gen-synthetic-log",
                                 "emit a synthetic detection log drawn from "
                                 "the built-in logistic ground truth");
  gen->add_option("--n", gen_n, "record count");
  gen->add_option("--seed", gen_seed, "generator seed");
  gen->add_option("--out", gen_out, "output path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*train) return run_train(train_args, true);
    if (*calibrate) return run_train(cal_args, false);
    if (*estimate) return run_estimate(est_args);
    if (*oracle_cmd) return run_oracle(oracle_config, oracle_out, oracle_cap);
    if (*rank) return run_rank(rank_dir, rank_formula, rank_metric, rank_k,
                               rank_out);
    if (*gen) return run_gen_log(gen_n, gen_seed, gen_out);
  } catch (const CapabilityError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

}  // namespace perisk::cli
