#include <cstdlib>
#include <doctest.h>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "perisk/cli.hpp"
#include "perisk/errors.hpp"

using namespace perisk;
namespace fs = std::filesystem;

namespace {

int run(std::initializer_list<const char*> args) {
  std::vector<const char*> argv = {"perisk"};
  argv.insert(argv.end(), args.begin(), args.end());
  return cli::run_cli(static_cast<int>(argv.size()), argv.data());
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("perisk_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  out << content;
}

}  // namespace

TEST_CASE("run configs parse with defaults, presets, and overrides") {
  const auto defaults = cli::parse_run_config("");
  CHECK(defaults.scenario.horizon == 100);
  CHECK(defaults.cem.stages == 10);
  CHECK(defaults.seeds == std::vector<std::uint64_t>{1});
  CHECK(defaults.pem_kind == "logistic_gap");

  const auto cfg = cli::parse_run_config(
      "# comment\n"
      "[scenario]\n"
      "preset = small\n"
      "initial_gap = 14\n"
      "\n"
      "[pem]\n"
      "kind = constant\n"
      "p = 0.25\n"
      "[cem]\n"
      "stages = 4\n"
      "epochs = 80\n"
      "lr = 0.02\n"
      "[metric]\n"
      "kind = smooth\n"
      "smooth_k = 5\n"
      "[run]\n"
      "seeds = 3, 5, 8\n"
      "out_dir = /tmp/somewhere\n");
  CHECK(cfg.scenario.horizon == 12);       // small preset
  CHECK(cfg.scenario.initial_gap == 14.0);  // override wins over preset
  CHECK(cfg.pem_kind == "constant");
  CHECK(cfg.pem_p == 0.25);
  CHECK(cfg.cem.stages == 4);
  CHECK(cfg.cem.optim.epochs == 80);
  CHECK(cfg.cem.optim.lr == 0.02);
  CHECK(cfg.metric.metric == stl::Metric::Smooth);
  CHECK(cfg.metric.smooth_k == 5.0);
  CHECK(cfg.seeds == std::vector<std::uint64_t>{3, 5, 8});
  CHECK(cfg.out_dir == "/tmp/somewhere");

  // preset applies first regardless of file order
  const auto reorder = cli::parse_run_config(
      "[scenario]\nhorizon = 9\npreset = small\n");
  CHECK(reorder.scenario.horizon == 9);

  CHECK_THROWS_AS(cli::parse_run_config("[scenario]\nhorizont = 9\n"),
                  SchemaError);
  CHECK_THROWS_AS(cli::parse_run_config("[scenario]\nhorizon nine\n"),
                  SchemaError);
  CHECK_THROWS_AS(cli::parse_run_config("[scenario]\ndt = fast\n"), SchemaError);
  CHECK_THROWS_AS(cli::parse_run_config("horizon = 9\n"), SchemaError);
  CHECK_THROWS_AS(cli::parse_run_config("[scenario\nhorizon = 9\n"),
                  SchemaError);
  CHECK_THROWS_AS(cli::parse_run_config("[run]\nseeds = ,\n"), SchemaError);
  CHECK_THROWS_AS(cli::parse_run_config("[scenario]\npreset = tiny\n"),
                  SchemaError);
}

TEST_CASE("the default formula is the crash-distance invariant") {
  cli::RunConfig cfg;
  cfg.scenario = sim::small_scenario();
  const auto f = cli::config_formula(cfg);
  CHECK(stl::format_formula(f) == "(always 0 11 (geq dist_m 2))");

  cfg.formula_text = "(eventually 0 3 (geq act 0.5))";
  CHECK(stl::format_formula(cli::config_formula(cfg)) ==
        "(eventually 0 3 (geq act 0.5))");
}

TEST_CASE("pem construction follows the config kind") {
  cli::RunConfig cfg;
  CHECK(cli::config_pem(cfg).kind == pem::Pem::Kind::LogisticGap);
  cfg.pem_kind = "constant";
  cfg.pem_p = 0.75;
  const auto constant = cli::config_pem(cfg);
  CHECK(constant.kind == pem::Pem::Kind::Constant);
  CHECK(constant.p0 == 0.75);
  cfg.pem_kind = "file";
  CHECK_THROWS_AS(cli::config_pem(cfg), SchemaError);  // path missing
}

TEST_CASE("atomic writes land complete files and clean up temporaries") {
  const fs::path dir = fresh_dir("atomic");
  const fs::path target = dir / "nested" / "x.json";
  cli::write_file_atomic(target.string(), "{\"a\": 1}\n");
  CHECK(slurp(target) == "{\"a\": 1}\n");
  CHECK(!fs::exists(target.string() + ".tmp"));
  cli::write_file_atomic(target.string(), "second\n");
  CHECK(slurp(target) == "second\n");
}

TEST_CASE("synthetic-log generation and calibration round-trip") {
  const fs::path dir = fresh_dir("gen");
  const std::string log = (dir / "log.jsonl").string();
  CHECK(run({"gen-synthetic-log", "--n", "400", "--seed", "9", "--out",
             log.c_str()}) == 0);
  CHECK(fs::exists(log));

  const std::string report = (dir / "cal.json").string();
  CHECK(run({"calibrate", "--log", log.c_str(), "--out", report.c_str(),
             "--layers", "8", "--epochs", "60", "--lr", "0.01", "--folds", "3",
             "--seed", "4"}) == 0);
  const auto j = nlohmann::json::parse(slurp(report));
  CHECK(j.at("folds").get<int>() == 3);
  CHECK(j.at("fold_bce").size() == 3);
  CHECK(j.at("mean_bce").get<double>() > 0.0);
}

TEST_CASE("model training persists a loadable scorer") {
  const fs::path dir = fresh_dir("train");
  const std::string log = (dir / "log.jsonl").string();
  REQUIRE(run({"gen-synthetic-log", "--n", "300", "--seed", "2", "--out",
               log.c_str()}) == 0);
  const std::string model_path = (dir / "model.json").string();
  CHECK(run({"train-pem", "--log", log.c_str(), "--out", model_path.c_str(),
             "--layers", "8", "--epochs", "60", "--folds", "2", "--seed",
             "4"}) == 0);
  const auto model = pem::load_pem(model_path);
  CHECK(model.kind == pem::Pem::Kind::Mlp);
  CHECK(fs::exists(model_path + ".report.json"));

  // malformed record: line-numbered schema error, exit 2
  const std::string bad = (dir / "bad.jsonl").string();
  spit(bad,
       R"({"category":"car","occlusion":"none","loc":[0,0,9],"rot_y":0,"detected":false})"
       "\n"
       R"({"category":"bike","occlusion":"none","loc":[0,0,9],"rot_y":0,"detected":true})"
       "\n");
  CHECK(run({"train-pem", "--log", bad.c_str(), "--out",
             (dir / "m2.json").string().c_str()}) == 2);
  // empty log: exit 2
  const std::string empty = (dir / "empty.jsonl").string();
  spit(empty, "\n");
  CHECK(run({"train-pem", "--log", empty.c_str(), "--out",
             (dir / "m3.json").string().c_str()}) == 2);
}

TEST_CASE("estimation emits per-seed reports plus an aggregate") {
  const fs::path dir = fresh_dir("estimate");
  const std::string config = (dir / "run.cfg").string();
  spit(config,
       "[scenario]\npreset = small\n"
       "[cem]\nstages = 2\nstage_samples = 30\neval_samples = 40\nepochs = 40\n"
       "pretrain_rollouts = 30\n"
       "[run]\nseeds = 1, 2\n");

  SUBCASE("plain failure fraction with a near-perfect detector") {
    const std::string out = (dir / "mc").string();
    const std::string cfg2 = (dir / "mc.cfg").string();
    spit(cfg2,
         "[scenario]\npreset = small\n"
         "[pem]\nkind = constant\np = 0.999999\n"
         "[run]\nmc_samples = 500\n");
    CHECK(run({"estimate", "--config", cfg2.c_str(), "--method", "mc", "--out",
               out.c_str()}) == 0);
    const auto report =
        nlohmann::json::parse(slurp(fs::path(out) / "report_seed1.json"));
    CHECK(report.at("mu_hat").get<double>() == 0.0);
    CHECK(report.at("n_fail").get<int>() == 0);
    CHECK(report.at("n_total").get<int>() == 500);
    CHECK(report.at("log10_mu").is_null());
  }

  SUBCASE("adaptive runs write diagnostics, curves, and the aggregate") {
    const std::string out = (dir / "adaptive").string();
    CHECK(run({"estimate", "--config", config.c_str(), "--method", "adaptive",
               "--out", out.c_str()}) == 0);
    for (const char* name :
         {"report_seed1.json", "report_seed2.json", "diagnostics_seed1.jsonl",
          "proposal_curve_seed1.csv", "aggregate.json"}) {
      CHECK(fs::exists(fs::path(out) / name));
    }
    const auto agg = nlohmann::json::parse(slurp(fs::path(out) / "aggregate.json"));
    CHECK(agg.at("method") == "adaptive");
    CHECK(agg.at("per_seed").size() == 2);
    const auto curve = slurp(fs::path(out) / "proposal_curve_seed1.csv");
    CHECK(curve.rfind("gap_m,proposal_p,pem_p\n", 0) == 0);

    // byte determinism across reruns
    const std::string out2 = (dir / "adaptive2").string();
    CHECK(run({"estimate", "--config", config.c_str(), "--method", "adaptive",
               "--out", out2.c_str()}) == 0);
    CHECK(slurp(fs::path(out) / "report_seed1.json") ==
          slurp(fs::path(out2) / "report_seed1.json"));
    CHECK(slurp(fs::path(out) / "aggregate.json") ==
          slurp(fs::path(out2) / "aggregate.json"));
    CHECK(slurp(fs::path(out) / "diagnostics_seed2.jsonl") ==
          slurp(fs::path(out2) / "diagnostics_seed2.jsonl"));
  }

  SUBCASE("seed override narrows the run") {
    const std::string out = (dir / "seeded").string();
    CHECK(run({"estimate", "--config", config.c_str(), "--method", "mc",
               "--seed", "7", "--out", out.c_str()}) == 0);
    CHECK(fs::exists(fs::path(out) / "report_seed7.json"));
    CHECK(!fs::exists(fs::path(out) / "report_seed1.json"));
  }

  SUBCASE("input failures exit 2") {
    CHECK(run({"estimate", "--config", (dir / "nope.cfg").string().c_str()}) ==
          2);
    const std::string badcfg = (dir / "bad.cfg").string();
    spit(badcfg, "[scenario]\nwat = 1\n");
    CHECK(run({"estimate", "--config", badcfg.c_str()}) == 2);
    CHECK(run({"estimate", "--config", config.c_str(), "--method",
               "quantum"}) == 2);
  }
}

TEST_CASE("oracle runs emit exact results and refuse long horizons") {
  const fs::path dir = fresh_dir("oracle");
  const std::string config = (dir / "run.cfg").string();
  spit(config,
       "[scenario]\npreset = small\n"
       "[pem]\nkind = constant\np = 0.000001\n");
  const std::string out = (dir / "oracle.json").string();
  CHECK(run({"oracle", "--config", config.c_str(), "--out", out.c_str()}) == 0);
  const auto j = nlohmann::json::parse(slurp(out));
  CHECK(j.at("mu").get<double>() > 0.9999);
  CHECK(j.at("n_total").get<std::uint64_t>() == 2048);

  const std::string big = (dir / "big.cfg").string();
  spit(big, "[scenario]\npreset = small\nhorizon = 40\n");
  CHECK(run({"oracle", "--config", big.c_str(), "--out", out.c_str()}) == 3);
}

TEST_CASE("ranking orders trace files least safe first") {
  const fs::path dir = fresh_dir("rank");
  const fs::path traces = dir / "traces";
  fs::create_directories(traces);

  auto write_trace = [&](const std::string& name, std::vector<double> xs) {
    stl::Trace trace;
    trace.channels = {"x"};
    trace.dt = 0.1;
    for (double v : xs) trace.rows.push_back({v});
    stl::write_trace_csv_file(trace, (traces / name).string());
  };
  // deep single dip / wide shallow violations / intermediate dips
  std::vector<double> deep(12, 0.9), wide(12, 0.9), mid(12, 0.9);
  deep[5] = -0.8;
  for (int i = 1; i <= 9; ++i) wide[i] = -0.3;
  mid[2] = mid[6] = mid[10] = -0.62;
  write_trace("deep.csv", deep);
  write_trace("wide.csv", wide);
  write_trace("mid.csv", mid);

  auto leader = [&](const char* metric, const char* k) {
    const std::string out = (dir / "rank.csv").string();
    REQUIRE(run({"rank", "--traces", traces.string().c_str(), "--formula",
                 "(always 0 11 (geq x 0 1))", "--metric", metric, "--smooth-k",
                 k, "--out", out.c_str()}) == 0);
    std::istringstream in(slurp(out));
    std::string header, first;
    std::getline(in, header);
    REQUIRE(header == "file,robustness");
    std::getline(in, first);
    return first.substr(0, first.find(','));
  };
  CHECK(leader("classical", "10") == (traces / "deep.csv").string());
  CHECK(leader("agm", "10") == (traces / "wide.csv").string());
  CHECK(leader("smooth", "5") == (traces / "mid.csv").string());

  // unreadable files are skipped with a warning, not fatal
  spit(traces / "broken.csv", "not,a,trace\n1,2,3\n");
  CHECK(run({"rank", "--traces", traces.string().c_str(), "--formula",
             "(always 0 11 (geq x 0 1))", "--out",
             (dir / "rank2.csv").string().c_str()}) == 0);
  std::istringstream in(slurp(dir / "rank2.csv"));
  std::string line;
  std::size_t rows = 0;
  while (std::getline(in, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 4);  // header + three valid traces

  // empty directory: header only
  const fs::path none = dir / "none";
  fs::create_directories(none);
  CHECK(run({"rank", "--traces", none.string().c_str(), "--formula",
             "(always 0 0 (geq x 0 1))", "--out",
             (dir / "rank3.csv").string().c_str()}) == 0);
  CHECK(slurp(dir / "rank3.csv") == "file,robustness\n");
}

TEST_CASE("the default output directory honors the environment") {
  const fs::path dir = fresh_dir("envout");
  const std::string config = (dir / "run.cfg").string();
  spit(config,
       "[scenario]\npreset = small\n"
       "[pem]\nkind = constant\np = 0.999\n"
       "[run]\nmc_samples = 20\n");
  setenv("PERISK_OUT", (dir / "from_env").string().c_str(), 1);
  CHECK(run({"estimate", "--config", config.c_str(), "--method", "mc"}) == 0);
  unsetenv("PERISK_OUT");
  CHECK(fs::exists(dir / "from_env" / "report_seed1.json"));
}

TEST_CASE("bad command lines exit 2") {
  CHECK(run({"no-such-command"}) == 2);
  CHECK(run({"estimate"}) == 2);            // missing --config
  CHECK(run({"rank", "--traces", "/nonexistent-dir-xyz", "--formula",
             "(always 0 0 (geq x 0 1))"}) == 2);
}
