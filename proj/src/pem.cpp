#include "perisk/pem.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <json.hpp>
#include <numeric>
#include <ostream>
#include <sstream>

#include "perisk/errors.hpp"
#include "perisk/numeric.hpp"
#include "perisk/rng.hpp"

namespace perisk::pem {

const std::array<const char*, 6> kCategories = {"car",        "van",    "truck",
                                                "pedestrian", "cyclist", "tram"};
const std::array<const char*, 3> kOcclusions = {"none", "partial", "mostly"};

namespace {

std::size_t name_index(const char* what, const std::string& name,
                       std::span<const char* const> names) {
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (name == names[i]) return i;
  }
  throw SchemaError(std::string("unknown ") + what + " '" + name + "'");
}

}  // namespace

Salient make_salient(const std::string& category, const std::string& occlusion,
                     const std::array<double, 3>& loc, double rot_y) {
  Salient s{};
  s[name_index("category", category, kCategories)] = 1.0;
  s[6 + name_index("occlusion", occlusion, kOcclusions)] = 1.0;
  s[kLocOffset] = loc[0];
  s[kLocOffset + 1] = loc[1];
  s[kLocOffset + 2] = loc[2];
  s[12] = rot_y;
  return s;
}

double pem_eval(const Pem& model, std::span<const double> salient) {
  switch (model.kind) {
    case Pem::Kind::Mlp:
      return model.net.prob(salient);
    case Pem::Kind::Constant:
      if (salient.size() != kSalientDim) {
        throw SchemaError("salient vector has " + std::to_string(salient.size()) +
                          " entries, expected " + std::to_string(kSalientDim));
      }
      return clamp_prob(model.p0);
    case Pem::Kind::LogisticGap: {
      if (salient.size() != kSalientDim) {
        throw SchemaError("salient vector has " + std::to_string(salient.size()) +
                          " entries, expected " + std::to_string(kSalientDim));
      }
      const double z = salient[kLocOffset + 2];
      return clamp_prob(sigmoid(model.p0 + model.slope * z));
    }
  }
  throw ArgumentError("corrupt model kind");
}

std::string pem_to_json(const Pem& model) {
  nlohmann::json j;
  j["format"] = "perisk-pem-v1";
  switch (model.kind) {
    case Pem::Kind::Mlp:
      j["kind"] = "mlp";
      j["net"] = nlohmann::json::parse(mlp::mlp_to_json(model.net));
      break;
    case Pem::Kind::Constant:
      j["kind"] = "constant";
      j["p"] = model.p0;
      break;
    case Pem::Kind::LogisticGap:
      j["kind"] = "logistic_gap";
      j["intercept"] = model.p0;
      j["slope"] = model.slope;
      break;
  }
  return j.dump(2);
}

Pem pem_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("malformed model JSON: ") + e.what());
  }
  Pem model;
  try {
    if (j.at("format").get<std::string>() != "perisk-pem-v1") {
      throw SchemaError("unsupported model format '" +
                        j.at("format").get<std::string>() + "'");
    }
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "mlp") {
      model.kind = Pem::Kind::Mlp;
      model.net = mlp::mlp_from_json(j.at("net").dump());
    } else if (kind == "constant") {
      model.kind = Pem::Kind::Constant;
      model.p0 = j.at("p").get<double>();
    } else if (kind == "logistic_gap") {
      model.kind = Pem::Kind::LogisticGap;
      model.p0 = j.at("intercept").get<double>();
      model.slope = j.at("slope").get<double>();
    } else {
      throw SchemaError("unknown model kind '" + kind + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("model JSON missing fields: ") + e.what());
  }
  return model;
}

void save_pem(const Pem& model, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ArgumentError("cannot open '" + path + "' for writing");
  out << pem_to_json(model) << '\n';
}

Pem load_pem(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ArgumentError("cannot open model file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return pem_from_json(ss.str());
}

double bce(std::span<const double> predictions,
           const std::vector<std::uint8_t>& labels) {
  if (predictions.empty() || predictions.size() != labels.size()) {
    throw ArgumentError("predictions and labels must be nonempty, equal length");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const double p = clamp_prob(predictions[i]);
    total += labels[i] ? -std::log(p) : -std::log(1.0 - p);
  }
  return total / static_cast<double>(predictions.size());
}

double roc_auc(std::span<const double> scores,
               const std::vector<std::uint8_t>& labels) {
  if (scores.empty() || scores.size() != labels.size()) {
    throw ArgumentError("scores and labels must be nonempty, equal length");
  }
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double pos_rank_sum = 0.0;
  std::size_t n_pos = 0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    // 1-based average rank of the tie group [i, j)
    const double rank = 0.5 * static_cast<double>(i + j + 1);
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]]) {
        pos_rank_sum += rank;
        ++n_pos;
      }
    }
    i = j;
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) {
    throw UndefinedMetricError("ROC-AUC needs both classes present");
  }
  const double np = static_cast<double>(n_pos);
  return (pos_rank_sum - np * (np + 1.0) / 2.0) / (np * static_cast<double>(n_neg));
}

Pem train_pem(const std::vector<DetectionRecord>& data, const mlp::MlpSpec& spec,
              const mlp::OptimConfig& opt, std::uint64_t seed) {
  if (data.empty()) throw ArgumentError("training set is empty");
  mlp::Batch batch;
  batch.x.reserve(data.size());
  const double w = 1.0 / static_cast<double>(data.size());
  for (const auto& rec : data) {
    batch.x.emplace_back(rec.salient.begin(), rec.salient.end());
    batch.y.push_back(rec.detected ? 1.0 : 0.0);
    batch.w.push_back(w);
  }
  Pem model;
  model.kind = Pem::Kind::Mlp;
  model.net = mlp::make_mlp(kSalientDim, spec, seed);
  mlp::fit_standardizer(model.net, batch.x);
  mlp::adam_fit(model.net, batch, opt);
  return model;
}

CalibrationReport cross_validate(const std::vector<DetectionRecord>& data,
                                 const mlp::MlpSpec& spec,
                                 const mlp::OptimConfig& opt, std::size_t folds,
                                 std::uint64_t seed) {
  if (folds < 2) throw ArgumentError("need at least 2 folds");
  if (data.size() < folds) throw ArgumentError("fewer records than folds");
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, 0xcf));
  for (std::size_t i = order.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform() * static_cast<double>(i));
    std::swap(order[i - 1], order[std::min(j, i - 1)]);
  }
  CalibrationReport report;
  report.folds = folds;
  double bce_sum = 0.0, auc_sum = 0.0;
  std::size_t auc_count = 0;
  for (std::size_t f = 0; f < folds; ++f) {
    std::vector<DetectionRecord> train, test;
    for (std::size_t i = 0; i < order.size(); ++i) {
      (i % folds == f ? test : train).push_back(data[order[i]]);
    }
    const Pem model = train_pem(train, spec, opt, derive_seed(seed, f + 1));
    std::vector<double> preds;
    std::vector<std::uint8_t> labels;
    preds.reserve(test.size());
    for (const auto& rec : test) {
      preds.push_back(pem_eval(model, rec.salient));
      labels.push_back(rec.detected ? 1 : 0);
    }
    const double fold_bce = bce(preds, labels);
    report.fold_bce.push_back(fold_bce);
    bce_sum += fold_bce;
    double fold_auc = std::nan("");
    try {
      fold_auc = roc_auc(preds, labels);
      auc_sum += fold_auc;
      ++auc_count;
    } catch (const UndefinedMetricError&) {
    }
    report.fold_roc_auc.push_back(fold_auc);
  }
  report.mean_bce = bce_sum / static_cast<double>(folds);
  report.mean_roc_auc =
      auc_count > 0 ? auc_sum / static_cast<double>(auc_count) : std::nan("");
  return report;
}

namespace {

nlohmann::json finite_or_null(double v) {
  if (std::isfinite(v)) return v;
  return nullptr;
}

}  // namespace

std::string calibration_to_json(const CalibrationReport& report) {
  nlohmann::json j;
  j["folds"] = report.folds;
  j["mean_bce"] = finite_or_null(report.mean_bce);
  j["mean_roc_auc"] = finite_or_null(report.mean_roc_auc);
  j["fold_bce"] = report.fold_bce;
  nlohmann::json aucs = nlohmann::json::array();
  for (double v : report.fold_roc_auc) aucs.push_back(finite_or_null(v));
  j["fold_roc_auc"] = aucs;
  return j.dump(2);
}

Pem make_baseline(const std::string& kind, const std::vector<DetectionRecord>& data,
                  const mlp::OptimConfig& opt, std::uint64_t seed) {
  if (data.empty()) throw ArgumentError("baseline needs training data");
  if (kind == "guess-mu") {
    double rate = 0.0;
    for (const auto& rec : data) rate += rec.detected ? 1.0 : 0.0;
    Pem model;
    model.kind = Pem::Kind::Constant;
    model.p0 = rate / static_cast<double>(data.size());
    return model;
  }
  if (kind == "logistic") {
    return train_pem(data, mlp::MlpSpec{}, opt, seed);
  }
  throw ArgumentError("unknown baseline kind '" + kind + "'");
}

DetectionRecord parse_detection_record(const std::string& line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("malformed record: ") + e.what());
  }
  try {
    const auto loc = j.at("loc").get<std::vector<double>>();
    if (loc.size() != 3) throw SchemaError("loc must have 3 entries");
    DetectionRecord rec;
    rec.salient = make_salient(j.at("category").get<std::string>(),
                               j.at("occlusion").get<std::string>(),
                               {loc[0], loc[1], loc[2]},
                               j.at("rot_y").get<double>());
    rec.detected = j.at("detected").get<bool>();
    return rec;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("record missing fields: ") + e.what());
  }
}

std::vector<DetectionRecord> read_detection_log(std::istream& in) {
  std::vector<DetectionRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      records.push_back(parse_detection_record(line));
    } catch (const SchemaError& e) {
      throw SchemaError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (records.empty()) throw SchemaError("detection log has no records");
  return records;
}

std::vector<DetectionRecord> read_detection_log_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ArgumentError("cannot open detection log '" + path + "'");
  return read_detection_log(in);
}

void write_detection_log(const std::vector<DetectionRecord>& records,
                         std::ostream& out) {
  for (const auto& rec : records) {
    std::size_t cat = 0, occ = 0;
    for (std::size_t i = 0; i < 6; ++i) {
      if (rec.salient[i] == 1.0) cat = i;
    }
    for (std::size_t i = 0; i < 3; ++i) {
      if (rec.salient[6 + i] == 1.0) occ = i;
    }
    nlohmann::json j;
    j["category"] = kCategories[cat];
    j["occlusion"] = kOcclusions[occ];
    j["loc"] = {rec.salient[kLocOffset], rec.salient[kLocOffset + 1],
                rec.salient[kLocOffset + 2]};
    j["rot_y"] = rec.salient[12];
    j["detected"] = rec.detected;
    out << j.dump() << '\n';
  }
}

SyntheticSpec synthetic_spec() {
  SyntheticSpec spec{};
  // category: car, van, truck, pedestrian, cyclist, tram
  spec.weights = {0.6, 0.4, 0.5, -0.7, -0.4, 0.3,
                  // occlusion: none, partial, mostly
                  1.2, -0.4, -1.6,
                  // x, y, z, rot_y
                  -0.02, 0.05, -0.045, -0.1};
  spec.bias = 1.8;
  return spec;
}

double synthetic_prob(const SyntheticSpec& spec, const Salient& s) {
  double z = spec.bias;
  for (std::size_t i = 0; i < kSalientDim; ++i) z += spec.weights[i] * s[i];
  return sigmoid(z);
}

std::vector<DetectionRecord> gen_synthetic_log(std::size_t n, std::uint64_t seed) {
  const SyntheticSpec spec = synthetic_spec();
  Rng rng(derive_seed(seed, 0x106));
  std::vector<DetectionRecord> records;
  records.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto cat = static_cast<std::size_t>(rng.uniform() * 6.0);
    const auto occ = static_cast<std::size_t>(rng.uniform() * 3.0);
    const double x = -10.0 + 20.0 * rng.uniform();
    const double y = -2.0 + 4.0 * rng.uniform();
    const double z = 2.0 + 78.0 * rng.uniform();
    const double rot = -3.14159265358979323846 +
                       2.0 * 3.14159265358979323846 * rng.uniform();
    DetectionRecord rec;
    rec.salient = make_salient(kCategories[std::min<std::size_t>(cat, 5)],
                               kOcclusions[std::min<std::size_t>(occ, 2)],
                               {x, y, z}, rot);
    rec.detected = rng.bernoulli(synthetic_prob(spec, rec.salient));
    records.push_back(rec);
  }
  return records;
}

}  // namespace perisk::pem
