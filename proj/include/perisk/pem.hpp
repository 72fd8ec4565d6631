#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "perisk/mlp.hpp"

namespace perisk::pem {

// Salient layout: one-hot category (6), one-hot occlusion (3),
// camera-frame location x,y,z (3), rotation about y (1).
inline constexpr std::size_t kSalientDim = 13;
inline constexpr std::size_t kLocOffset = 9;

extern const std::array<const char*, 6> kCategories;  // car..tram
extern const std::array<const char*, 3> kOcclusions;  // none, partial, mostly

using Salient = std::array<double, kSalientDim>;

// One-hot construction; unknown names raise SchemaError.
Salient make_salient(const std::string& category, const std::string& occlusion,
                     const std::array<double, 3>& loc, double rot_y);

struct DetectionRecord {
  Salient salient{};
  bool detected = false;
};

// Detection-probability scorer over salient vectors. Either the trained
// feed-forward surrogate, a constant (the guess-mu baseline), or an
// analytic logistic in the z (distance) component for synthetic studies.
struct Pem {
  enum class Kind { Mlp, Constant, LogisticGap };
  Kind kind = Kind::Constant;
  mlp::Mlp net;        // Kind::Mlp
  double p0 = 0.5;     // Constant: probability; LogisticGap: logit intercept
  double slope = 0.0;  // LogisticGap: logit slope per metre of z
};

// Probability in [eps, 1-eps]; SchemaError on dimension mismatch.
double pem_eval(const Pem& model, std::span<const double> salient);

std::string pem_to_json(const Pem& model);
Pem pem_from_json(const std::string& text);
void save_pem(const Pem& model, const std::string& path);
Pem load_pem(const std::string& path);

// Mean of -(y ln p + (1-y) ln(1-p)) with clamped p; ArgumentError if empty.
double bce(std::span<const double> predictions,
           const std::vector<std::uint8_t>& labels);

// Probability a random positive outscores a random negative, ties as 1/2.
// UndefinedMetricError unless both classes are present.
double roc_auc(std::span<const double> scores,
               const std::vector<std::uint8_t>& labels);

Pem train_pem(const std::vector<DetectionRecord>& data, const mlp::MlpSpec& spec,
              const mlp::OptimConfig& opt, std::uint64_t seed);

struct CalibrationReport {
  std::size_t folds = 0;
  double mean_bce = 0.0;
  double mean_roc_auc = 0.0;  // NaN when undefined on every fold
  std::vector<double> fold_bce;
  std::vector<double> fold_roc_auc;  // NaN entries for single-class folds
};

CalibrationReport cross_validate(const std::vector<DetectionRecord>& data,
                                 const mlp::MlpSpec& spec,
                                 const mlp::OptimConfig& opt, std::size_t folds,
                                 std::uint64_t seed);

std::string calibration_to_json(const CalibrationReport& report);

// kind: "guess-mu" (constant at the detection rate) or "logistic"
// (zero-hidden-layer model trained by the usual loop).
Pem make_baseline(const std::string& kind, const std::vector<DetectionRecord>& data,
                  const mlp::OptimConfig& opt, std::uint64_t seed);

// JSON-lines detection log, one obstacle per line:
// {"category": ..., "occlusion": ..., "loc": [x,y,z], "rot_y": r, "detected": b}
DetectionRecord parse_detection_record(const std::string& line);
std::vector<DetectionRecord> read_detection_log(std::istream& in);
std::vector<DetectionRecord> read_detection_log_file(const std::string& path);
void write_detection_log(const std::vector<DetectionRecord>& records,
                         std::ostream& out);

// Ground-truth generator for synthetic logs: detection labels drawn from a
// fixed logistic model over the raw salient features.
struct SyntheticSpec {
  std::array<double, kSalientDim> weights;
  double bias;
};

SyntheticSpec synthetic_spec();
double synthetic_prob(const SyntheticSpec& spec, const Salient& s);
std::vector<DetectionRecord> gen_synthetic_log(std::size_t n, std::uint64_t seed);

}  // namespace perisk::pem
