#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>

namespace perisk {

inline constexpr double kProbEps = 1e-6;
inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();
inline constexpr double kPosInf = std::numeric_limits<double>::infinity();

// Probabilities are kept in [eps, 1-eps] so log-likelihoods stay finite.
inline double clamp_prob(double p, double eps = kProbEps) {
  return std::min(std::max(p, eps), 1.0 - eps);
}

inline double sigmoid(double z) {
  if (z >= 0.0) {
    return 1.0 / (1.0 + std::exp(-z));
  }
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// log(sum(exp(x_i))) without overflow; -inf for an empty span.
inline double log_sum_exp(std::span<const double> xs) {
  if (xs.empty()) return kNegInf;
  double m = kNegInf;
  for (double x : xs) m = std::max(m, x);
  if (std::isinf(m) && m < 0.0) return kNegInf;
  double acc = 0.0;
  for (double x : xs) acc += std::exp(x - m);
  return m + std::log(acc);
}

// Smooth minimum -(1/k) ln sum exp(-k x_i); approaches min as k grows.
inline double softmin(std::span<const double> xs, double k) {
  double m = kPosInf;
  for (double x : xs) m = std::min(m, x);
  if (xs.empty() || std::isinf(m)) return m;
  double acc = 0.0;
  for (double x : xs) acc += std::exp(-k * (x - m));
  return m - std::log(acc) / k;
}

inline double softmax_val(std::span<const double> xs, double k) {
  double m = kNegInf;
  for (double x : xs) m = std::max(m, x);
  if (xs.empty() || std::isinf(m)) return m;
  double acc = 0.0;
  for (double x : xs) acc += std::exp(k * (x - m));
  return m + std::log(acc) / k;
}

}  // namespace perisk
