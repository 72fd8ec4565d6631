#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace perisk::mlp {

// Architecture: hidden ReLU layers of the given widths, one sigmoid output.
struct MlpSpec {
  std::vector<std::size_t> hidden;
};

// Feed-forward scorer with a flat parameter vector. Layout per layer:
// weight matrix (out x in, row-major) followed by bias. Inputs are
// standardized by x_mean/x_sd before the first layer.
struct Mlp {
  std::size_t input_dim = 0;
  std::vector<std::size_t> widths;  // input_dim, hidden..., 1
  std::vector<double> params;
  std::vector<double> x_mean;
  std::vector<double> x_sd;

  std::size_t n_params() const;
  double logit(std::span<const double> x) const;
  // Sigmoid of the logit, clamped into [eps, 1-eps].
  double prob(std::span<const double> x) const;
};

Mlp make_mlp(std::size_t input_dim, const MlpSpec& spec, std::uint64_t seed);

// Per-feature mean/deviation from the given inputs; zero-variance features
// fall back to deviation 1 so they standardize to 0.
void fit_standardizer(Mlp& m, const std::vector<std::vector<double>>& xs);

// Weighted soft-label cross-entropy batch: y in [0,1], w >= 0.
struct Batch {
  std::vector<std::vector<double>> x;
  std::vector<double> y;
  std::vector<double> w;
};

// L = sum_i w_i * -(y_i ln p_i + (1-y_i) ln(1-p_i)) with clamped p_i.
// When grad is non-null it receives dL/dparams (same length as params).
double loss_and_grad(const Mlp& m, const Batch& batch, std::vector<double>* grad);

struct OptimConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t epochs = 300;
};

// Full-batch adaptive-moment descent. Returns the loss before each update;
// throws TrainingError (with the epoch) if the loss leaves the finite range.
std::vector<double> adam_fit(Mlp& m, const Batch& batch, const OptimConfig& opt);

std::string mlp_to_json(const Mlp& m);
Mlp mlp_from_json(const std::string& text);  // SchemaError on malformed input

}  // namespace perisk::mlp
