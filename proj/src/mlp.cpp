#include "perisk/mlp.hpp"

#include <cmath>
#include <json.hpp>

#include "perisk/errors.hpp"
#include "perisk/numeric.hpp"
#include "perisk/rng.hpp"

namespace perisk::mlp {

namespace {

// Forward pass buffers reused across samples in a batch.
struct Workspace {
  std::vector<std::vector<double>> acts;  // acts[l]: layer input, size widths[l]
  std::vector<std::vector<double>> deltas;
};

void resize_ws(Workspace& ws, const std::vector<std::size_t>& widths) {
  ws.acts.resize(widths.size());
  ws.deltas.resize(widths.size());
  for (std::size_t l = 0; l < widths.size(); ++l) {
    ws.acts[l].resize(widths[l]);
    ws.deltas[l].resize(widths[l]);
  }
}

// Returns the raw output logit; fills ws.acts with post-activation values.
double forward(const Mlp& m, std::span<const double> x, Workspace& ws) {
  for (std::size_t i = 0; i < m.input_dim; ++i) {
    ws.acts[0][i] = (x[i] - m.x_mean[i]) / m.x_sd[i];
  }
  std::size_t off = 0;
  for (std::size_t l = 0; l + 1 < m.widths.size(); ++l) {
    const std::size_t in = m.widths[l];
    const std::size_t out = m.widths[l + 1];
    const bool last = (l + 2 == m.widths.size());
    for (std::size_t o = 0; o < out; ++o) {
      double z = m.params[off + out * in + o];  // bias
      const double* w = &m.params[off + o * in];
      for (std::size_t i = 0; i < in; ++i) z += w[i] * ws.acts[l][i];
      ws.acts[l + 1][o] = last ? z : (z > 0.0 ? z : 0.0);
    }
    off += out * in + out;
  }
  return ws.acts.back()[0];
}

}  // namespace

std::size_t Mlp::n_params() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    n += widths[l + 1] * widths[l] + widths[l + 1];
  }
  return n;
}

double Mlp::logit(std::span<const double> x) const {
  if (x.size() != input_dim) {
    throw SchemaError("input has " + std::to_string(x.size()) +
                      " features, model expects " + std::to_string(input_dim));
  }
  Workspace ws;
  resize_ws(ws, widths);
  return forward(*this, x, ws);
}

double Mlp::prob(std::span<const double> x) const {
  return clamp_prob(sigmoid(logit(x)));
}

Mlp make_mlp(std::size_t input_dim, const MlpSpec& spec, std::uint64_t seed) {
  if (input_dim == 0) throw ArgumentError("input dimension must be positive");
  Mlp m;
  m.input_dim = input_dim;
  m.widths.push_back(input_dim);
  for (std::size_t h : spec.hidden) {
    if (h == 0) throw ArgumentError("hidden width must be positive");
    m.widths.push_back(h);
  }
  m.widths.push_back(1);
  m.x_mean.assign(input_dim, 0.0);
  m.x_sd.assign(input_dim, 1.0);
  m.params.resize(m.n_params());
  Rng rng(derive_seed(seed, 0x6d6c70));
  std::size_t off = 0;
  for (std::size_t l = 0; l + 1 < m.widths.size(); ++l) {
    const std::size_t in = m.widths[l];
    const std::size_t out = m.widths[l + 1];
    const double sd = std::sqrt(2.0 / static_cast<double>(in));
    for (std::size_t i = 0; i < out * in; ++i) {
      m.params[off + i] = sd * rng.normal();
    }
    for (std::size_t i = 0; i < out; ++i) m.params[off + out * in + i] = 0.0;
    off += out * in + out;
  }
  return m;
}

void fit_standardizer(Mlp& m, const std::vector<std::vector<double>>& xs) {
  if (xs.empty()) throw ArgumentError("cannot standardize on an empty set");
  const double n = static_cast<double>(xs.size());
  for (std::size_t i = 0; i < m.input_dim; ++i) {
    double mean = 0.0;
    for (const auto& x : xs) mean += x[i];
    mean /= n;
    double var = 0.0;
    for (const auto& x : xs) var += (x[i] - mean) * (x[i] - mean);
    var /= n;
    m.x_mean[i] = mean;
    m.x_sd[i] = var > 1e-24 ? std::sqrt(var) : 1.0;
  }
}

double loss_and_grad(const Mlp& m, const Batch& batch, std::vector<double>* grad) {
  const std::size_t n = batch.x.size();
  if (n == 0 || batch.y.size() != n || batch.w.size() != n) {
    throw ArgumentError("batch arrays must be nonempty and equal length");
  }
  if (grad) grad->assign(m.params.size(), 0.0);
  Workspace ws;
  resize_ws(ws, m.widths);
  const std::size_t layers = m.widths.size() - 1;
  double total = 0.0;
  for (std::size_t s = 0; s < n; ++s) {
    if (batch.x[s].size() != m.input_dim) {
      throw SchemaError("batch sample " + std::to_string(s) +
                        " has wrong feature count");
    }
    const double z = forward(m, batch.x[s], ws);
    const double p_raw = sigmoid(z);
    const double p = clamp_prob(p_raw);
    const double y = batch.y[s];
    const double w = batch.w[s];
    total += w * -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
    if (!grad) continue;
    // Clamped outputs are locally constant, so their gradient vanishes.
    const bool clamped = (p_raw < kProbEps) || (p_raw > 1.0 - kProbEps);
    ws.deltas[layers][0] = clamped ? 0.0 : w * (p_raw - y);
    std::size_t off = m.params.size();
    for (std::size_t l = layers; l-- > 0;) {
      const std::size_t in = m.widths[l];
      const std::size_t out = m.widths[l + 1];
      off -= out * in + out;
      for (std::size_t i = 0; i < in; ++i) ws.deltas[l][i] = 0.0;
      for (std::size_t o = 0; o < out; ++o) {
        const double d = ws.deltas[l + 1][o];
        if (d == 0.0) continue;
        double* gw = &(*grad)[off + o * in];
        const double* wrow = &m.params[off + o * in];
        for (std::size_t i = 0; i < in; ++i) {
          gw[i] += d * ws.acts[l][i];
          ws.deltas[l][i] += d * wrow[i];
        }
        (*grad)[off + out * in + o] += d;
      }
      if (l > 0) {
        // ReLU gate: the stored activation is zero exactly where the unit
        // was inactive.
        for (std::size_t i = 0; i < in; ++i) {
          if (ws.acts[l][i] <= 0.0) ws.deltas[l][i] = 0.0;
        }
      }
    }
  }
  return total;
}

std::vector<double> adam_fit(Mlp& m, const Batch& batch, const OptimConfig& opt) {
  std::vector<double> history;
  history.reserve(opt.epochs);
  std::vector<double> grad, mom(m.params.size(), 0.0), vel(m.params.size(), 0.0);
  double b1t = 1.0, b2t = 1.0;
  for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
    const double loss = loss_and_grad(m, batch, &grad);
    if (!std::isfinite(loss)) {
      throw TrainingError("loss became non-finite", static_cast<long>(epoch));
    }
    history.push_back(loss);
    b1t *= opt.beta1;
    b2t *= opt.beta2;
    for (std::size_t i = 0; i < m.params.size(); ++i) {
      mom[i] = opt.beta1 * mom[i] + (1.0 - opt.beta1) * grad[i];
      vel[i] = opt.beta2 * vel[i] + (1.0 - opt.beta2) * grad[i] * grad[i];
      const double mh = mom[i] / (1.0 - b1t);
      const double vh = vel[i] / (1.0 - b2t);
      m.params[i] -= opt.lr * mh / (std::sqrt(vh) + opt.eps);
    }
  }
  return history;
}

std::string mlp_to_json(const Mlp& m) {
  nlohmann::json j;
  j["input_dim"] = m.input_dim;
  j["widths"] = m.widths;
  j["params"] = m.params;
  j["x_mean"] = m.x_mean;
  j["x_sd"] = m.x_sd;
  return j.dump();
}

Mlp mlp_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("malformed model JSON: ") + e.what());
  }
  Mlp m;
  try {
    m.input_dim = j.at("input_dim").get<std::size_t>();
    m.widths = j.at("widths").get<std::vector<std::size_t>>();
    m.params = j.at("params").get<std::vector<double>>();
    m.x_mean = j.at("x_mean").get<std::vector<double>>();
    m.x_sd = j.at("x_sd").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("model JSON missing fields: ") + e.what());
  }
  if (m.widths.size() < 2 || m.widths.front() != m.input_dim ||
      m.widths.back() != 1 || m.params.size() != m.n_params() ||
      m.x_mean.size() != m.input_dim || m.x_sd.size() != m.input_dim) {
    throw SchemaError("model JSON is internally inconsistent");
  }
  return m;
}

}  // namespace perisk::mlp
