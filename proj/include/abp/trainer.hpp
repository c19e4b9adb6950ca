#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <span>
#include <stdexcept>
#include <vector>

#include "dataio.hpp"
#include "generator.hpp"
#include "inference.hpp"
#include "matrix.hpp"
#include "rng.hpp"

namespace abp {

struct TrainConfig {
  std::size_t epochs = 50;
  std::size_t batch_size = 64;
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  LangevinConfig langevin;        // steps=10, step_size=0.3 defaults
  double sigma = 0.3;
  std::size_t latent_dim = 10;
  std::size_t hidden_dim = 4096;
  Activation hidden_act = Activation::LeakyRelu;
  Activation output_act = Activation::Relu;
  std::uint64_t seed = 0;
  bool masked = false;

  void validate() const {
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
    if (learning_rate <= 0.0) throw std::invalid_argument("TrainConfig: learning_rate must be > 0");
    if (adam_beta1 <= 0.0 || adam_beta1 >= 1.0 || adam_beta2 <= 0.0 || adam_beta2 >= 1.0) {
      throw std::invalid_argument("TrainConfig: betas must be in (0, 1)");
    }
    if (sigma <= 0.0) throw std::invalid_argument("TrainConfig: sigma must be > 0");
    langevin.validate();
  }
};

struct AdamState {
  ParamGrads m;
  ParamGrads v;
  std::uint64_t t = 0;

  static AdamState zeros_like(const ModelParams& p) {
    return {ParamGrads::zeros_like(p), ParamGrads::zeros_like(p), 0};
  }
};

struct EpochRecord {
  std::size_t epoch = 0;    // 1-based
  double mean_loss = 0.0;   // mean (masked) squared reconstruction error per example
  double mean_z_sq = 0.0;   // mean ||Z_i||^2 over training rows
  double seconds = 0.0;
};
using TrainLog = std::vector<EpochRecord>;

/// Summed ascent gradient of the log joint over the batch,
/// (1/sigma^2) sum_i (dg/dtheta)^T (m_i o (x_i - g(c_i, z_i))),
/// plus the summed squared residual for logging.
inline std::pair<ParamGrads, double> batch_gradient(const ModelParams& p, const Dataset& data,
                                                    const LatentBank& bank,
                                                    std::span<const std::size_t> indices,
                                                    bool masked) {
  ParamGrads g = ParamGrads::zeros_like(p);
  const double inv_sigma2 = 1.0 / (p.sigma * p.sigma);
  double loss = 0.0;
  ForwardTrace t;
  std::vector<double> residual(p.dims.feature_dim);
  const Matrix* mask = (masked && data.mask) ? &*data.mask : nullptr;
  for (std::size_t i : indices) {
    auto c = data.attrs.row(static_cast<std::size_t>(data.labels[i]));
    auto x = data.visual.row(i);
    forward(p, c, bank.z.row(i), t);
    for (std::size_t k = 0; k < residual.size(); ++k) {
      residual[k] = x[k] - t.output[k];
      if (mask) residual[k] *= mask->row(i)[k];
      loss += residual[k] * residual[k];
    }
    grad_wrt_theta_into(p, t, residual, inv_sigma2, g);
  }
  if (!std::isfinite(loss)) throw std::runtime_error("batch_gradient: non-finite loss");
  return {std::move(g), loss};
}

/// Adam with bias correction; parameters move along the ascent gradient.
inline void adam_update(ModelParams& p, const ParamGrads& g, AdamState& s, double lr,
                        double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) {
  s.t += 1;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(s.t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(s.t));
  auto step = [&](std::span<double> theta, std::span<const double> grad, std::span<double> m,
                  std::span<double> v) {
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
      theta[i] += lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
    }
  };
  step(p.w1.data, g.w1.data, s.m.w1.data, s.v.w1.data);
  step(p.b1, g.b1, s.m.b1, s.v.b1);
  step(p.w2.data, g.w2.data, s.m.w2.data, s.v.w2.data);
  step(p.b2, g.b2, s.m.b2, s.v.b2);
}

/// Everything needed to continue a run bit-exactly.
struct TrainState {
  ModelParams params;
  LatentBank bank;
  AdamState adam;
  std::uint64_t shuffle_state = 0;
  std::size_t epoch = 0;  // completed epochs
  TrainConfig cfg;
};

inline TrainState init_train_state(const Dataset& data, const TrainConfig& cfg) {
  cfg.validate();
  data.validate();
  Dims dims{data.attr_dim(), cfg.latent_dim, cfg.hidden_dim, data.feature_dim()};
  RngStream init_rng(cfg.seed, Stream::Init);
  TrainState s;
  s.params = init_params(init_rng, dims, cfg.hidden_act, cfg.output_act, cfg.sigma);
  s.bank = LatentBank::init(init_rng, data.size(), cfg.latent_dim, cfg.seed);
  s.adam = AdamState::zeros_like(s.params);
  s.shuffle_state = RngStream(cfg.seed, Stream::Shuffle).state();
  s.cfg = cfg;
  return s;
}

/// Runs `epochs_to_run` epochs of Algorithm-style alternation: per
/// minibatch, l Langevin steps on the batch rows, then one Adam update.
inline void run_epochs(TrainState& s, const Dataset& data, std::size_t epochs_to_run,
                       TrainLog& log, std::ostream* log_sink = nullptr) {
  const TrainConfig& cfg = s.cfg;
  LangevinConfig lv = cfg.langevin;
  lv.sigma = cfg.sigma;
  const Matrix* mask = (cfg.masked && data.mask) ? &*data.mask : nullptr;
  const std::size_t n = data.train_idx.size();

  for (std::size_t e = 0; e < epochs_to_run; ++e) {
    const auto t0 = std::chrono::steady_clock::now();
    RngStream shuffle = RngStream::from_state(s.shuffle_state);
    std::vector<std::size_t> order = shuffle.permutation(n);
    s.shuffle_state = shuffle.state();

    double loss_sum = 0.0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t end = std::min(start + cfg.batch_size, n);
      std::vector<std::size_t> batch;
      batch.reserve(end - start);
      for (std::size_t j = start; j < end; ++j) batch.push_back(data.train_idx[order[j]]);
      infer_batch(s.params, data.visual, data.attrs, data.labels, mask, s.bank, batch, lv);
      auto [grads, loss] = batch_gradient(s.params, data, s.bank, batch, cfg.masked);
      adam_update(s.params, grads, s.adam, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2,
                  cfg.adam_eps);
      loss_sum += loss;
    }

    double z_sq = 0.0;
    for (std::size_t i : data.train_idx) z_sq += squared_norm(s.bank.z.row(i));
    s.epoch += 1;

    EpochRecord rec;
    rec.epoch = s.epoch;
    rec.mean_loss = n > 0 ? loss_sum / static_cast<double>(n) : 0.0;
    rec.mean_z_sq = n > 0 ? z_sq / static_cast<double>(n) : 0.0;
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log.push_back(rec);
    if (log_sink) {
      *log_sink << "{\"epoch\":" << rec.epoch << ",\"loss\":" << rec.mean_loss
                << ",\"mean_z_sq\":" << rec.mean_z_sq << ",\"seconds\":" << rec.seconds << "}\n";
    }
  }
}

inline TrainState train(const Dataset& data, const TrainConfig& cfg, TrainLog& log,
                        std::ostream* log_sink = nullptr) {
  TrainState s = init_train_state(data, cfg);
  run_epochs(s, data, cfg.epochs, log, log_sink);
  return s;
}

}  // namespace abp
