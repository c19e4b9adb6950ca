#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "generator.hpp"
#include "matrix.hpp"
#include "parallel.hpp"
#include "rng.hpp"

namespace abp {

/// Chains that wander past this norm are treated as diverged.
inline constexpr double kChainNormLimit = 1e6;

struct LangevinConfig {
  std::size_t steps = 10;   // l
  double step_size = 0.3;   // s
  bool noise_enabled = true;
  double sigma = 0.3;       // copied from ModelParams

  void validate() const {
    if (step_size < 0.0) throw std::invalid_argument("LangevinConfig: step_size must be >= 0");
    if (sigma <= 0.0) throw std::invalid_argument("LangevinConfig: sigma must be > 0");
  }
};

/// One persistent latent vector per training example, plus the per-example
/// noise stream state so chains resume exactly across batches and restarts.
struct LatentBank {
  Matrix z;                               // n x d
  std::vector<std::uint64_t> noise_state; // n entries

  static LatentBank init(RngStream& init_rng, std::size_t n, std::size_t latent_dim,
                         std::uint64_t seed) {
    LatentBank b;
    b.z = Matrix(n, latent_dim);
    b.z.data = init_rng.gaussian(n * latent_dim);
    b.noise_state.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      b.noise_state[i] = RngStream(seed, Stream::LangevinNoise, i).state();
    }
    return b;
  }

  std::size_t size() const { return z.rows; }
};

/// log p(x, z | c) up to the additive constant: the masked reconstruction
/// term plus the latent prior term.
inline double log_joint(const ModelParams& p, std::span<const double> c, std::span<const double> x,
                        std::span<const double> z, double sigma,
                        std::span<const double> mask = {}) {
  ForwardTrace t;
  forward(p, c, z, t);
  double rec = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    double r = x[k] - t.output[k];
    if (!mask.empty()) r *= mask[k];
    rec += r * r;
  }
  return -rec / (2.0 * sigma * sigma) - 0.5 * squared_norm(z);
}

/// One Langevin update:
///   z' = z + s*U + (s^2/2) * [ (1/sigma^2) (dg/dZ)^T (m o (x - g)) - z ].
/// noise_enabled=false drops the s*U term (pure gradient ascent on the
/// log joint).
inline std::vector<double> langevin_step(const ModelParams& p, std::span<const double> c,
                                         std::span<const double> x, std::span<const double> z,
                                         const LangevinConfig& cfg, RngStream& noise,
                                         std::span<const double> mask = {},
                                         std::size_t example_index = 0) {
  cfg.validate();
  ForwardTrace t;
  forward(p, c, z, t);
  std::vector<double> residual(x.size());
  for (std::size_t k = 0; k < x.size(); ++k) {
    residual[k] = x[k] - t.output[k];
    if (!mask.empty()) residual[k] *= mask[k];
  }
  std::vector<double> gz = grad_wrt_z(p, t, residual);
  const double s = cfg.step_size;
  const double inv_sigma2 = 1.0 / (cfg.sigma * cfg.sigma);
  std::vector<double> out(z.size());
  for (std::size_t j = 0; j < z.size(); ++j) {
    double step = 0.5 * s * s * (inv_sigma2 * gz[j] - z[j]);
    if (cfg.noise_enabled) step += s * noise.normal();
    out[j] = z[j] + step;
  }
  if (squared_norm(out) > kChainNormLimit * kChainNormLimit) {
    throw std::runtime_error("langevin_step: chain diverged at example " +
                             std::to_string(example_index));
  }
  check_finite(std::span<const double>(out), "langevin_step: drift at example " +
                                                 std::to_string(example_index));
  return out;
}

/// Warm-start update of the selected bank rows: cfg.steps sequential
/// Langevin steps per row, each row owning its persistent noise stream.
inline void infer_batch(const ModelParams& p, const Matrix& visual, const Matrix& attrs,
                        std::span<const int> labels, const Matrix* mask, LatentBank& bank,
                        std::span<const std::size_t> indices, const LangevinConfig& cfg) {
  cfg.validate();
  for (std::size_t i : indices) {
    if (i >= bank.size()) throw std::out_of_range("infer_batch: index out of range");
  }
  // Rows are independent chains; each worker owns its row and noise stream.
  parallel_for(indices.size(), [&](std::size_t idx) {
    const std::size_t i = indices[idx];
    RngStream noise = RngStream::from_state(bank.noise_state[i]);
    std::vector<double> z(bank.z.row(i).begin(), bank.z.row(i).end());
    auto c = attrs.row(static_cast<std::size_t>(labels[i]));
    auto x = visual.row(i);
    std::span<const double> m = mask ? mask->row(i) : std::span<const double>{};
    for (std::size_t step = 0; step < cfg.steps; ++step) {
      z = langevin_step(p, c, x, z, cfg, noise, m, i);
    }
    std::copy(z.begin(), z.end(), bank.z.row(i).begin());
    bank.noise_state[i] = noise.state();
  });
}

}  // namespace abp
