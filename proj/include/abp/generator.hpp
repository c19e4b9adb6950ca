#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "matrix.hpp"
#include "rng.hpp"

namespace abp {

enum class Activation { Identity, Relu, LeakyRelu };

/// LeakyReLU negative slope (recorded in checkpoints).
inline constexpr double kLeakySlope = 0.2;

inline double activate(Activation a, double x) {
  switch (a) {
    case Activation::Identity: return x;
    case Activation::Relu: return x > 0.0 ? x : 0.0;
    case Activation::LeakyRelu: return x > 0.0 ? x : kLeakySlope * x;
  }
  return x;
}

/// Derivative w.r.t. the pre-activation. At exactly 0 the negative-side
/// slope is used.
inline double activate_grad(Activation a, double pre) {
  switch (a) {
    case Activation::Identity: return 1.0;
    case Activation::Relu: return pre > 0.0 ? 1.0 : 0.0;
    case Activation::LeakyRelu: return pre > 0.0 ? 1.0 : kLeakySlope;
  }
  return 1.0;
}

inline std::string activation_name(Activation a) {
  switch (a) {
    case Activation::Identity: return "identity";
    case Activation::Relu: return "relu";
    case Activation::LeakyRelu: return "leaky-relu";
  }
  return "identity";
}

inline Activation activation_from_name(const std::string& s) {
  if (s == "identity") return Activation::Identity;
  if (s == "relu") return Activation::Relu;
  if (s == "leaky-relu") return Activation::LeakyRelu;
  throw std::invalid_argument("unknown activation: " + s);
}

struct Dims {
  std::size_t attr_dim = 0;    // K
  std::size_t latent_dim = 0;  // d
  std::size_t hidden_dim = 0;  // h
  std::size_t feature_dim = 0; // D

  bool operator==(const Dims&) const = default;
};

/// Single-hidden-layer conditional generator g(c, z) -> x.
/// w1 is (K+d) x h, w2 is h x D; layer maps are x |-> W^T x + b.
struct ModelParams {
  Dims dims;
  Activation hidden_act = Activation::LeakyRelu;
  Activation output_act = Activation::Relu;
  double sigma = 0.3;
  Matrix w1;
  std::vector<double> b1;
  Matrix w2;
  std::vector<double> b2;

  void validate() const {
    if (sigma <= 0.0) throw std::invalid_argument("ModelParams: sigma must be > 0");
    const std::size_t in = dims.attr_dim + dims.latent_dim;
    if (w1.rows != in || w1.cols != dims.hidden_dim || b1.size() != dims.hidden_dim ||
        w2.rows != dims.hidden_dim || w2.cols != dims.feature_dim || b2.size() != dims.feature_dim) {
      throw std::invalid_argument("ModelParams: weight shapes inconsistent with dims");
    }
    check_finite(w1, "w1");
    check_finite(w2, "w2");
    check_finite(std::span<const double>(b1), "b1");
    check_finite(std::span<const double>(b2), "b2");
  }

  bool operator==(const ModelParams&) const = default;
};

/// Cache of one forward pass, consumed by the backward passes.
struct ForwardTrace {
  std::vector<double> input;       // [c; z], length K+d
  std::vector<double> hidden_pre;  // length h
  std::vector<double> hidden;      // length h
  std::vector<double> output_pre;  // length D
  std::vector<double> output;      // length D
};

inline void forward(const ModelParams& p, std::span<const double> c, std::span<const double> z,
                    ForwardTrace& t) {
  const auto& d = p.dims;
  if (c.size() != d.attr_dim || z.size() != d.latent_dim) {
    throw std::invalid_argument("forward: input lengths (" + std::to_string(c.size()) + "," +
                                std::to_string(z.size()) + ") do not match dims (" +
                                std::to_string(d.attr_dim) + "," + std::to_string(d.latent_dim) + ")");
  }
  const std::size_t in = d.attr_dim + d.latent_dim;
  t.input.resize(in);
  for (std::size_t i = 0; i < d.attr_dim; ++i) t.input[i] = c[i];
  for (std::size_t i = 0; i < d.latent_dim; ++i) t.input[d.attr_dim + i] = z[i];

  t.hidden_pre.assign(d.hidden_dim, 0.0);
  for (std::size_t i = 0; i < in; ++i) {
    const double xi = t.input[i];
    if (xi == 0.0) continue;
    const double* wrow = p.w1.data.data() + i * d.hidden_dim;
    for (std::size_t j = 0; j < d.hidden_dim; ++j) t.hidden_pre[j] += xi * wrow[j];
  }
  t.hidden.resize(d.hidden_dim);
  for (std::size_t j = 0; j < d.hidden_dim; ++j) {
    t.hidden_pre[j] += p.b1[j];
    t.hidden[j] = activate(p.hidden_act, t.hidden_pre[j]);
  }

  t.output_pre.assign(d.feature_dim, 0.0);
  for (std::size_t j = 0; j < d.hidden_dim; ++j) {
    const double hj = t.hidden[j];
    if (hj == 0.0) continue;
    const double* wrow = p.w2.data.data() + j * d.feature_dim;
    for (std::size_t k = 0; k < d.feature_dim; ++k) t.output_pre[k] += hj * wrow[k];
  }
  t.output.resize(d.feature_dim);
  for (std::size_t k = 0; k < d.feature_dim; ++k) {
    t.output_pre[k] += p.b2[k];
    t.output[k] = activate(p.output_act, t.output_pre[k]);
  }
  check_finite(std::span<const double>(t.output), "forward output");
}

inline std::vector<double> forward(const ModelParams& p, std::span<const double> c,
                                   std::span<const double> z) {
  ForwardTrace t;
  forward(p, c, z, t);
  return t.output;
}

namespace detail {
// residual pushed through the output activation, then back through w2 and
// the hidden activation; shared by both backward passes.
inline void backprop_to_hidden(const ModelParams& p, const ForwardTrace& t,
                               std::span<const double> residual, std::vector<double>& delta_out,
                               std::vector<double>& delta_hidden) {
  const auto& d = p.dims;
  if (residual.size() != d.feature_dim || t.input.size() != d.attr_dim + d.latent_dim ||
      t.hidden.size() != d.hidden_dim) {
    throw std::invalid_argument("backward: trace/residual shapes do not match params");
  }
  delta_out.resize(d.feature_dim);
  for (std::size_t k = 0; k < d.feature_dim; ++k) {
    delta_out[k] = residual[k] * activate_grad(p.output_act, t.output_pre[k]);
  }
  delta_hidden.assign(d.hidden_dim, 0.0);
  for (std::size_t j = 0; j < d.hidden_dim; ++j) {
    const double* wrow = p.w2.data.data() + j * d.feature_dim;
    double s = 0.0;
    for (std::size_t k = 0; k < d.feature_dim; ++k) s += wrow[k] * delta_out[k];
    delta_hidden[j] = s * activate_grad(p.hidden_act, t.hidden_pre[j]);
  }
}
}  // namespace detail

/// (dg/dZ)^T residual: the Z block of the input gradient. The C block is
/// discarded.
inline std::vector<double> grad_wrt_z(const ModelParams& p, const ForwardTrace& t,
                                      std::span<const double> residual) {
  std::vector<double> delta_out, delta_hidden;
  detail::backprop_to_hidden(p, t, residual, delta_out, delta_hidden);
  const auto& d = p.dims;
  std::vector<double> gz(d.latent_dim, 0.0);
  for (std::size_t i = 0; i < d.latent_dim; ++i) {
    const double* wrow = p.w1.data.data() + (d.attr_dim + i) * d.hidden_dim;
    gz[i] = dot({wrow, d.hidden_dim}, delta_hidden);
  }
  return gz;
}

/// Gradient container shaped like ModelParams.
struct ParamGrads {
  Matrix w1;
  std::vector<double> b1;
  Matrix w2;
  std::vector<double> b2;

  static ParamGrads zeros_like(const ModelParams& p) {
    ParamGrads g;
    g.w1 = Matrix(p.w1.rows, p.w1.cols);
    g.b1.assign(p.b1.size(), 0.0);
    g.w2 = Matrix(p.w2.rows, p.w2.cols);
    g.b2.assign(p.b2.size(), 0.0);
    return g;
  }
};

/// Accumulate scale * (dg/dtheta)^T residual into g.
inline void grad_wrt_theta_into(const ModelParams& p, const ForwardTrace& t,
                                std::span<const double> residual, double scale, ParamGrads& g) {
  std::vector<double> delta_out, delta_hidden;
  detail::backprop_to_hidden(p, t, residual, delta_out, delta_hidden);
  const auto& d = p.dims;
  const std::size_t in = d.attr_dim + d.latent_dim;
  for (std::size_t j = 0; j < d.hidden_dim; ++j) {
    const double hj = scale * t.hidden[j];
    if (hj != 0.0) {
      double* grow = g.w2.data.data() + j * d.feature_dim;
      for (std::size_t k = 0; k < d.feature_dim; ++k) grow[k] += hj * delta_out[k];
    }
  }
  for (std::size_t k = 0; k < d.feature_dim; ++k) g.b2[k] += scale * delta_out[k];
  for (std::size_t i = 0; i < in; ++i) {
    const double xi = scale * t.input[i];
    if (xi != 0.0) {
      double* grow = g.w1.data.data() + i * d.hidden_dim;
      for (std::size_t j = 0; j < d.hidden_dim; ++j) grow[j] += xi * delta_hidden[j];
    }
  }
  for (std::size_t j = 0; j < d.hidden_dim; ++j) g.b1[j] += scale * delta_hidden[j];
}

inline ParamGrads grad_wrt_theta(const ModelParams& p, const ForwardTrace& t,
                                 std::span<const double> residual) {
  ParamGrads g = ParamGrads::zeros_like(p);
  grad_wrt_theta_into(p, t, residual, 1.0, g);
  return g;
}

/// Glorot-uniform weights, zero biases.
inline ModelParams init_params(RngStream& rng, const Dims& dims,
                               Activation hidden_act = Activation::LeakyRelu,
                               Activation output_act = Activation::Relu, double sigma = 0.3) {
  if (dims.attr_dim < 1 || dims.latent_dim < 1 || dims.hidden_dim < 1 || dims.feature_dim < 1) {
    throw std::invalid_argument("init_params: all dims must be >= 1");
  }
  ModelParams p;
  p.dims = dims;
  p.hidden_act = hidden_act;
  p.output_act = output_act;
  p.sigma = sigma;
  const std::size_t in = dims.attr_dim + dims.latent_dim;
  const double a1 = std::sqrt(6.0 / static_cast<double>(in + dims.hidden_dim));
  const double a2 = std::sqrt(6.0 / static_cast<double>(dims.hidden_dim + dims.feature_dim));
  p.w1 = Matrix(in, dims.hidden_dim);
  for (double& w : p.w1.data) w = rng.uniform(-a1, a1);
  p.b1.assign(dims.hidden_dim, 0.0);
  p.w2 = Matrix(dims.hidden_dim, dims.feature_dim);
  for (double& w : p.w2.data) w = rng.uniform(-a2, a2);
  p.b2.assign(dims.feature_dim, 0.0);
  p.validate();
  return p;
}

}  // namespace abp
