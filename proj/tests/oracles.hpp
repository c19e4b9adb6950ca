// Test-only oracles, independent of the implementation paths they check.
#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "abp/generator.hpp"
#include "abp/matrix.hpp"

namespace oracle {

// Naive triple-loop product.
inline abp::Matrix naive_matmul(const abp::Matrix& a, const abp::Matrix& b) {
  abp::Matrix out(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < b.cols; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols; ++k) s += a(i, k) * b(k, j);
      out(i, j) = s;
    }
  return out;
}

// Kolmogorov-Smirnov statistic against the standard normal CDF.
inline double ks_statistic_normal(std::vector<double> sample) {
  std::sort(sample.begin(), sample.end());
  const double n = static_cast<double>(sample.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < sample.size(); ++i) {
    const double cdf = 0.5 * std::erfc(-sample[i] / std::sqrt(2.0));
    worst = std::max(worst, std::abs(cdf - (i + 1) / n));
    worst = std::max(worst, std::abs(cdf - i / n));
  }
  return worst;
}

// Central finite difference of f at *slot.
template <typename F>
double central_diff(F&& f, double* slot, double step = 1e-6) {
  const double saved = *slot;
  *slot = saved + step;
  const double up = f();
  *slot = saved - step;
  const double down = f();
  *slot = saved;
  return (up - down) / (2.0 * step);
}

inline double rel_error(double a, double b, double floor = 1e-8) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// Denominator floor below which a central difference carries no signal:
// cancellation noise is ~ eps * |f| / step, so gradients smaller than
// noise/tol cannot be resolved at the requested relative tolerance.
inline double fd_noise_floor(double f_value, double step = 1e-6, double tol = 1e-6) {
  return 8.0 * 2.220446049250313e-16 * std::abs(f_value) / step / tol;
}

// Finite differences are meaningless across an activation kink; push any
// pre-activation sitting near 0 away from it before differencing.
inline void nudge_away_from_kinks(abp::ModelParams& p, const std::vector<double>& c,
                                  const std::vector<double>& z, double margin = 1e-4) {
  for (int pass = 0; pass < 8; ++pass) {
    abp::ForwardTrace t;
    abp::forward(p, c, z, t);
    bool clean = true;
    for (std::size_t j = 0; j < t.hidden_pre.size(); ++j) {
      if (std::abs(t.hidden_pre[j]) < margin) {
        p.b1[j] += t.hidden_pre[j] >= 0.0 ? 10 * margin : -10 * margin;
        clean = false;
      }
    }
    for (std::size_t k = 0; k < t.output_pre.size(); ++k) {
      if (std::abs(t.output_pre[k]) < margin) {
        p.b2[k] += t.output_pre[k] >= 0.0 ? 10 * margin : -10 * margin;
        clean = false;
      }
    }
    if (clean) return;
  }
}

// Gauss-Jordan inverse for tiny symmetric positive definite systems.
inline abp::Matrix invert(abp::Matrix m) {
  const std::size_t n = m.rows;
  abp::Matrix inv = abp::Matrix::identity(n);
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(m(r, col)) > std::abs(m(pivot, col))) pivot = r;
    if (std::abs(m(pivot, col)) < 1e-14) throw std::runtime_error("invert: singular matrix");
    for (std::size_t j = 0; j < n; ++j) {
      std::swap(m(col, j), m(pivot, j));
      std::swap(inv(col, j), inv(pivot, j));
    }
    const double d = m(col, col);
    for (std::size_t j = 0; j < n; ++j) {
      m(col, j) /= d;
      inv(col, j) /= d;
    }
    for (std::size_t r = 0; r < n; ++r) {
      if (r == col) continue;
      const double f = m(r, col);
      if (f == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) {
        m(r, j) -= f * m(col, j);
        inv(r, j) -= f * inv(col, j);
      }
    }
  }
  return inv;
}

// For an all-identity-activation net, collapse it to x = A c + B z + bias.
struct LinearForm {
  abp::Matrix a;             // D x K
  abp::Matrix b;             // D x d
  std::vector<double> bias;  // D
};

inline LinearForm linearize(const abp::ModelParams& p) {
  const auto& d = p.dims;
  abp::Matrix m = abp::Matrix(d.attr_dim + d.latent_dim, d.feature_dim);
  for (std::size_t i = 0; i < m.rows; ++i)
    for (std::size_t k = 0; k < d.feature_dim; ++k) {
      double s = 0.0;
      for (std::size_t j = 0; j < d.hidden_dim; ++j) s += p.w1(i, j) * p.w2(j, k);
      m(i, k) = s;
    }
  LinearForm lf;
  lf.a = abp::Matrix(d.feature_dim, d.attr_dim);
  lf.b = abp::Matrix(d.feature_dim, d.latent_dim);
  for (std::size_t k = 0; k < d.feature_dim; ++k) {
    for (std::size_t i = 0; i < d.attr_dim; ++i) lf.a(k, i) = m(i, k);
    for (std::size_t i = 0; i < d.latent_dim; ++i) lf.b(k, i) = m(d.attr_dim + i, k);
  }
  lf.bias.assign(d.feature_dim, 0.0);
  for (std::size_t k = 0; k < d.feature_dim; ++k) {
    double s = p.b2[k];
    for (std::size_t j = 0; j < d.hidden_dim; ++j) s += p.b1[j] * p.w2(j, k);
    lf.bias[k] = s;
  }
  return lf;
}

// Posterior of z given x for the linear-Gaussian model:
// cov = (B^T B / sigma^2 + I)^-1, mean = cov B^T (x - A c - bias) / sigma^2.
struct GaussianPosterior {
  std::vector<double> mean;
  abp::Matrix cov;
};

inline GaussianPosterior linear_posterior(const LinearForm& lf, double sigma,
                                          const std::vector<double>& c,
                                          const std::vector<double>& x) {
  const std::size_t feat = lf.b.rows, lat = lf.b.cols;
  abp::Matrix precision = abp::Matrix::identity(lat);
  for (std::size_t i = 0; i < lat; ++i)
    for (std::size_t j = 0; j < lat; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < feat; ++k) s += lf.b(k, i) * lf.b(k, j);
      precision(i, j) += s / (sigma * sigma);
    }
  GaussianPosterior post;
  post.cov = invert(precision);
  std::vector<double> resid(feat);
  for (std::size_t k = 0; k < feat; ++k) {
    double ac = lf.bias[k];
    for (std::size_t i = 0; i < c.size(); ++i) ac += lf.a(k, i) * c[i];
    resid[k] = (x[k] - ac) / (sigma * sigma);
  }
  std::vector<double> bt_r(lat, 0.0);
  for (std::size_t i = 0; i < lat; ++i)
    for (std::size_t k = 0; k < feat; ++k) bt_r[i] += lf.b(k, i) * resid[k];
  post.mean.assign(lat, 0.0);
  for (std::size_t i = 0; i < lat; ++i)
    for (std::size_t j = 0; j < lat; ++j) post.mean[i] += post.cov(i, j) * bt_r[j];
  return post;
}

// log N(x; mean, B B^T + sigma^2 I) via Cholesky, for small feature dims.
inline double marginal_loglik(const LinearForm& lf, double sigma, const std::vector<double>& c,
                              const std::vector<double>& x) {
  const std::size_t feat = lf.b.rows, lat = lf.b.cols;
  abp::Matrix cov(feat, feat);
  for (std::size_t i = 0; i < feat; ++i)
    for (std::size_t j = 0; j < feat; ++j) {
      double s = (i == j) ? sigma * sigma : 0.0;
      for (std::size_t k = 0; k < lat; ++k) s += lf.b(i, k) * lf.b(j, k);
      cov(i, j) = s;
    }
  // Cholesky cov = L L^T
  abp::Matrix chol(feat, feat);
  for (std::size_t i = 0; i < feat; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double s = cov(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= chol(i, k) * chol(j, k);
      if (i == j) {
        if (s <= 0.0) throw std::runtime_error("marginal_loglik: covariance not SPD");
        chol(i, i) = std::sqrt(s);
      } else {
        chol(i, j) = s / chol(j, j);
      }
    }
  }
  std::vector<double> resid(feat);
  for (std::size_t k = 0; k < feat; ++k) {
    double mu = lf.bias[k];
    for (std::size_t i = 0; i < c.size(); ++i) mu += lf.a(k, i) * c[i];
    resid[k] = x[k] - mu;
  }
  // solve L y = resid
  std::vector<double> y(feat);
  double logdet = 0.0;
  for (std::size_t i = 0; i < feat; ++i) {
    double s = resid[i];
    for (std::size_t k = 0; k < i; ++k) s -= chol(i, k) * y[k];
    y[i] = s / chol(i, i);
    logdet += 2.0 * std::log(chol(i, i));
  }
  double quad = 0.0;
  for (double v : y) quad += v * v;
  constexpr double kLog2Pi = 1.8378770664093453;
  return -0.5 * (quad + logdet + static_cast<double>(feat) * kLog2Pi);
}

// Brute-force k-NN: full sort by (distance, index), majority vote, ties by
// smaller mean distance then smaller class id.
inline std::vector<int> brute_force_knn(const abp::Matrix& train, const std::vector<int>& labels,
                                        const abp::Matrix& test, std::size_t k) {
  std::vector<int> pred(test.rows);
  for (std::size_t t = 0; t < test.rows; ++t) {
    std::vector<std::pair<double, std::size_t>> all;
    for (std::size_t i = 0; i < train.rows; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < train.cols; ++j) {
        const double d = test(t, j) - train(i, j);
        s += d * d;
      }
      all.emplace_back(std::sqrt(s), i);
    }
    std::sort(all.begin(), all.end());
    std::map<int, std::vector<double>> by_class;
    for (std::size_t i = 0; i < k; ++i) by_class[labels[all[i].second]].push_back(all[i].first);
    int best = -1;
    std::size_t best_n = 0;
    double best_mean = 0.0;
    for (const auto& [cls, ds] : by_class) {
      const double mean = std::accumulate(ds.begin(), ds.end(), 0.0) / ds.size();
      if (ds.size() > best_n || (ds.size() == best_n && (mean < best_mean || (mean == best_mean && cls < best)))) {
        best = cls;
        best_n = ds.size();
        best_mean = mean;
      }
    }
    pred[t] = best;
  }
  return pred;
}

}  // namespace oracle
