#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <set>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "dataio.hpp"
#include "generator.hpp"
#include "matrix.hpp"
#include "rng.hpp"

namespace abp {

/// Features synthesized by ancestral sampling: Z ~ N(0, I_d), x = g(c, Z),
/// plus observation noise when requested.
struct SynthSet {
  Matrix features;           // (classes * per_class) x D
  std::vector<int> labels;
  bool noise_included = false;
};

/// latent_std is a test hook (0 forces Z = 0); z_out, when given, retains
/// the drawn latents.
inline SynthSet synthesize(const ModelParams& p, const Matrix& class_attrs,
                           std::span<const int> class_ids, std::size_t per_class, RngStream& rng,
                           bool noise = true, double latent_std = 1.0, Matrix* z_out = nullptr) {
  if (per_class < 1) throw std::invalid_argument("synthesize: per_class must be >= 1");
  const std::size_t d = p.dims.latent_dim;
  const std::size_t feat = p.dims.feature_dim;
  SynthSet out;
  out.noise_included = noise;
  out.features = Matrix(class_ids.size() * per_class, feat);
  if (z_out) *z_out = Matrix(out.features.rows, d);
  std::size_t row = 0;
  for (std::size_t ci = 0; ci < class_ids.size(); ++ci) {
    auto c = class_attrs.row(static_cast<std::size_t>(class_ids[ci]));
    for (std::size_t j = 0; j < per_class; ++j, ++row) {
      std::vector<double> z = rng.gaussian(d, 0.0, latent_std);
      if (z_out) std::copy(z.begin(), z.end(), z_out->row(row).begin());
      std::vector<double> x = forward(p, c, z);
      for (std::size_t k = 0; k < feat; ++k) {
        out.features.row(row)[k] = x[k] + (noise ? rng.normal(0.0, p.sigma) : 0.0);
      }
      out.labels.push_back(class_ids[ci]);
    }
  }
  return out;
}

/// Euclidean k-NN with majority vote. Ties break toward the smaller mean
/// distance among the tied classes, then the smaller class id. Neighbor
/// order at equal distance is by training index.
inline std::vector<int> knn_classify(const Matrix& train_feats, std::span<const int> train_labels,
                                     const Matrix& test_feats, std::size_t k) {
  const std::size_t n = train_feats.rows;
  if (n == 0) throw std::invalid_argument("knn_classify: empty training set");
  if (k < 1 || k > n) throw std::invalid_argument("knn_classify: k must be in [1, train size]");
  std::vector<int> pred(test_feats.rows);
  std::vector<std::pair<double, std::size_t>> dist(n);
  for (std::size_t t = 0; t < test_feats.rows; ++t) {
    auto q = test_feats.row(t);
    for (std::size_t i = 0; i < n; ++i) {
      auto r = train_feats.row(i);
      double s = 0.0;
      for (std::size_t j = 0; j < q.size(); ++j) {
        const double dlt = q[j] - r[j];
        s += dlt * dlt;
      }
      dist[i] = {s, i};
    }
    std::nth_element(dist.begin(), dist.begin() + (k - 1), dist.end());
    std::sort(dist.begin(), dist.begin() + k);
    std::map<int, std::pair<std::size_t, double>> votes;  // class -> (count, dist sum)
    for (std::size_t i = 0; i < k; ++i) {
      auto& v = votes[train_labels[dist[i].second]];
      v.first += 1;
      v.second += std::sqrt(dist[i].first);
    }
    int best = -1;
    std::size_t best_count = 0;
    double best_mean = 0.0;
    for (const auto& [cls, v] : votes) {
      const double mean = v.second / static_cast<double>(v.first);
      if (v.first > best_count ||
          (v.first == best_count && (mean < best_mean || (mean == best_mean && cls < best)))) {
        best = cls;
        best_count = v.first;
        best_mean = mean;
      }
    }
    pred[t] = best;
  }
  return pred;
}

struct SoftmaxConfig {
  double learning_rate = 1e-2;
  std::size_t iterations = 500;
};

/// Multinomial logistic regression (linear with bias), full-batch gradient
/// descent on the mean cross-entropy. Prediction ties go to the smaller
/// class id.
inline std::vector<int> softmax_classify(const Matrix& train_feats,
                                         std::span<const int> train_labels,
                                         const Matrix& test_feats,
                                         const SoftmaxConfig& cfg = {}) {
  std::vector<int> classes(train_labels.begin(), train_labels.end());
  std::sort(classes.begin(), classes.end());
  classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
  if (classes.size() < 2) throw std::invalid_argument("softmax_classify: need >= 2 classes");
  std::map<int, std::size_t> index_of;
  for (std::size_t i = 0; i < classes.size(); ++i) index_of[classes[i]] = i;

  const std::size_t n = train_feats.rows;
  const std::size_t dim = train_feats.cols;
  const std::size_t nc = classes.size();
  Matrix w(dim + 1, nc);  // last row is the bias

  auto logits_for = [&](std::span<const double> x, std::vector<double>& out) {
    for (std::size_t c = 0; c < nc; ++c) out[c] = w(dim, c);
    for (std::size_t j = 0; j < dim; ++j) {
      const double xj = x[j];
      if (xj == 0.0) continue;
      const double* wrow = w.data.data() + j * nc;
      for (std::size_t c = 0; c < nc; ++c) out[c] += xj * wrow[c];
    }
  };

  std::vector<double> logits(nc), probs(nc);
  Matrix grad(dim + 1, nc);
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    std::fill(grad.data.begin(), grad.data.end(), 0.0);
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      auto x = train_feats.row(i);
      logits_for(x, logits);
      const double mx = *std::max_element(logits.begin(), logits.end());
      double sum = 0.0;
      for (std::size_t c = 0; c < nc; ++c) sum += (probs[c] = std::exp(logits[c] - mx));
      const std::size_t yi = index_of.at(train_labels[i]);
      loss -= std::log(probs[yi] / sum);
      for (std::size_t c = 0; c < nc; ++c) {
        const double delta = probs[c] / sum - (c == yi ? 1.0 : 0.0);
        for (std::size_t j = 0; j < dim; ++j) grad(j, c) += x[j] * delta;
        grad(dim, c) += delta;
      }
    }
    if (!std::isfinite(loss)) throw std::runtime_error("softmax_classify: loss diverged");
    const double scale = cfg.learning_rate / static_cast<double>(n);
    for (std::size_t i = 0; i < w.data.size(); ++i) w.data[i] -= scale * grad.data[i];
  }

  std::vector<int> pred(test_feats.rows);
  for (std::size_t t = 0; t < test_feats.rows; ++t) {
    logits_for(test_feats.row(t), logits);
    std::size_t best = 0;
    for (std::size_t c = 1; c < nc; ++c) {
      if (logits[c] > logits[best]) best = c;
    }
    pred[t] = classes[best];
  }
  return pred;
}

struct PerClassAccuracy {
  double top1 = 0.0;                    // unweighted mean over non-empty classes
  std::map<int, double> per_class;
  std::vector<int> excluded;            // classes with no test examples
};

inline PerClassAccuracy per_class_top1(std::span<const int> pred, std::span<const int> truth,
                                       std::span<const int> class_set) {
  if (pred.empty()) throw std::invalid_argument("per_class_top1: empty predictions");
  if (pred.size() != truth.size()) throw std::invalid_argument("per_class_top1: size mismatch");
  if (class_set.empty()) throw std::invalid_argument("per_class_top1: empty class set");
  std::set<int> allowed(class_set.begin(), class_set.end());
  std::map<int, std::pair<std::size_t, std::size_t>> counts;  // class -> (correct, total)
  for (int c : class_set) counts[c] = {0, 0};
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (!allowed.count(truth[i])) throw std::invalid_argument("per_class_top1: true label outside class set");
    auto& [correct, total] = counts[truth[i]];
    total += 1;
    if (pred[i] == truth[i]) correct += 1;
  }
  PerClassAccuracy out;
  double sum = 0.0;
  std::size_t populated = 0;
  for (const auto& [cls, ct] : counts) {
    if (ct.second == 0) {
      out.excluded.push_back(cls);
      continue;
    }
    const double acc = static_cast<double>(ct.first) / static_cast<double>(ct.second);
    out.per_class[cls] = acc;
    sum += acc;
    populated += 1;
  }
  out.top1 = populated > 0 ? sum / static_cast<double>(populated) : 0.0;
  return out;
}

inline double harmonic_mean(double a_seen, double a_unseen) {
  if (a_seen + a_unseen == 0.0) return 0.0;
  return 2.0 * a_seen * a_unseen / (a_seen + a_unseen);
}

struct EvalReport {
  std::map<int, double> per_class_accuracy;
  double top1 = 0.0;
  double a_seen = 0.0;
  double a_unseen = 0.0;
  double h = 0.0;
  nlohmann::json config;
};

inline void to_json(nlohmann::json& j, const EvalReport& r) {
  nlohmann::json per_class = nlohmann::json::object();
  for (const auto& [cls, acc] : r.per_class_accuracy) per_class[std::to_string(cls)] = acc;
  j = nlohmann::json{{"per_class_accuracy", per_class}, {"top1", r.top1}, {"a_seen", r.a_seen},
                     {"a_unseen", r.a_unseen},          {"h", r.h},       {"config", r.config}};
}

/// ZSL: synthesize features for the unseen classes, then k-NN over them.
/// k is clamped to the synthesized set size for tiny per_class values.
inline EvalReport eval_zsl(const ModelParams& p, const Dataset& data, std::size_t per_class = 300,
                           std::size_t k = 20, std::uint64_t seed = 0) {
  RngStream rng(seed, Stream::Synthesis);
  SynthSet synth = synthesize(p, data.attrs, data.unseen_classes, per_class, rng, true);
  const std::size_t k_eff = std::min(k, synth.features.rows);

  Matrix test(data.test_unseen_idx.size(), data.feature_dim());
  std::vector<int> truth;
  for (std::size_t i = 0; i < data.test_unseen_idx.size(); ++i) {
    auto r = data.visual.row(data.test_unseen_idx[i]);
    std::copy(r.begin(), r.end(), test.row(i).begin());
    truth.push_back(data.labels[data.test_unseen_idx[i]]);
  }
  std::vector<int> pred = knn_classify(synth.features, synth.labels, test, k_eff);
  PerClassAccuracy acc = per_class_top1(pred, truth, data.unseen_classes);

  EvalReport rep;
  rep.per_class_accuracy = acc.per_class;
  rep.top1 = acc.top1;
  rep.a_unseen = acc.top1;
  rep.config = {{"mode", "zsl"}, {"per_class", per_class}, {"k", k_eff}, {"seed", seed}};
  return rep;
}

/// GZSL: softmax over real seen-train features plus synthesized unseen
/// features; test points are classified against the union of classes.
inline EvalReport eval_gzsl(const ModelParams& p, const Dataset& data, std::size_t per_class = 300,
                            std::uint64_t seed = 0, const SoftmaxConfig& cfg = {}) {
  RngStream rng(seed, Stream::Synthesis);
  SynthSet synth = synthesize(p, data.attrs, data.unseen_classes, per_class, rng, true);

  Matrix train(data.train_idx.size() + synth.features.rows, data.feature_dim());
  std::vector<int> train_labels;
  std::size_t row = 0;
  for (std::size_t i : data.train_idx) {
    auto r = data.visual.row(i);
    std::copy(r.begin(), r.end(), train.row(row++).begin());
    train_labels.push_back(data.labels[i]);
  }
  for (std::size_t i = 0; i < synth.features.rows; ++i) {
    auto r = synth.features.row(i);
    std::copy(r.begin(), r.end(), train.row(row++).begin());
    train_labels.push_back(synth.labels[i]);
  }

  auto gather = [&](const std::vector<std::size_t>& idx, Matrix& feats, std::vector<int>& labels) {
    feats = Matrix(idx.size(), data.feature_dim());
    labels.clear();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      auto r = data.visual.row(idx[i]);
      std::copy(r.begin(), r.end(), feats.row(i).begin());
      labels.push_back(data.labels[idx[i]]);
    }
  };
  Matrix seen_test, unseen_test;
  std::vector<int> seen_truth, unseen_truth;
  gather(data.test_seen_idx, seen_test, seen_truth);
  gather(data.test_unseen_idx, unseen_test, unseen_truth);

  std::vector<int> union_classes = data.seen_classes;
  union_classes.insert(union_classes.end(), data.unseen_classes.begin(), data.unseen_classes.end());

  std::vector<int> pred_seen = softmax_classify(train, train_labels, seen_test, cfg);
  std::vector<int> pred_unseen = softmax_classify(train, train_labels, unseen_test, cfg);
  PerClassAccuracy acc_seen = per_class_top1(pred_seen, seen_truth, data.seen_classes);
  PerClassAccuracy acc_unseen = per_class_top1(pred_unseen, unseen_truth, data.unseen_classes);

  EvalReport rep;
  rep.per_class_accuracy = acc_seen.per_class;
  rep.per_class_accuracy.insert(acc_unseen.per_class.begin(), acc_unseen.per_class.end());
  rep.a_seen = acc_seen.top1;
  rep.a_unseen = acc_unseen.top1;
  rep.h = harmonic_mean(rep.a_seen, rep.a_unseen);
  rep.top1 = rep.h;
  rep.config = {{"mode", "gzsl"},
                {"per_class", per_class},
                {"seed", seed},
                {"softmax_lr", cfg.learning_rate},
                {"softmax_iterations", cfg.iterations}};
  return rep;
}

}  // namespace abp