#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "abp/checkpoint.hpp"
#include "abp/dataio.hpp"
#include "abp/trainer.hpp"
#include "oracles.hpp"

using namespace abp;

namespace {

SynthSpec tiny_spec() {
  SynthSpec s;
  s.num_seen = 4;
  s.num_unseen = 2;
  s.per_class_train = 10;
  s.per_class_test = 4;
  s.attr_dim = 3;
  s.latent_dim = 2;
  s.feature_dim = 5;
  s.teacher_hidden = 4;
  s.seed = 17;
  return s;
}

TrainConfig tiny_cfg() {
  TrainConfig c;
  c.epochs = 3;
  c.batch_size = 8;
  c.latent_dim = 2;
  c.hidden_dim = 6;
  c.seed = 23;
  return c;
}

}  // namespace

TEST_CASE("batch_gradient: exact reconstruction gives zero gradient and loss") {
  auto [data, teacher] = gen_synth(tiny_spec());
  RngStream rng(1, Stream::Init);
  ModelParams p = init_params(rng, {3, 2, 4, 5});
  RngStream init(1, Stream::Init);
  LatentBank bank = LatentBank::init(init, data.size(), 2, 1);
  // overwrite visual features with the model's own outputs
  for (std::size_t i = 0; i < data.size(); ++i) {
    auto x = forward(p, data.attrs.row(data.labels[i]), bank.z.row(i));
    std::copy(x.begin(), x.end(), data.visual.row(i).begin());
  }
  std::vector<std::size_t> idx{0, 1, 2, 3};
  auto [g, loss] = batch_gradient(p, data, bank, idx, false);
  REQUIRE(loss == 0.0);
  REQUIRE(g.w1.data == std::vector<double>(g.w1.data.size(), 0.0));
  REQUIRE(g.w2.data == std::vector<double>(g.w2.data.size(), 0.0));
}

TEST_CASE("batch_gradient: all-ones mask equals the unmasked path bit-exactly") {
  auto [data, teacher] = gen_synth(tiny_spec());
  RngStream rng(2, Stream::Init);
  ModelParams p = init_params(rng, {3, 2, 4, 5});
  RngStream init(2, Stream::Init);
  LatentBank bank = LatentBank::init(init, data.size(), 2, 2);
  std::vector<std::size_t> idx{0, 3, 5, 7};
  auto [g_plain, loss_plain] = batch_gradient(p, data, bank, idx, false);
  data.mask = Matrix(data.size(), data.feature_dim());
  for (double& v : data.mask->data) v = 1.0;
  auto [g_masked, loss_masked] = batch_gradient(p, data, bank, idx, true);
  REQUIRE(g_plain.w1 == g_masked.w1);
  REQUIRE(g_plain.w2 == g_masked.w2);
  REQUIRE(g_plain.b1 == g_masked.b1);
  REQUIRE(g_plain.b2 == g_masked.b2);
  REQUIRE(loss_plain == loss_masked);
}

TEST_CASE("batch_gradient: matches finite differences of the masked objective") {
  auto [data, teacher] = gen_synth(tiny_spec());
  data.mask = Matrix(data.size(), data.feature_dim());
  RngStream mrng(3, Stream::Init);
  for (double& v : data.mask->data) v = mrng.next_unit() < 0.4 ? 0.0 : 1.0;
  ModelParams p = init_params(mrng, {3, 2, 4, 5}, Activation::LeakyRelu, Activation::LeakyRelu, 0.3);
  RngStream init(3, Stream::Init);
  LatentBank bank = LatentBank::init(init, data.size(), 2, 3);
  std::vector<std::size_t> idx{2};

  auto objective = [&] {  // ascent objective: -1/(2 sigma^2) ||m o (x - g)||^2
    auto x = data.visual.row(2);
    auto g = forward(p, data.attrs.row(data.labels[2]), bank.z.row(2));
    double s = 0.0;
    for (std::size_t k = 0; k < g.size(); ++k) {
      const double r = data.mask->row(2)[k] * (x[k] - g[k]);
      s += r * r;
    }
    return -s / (2.0 * p.sigma * p.sigma);
  };

  auto [g, loss] = batch_gradient(p, data, bank, idx, true);
  for (std::size_t i = 0; i < p.w1.data.size(); ++i) {
    const double numeric = oracle::central_diff(objective, &p.w1.data[i]);
    REQUIRE(oracle::rel_error(g.w1.data[i], numeric) < 1e-6);
  }
  for (std::size_t i = 0; i < p.b2.size(); ++i) {
    const double numeric = oracle::central_diff(objective, &p.b2[i]);
    REQUIRE(oracle::rel_error(g.b2[i], numeric) < 1e-6);
  }
}

TEST_CASE("batch_gradient: fully masked coordinate receives exactly zero gradient") {
  auto [data, teacher] = gen_synth(tiny_spec());
  data.mask = Matrix(data.size(), data.feature_dim());
  for (double& v : data.mask->data) v = 1.0;
  const std::size_t dead = 3;
  for (std::size_t i = 0; i < data.size(); ++i) data.mask->row(i)[dead] = 0.0;
  RngStream rng(4, Stream::Init);
  ModelParams p = init_params(rng, {3, 2, 4, 5});
  RngStream init(4, Stream::Init);
  LatentBank bank = LatentBank::init(init, data.size(), 2, 4);
  std::vector<std::size_t> idx(data.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  auto [g, loss] = batch_gradient(p, data, bank, idx, true);
  REQUIRE(g.b2[dead] == 0.0);
  for (std::size_t j = 0; j < p.w2.rows; ++j) REQUIRE(g.w2(j, dead) == 0.0);
}

TEST_CASE("adam_update: zero learning rate leaves params unchanged") {
  RngStream rng(5, Stream::Init);
  ModelParams p = init_params(rng, {3, 2, 4, 5});
  ModelParams before = p;
  AdamState s = AdamState::zeros_like(p);
  ParamGrads g = ParamGrads::zeros_like(p);
  for (double& v : g.w1.data) v = rng.normal();
  adam_update(p, g, s, 0.0);
  REQUIRE(p == before);
}

TEST_CASE("adam_update: bias-corrected first step has magnitude ~ lr") {
  RngStream rng(6, Stream::Init);
  ModelParams p = init_params(rng, {3, 2, 4, 5});
  ModelParams before = p;
  AdamState s = AdamState::zeros_like(p);
  ParamGrads g = ParamGrads::zeros_like(p);
  for (double& v : g.w1.data) v = rng.normal();
  adam_update(p, g, s, 1e-3);
  for (std::size_t i = 0; i < p.w1.data.size(); ++i) {
    const double step = p.w1.data[i] - before.w1.data[i];
    REQUIRE_THAT(std::abs(step), Catch::Matchers::WithinRel(1e-3, 1e-4));
    // the step moves along the gradient (ascent)
    REQUIRE(step * g.w1.data[i] > 0.0);
  }
}

TEST_CASE("adam_update: three steps match an independent scalar recurrence") {
  // 2-parameter toy tracked by hand with the textbook recurrence
  ModelParams p;
  p.dims = {1, 1, 1, 1};
  p.w1 = Matrix(2, 1);
  p.w1.data = {0.5, -0.25};
  p.b1 = {0.0};
  p.w2 = Matrix(1, 1);
  p.w2.data = {0.0};
  p.b2 = {0.0};
  p.sigma = 0.3;
  AdamState s = AdamState::zeros_like(p);
  const double grads[3][2] = {{0.2, -0.1}, {-0.3, 0.05}, {0.15, 0.25}};
  const double lr = 0.01, b1 = 0.9, b2 = 0.999, eps = 1e-8;

  double theta[2] = {0.5, -0.25}, m[2] = {0, 0}, v[2] = {0, 0};
  for (int t = 1; t <= 3; ++t) {
    ParamGrads g = ParamGrads::zeros_like(p);
    g.w1.data = {grads[t - 1][0], grads[t - 1][1]};
    adam_update(p, g, s, lr, b1, b2, eps);
    for (int i = 0; i < 2; ++i) {
      m[i] = b1 * m[i] + (1 - b1) * grads[t - 1][i];
      v[i] = b2 * v[i] + (1 - b2) * grads[t - 1][i] * grads[t - 1][i];
      theta[i] += lr * (m[i] / (1 - std::pow(b1, t))) / (std::sqrt(v[i] / (1 - std::pow(b2, t))) + eps);
    }
    REQUIRE(p.w1.data[0] == theta[0]);
    REQUIRE(p.w1.data[1] == theta[1]);
  }
}

TEST_CASE("train: zero epochs returns the initialization") {
  auto [data, teacher] = gen_synth(tiny_spec());
  TrainConfig cfg = tiny_cfg();
  cfg.epochs = 0;
  TrainLog log;
  TrainState trained = train(data, cfg, log);
  TrainState fresh = init_train_state(data, cfg);
  REQUIRE(trained.params == fresh.params);
  REQUIRE(trained.bank.z == fresh.bank.z);
  REQUIRE(log.empty());
}

TEST_CASE("train: identical config and seed give bit-identical results") {
  auto [data, teacher] = gen_synth(tiny_spec());
  TrainConfig cfg = tiny_cfg();
  TrainLog l1, l2;
  TrainState a = train(data, cfg, l1);
  TrainState b = train(data, cfg, l2);
  REQUIRE(a.params == b.params);
  REQUIRE(a.bank.z == b.bank.z);
  REQUIRE(a.bank.noise_state == b.bank.noise_state);
}

TEST_CASE("train: resume matches an uninterrupted run bit-exactly") {
  auto [data, teacher] = gen_synth(tiny_spec());
  TrainConfig cfg = tiny_cfg();
  cfg.epochs = 5;
  TrainLog full_log;
  TrainState full = train(data, cfg, full_log);

  TrainState part = init_train_state(data, cfg);
  TrainLog part_log;
  run_epochs(part, data, 3, part_log);
  const auto tmp = fs::temp_directory_path() / "abp_resume_test.abpt";
  save_checkpoint(part, tmp);
  TrainState resumed = load_checkpoint(tmp);
  run_epochs(resumed, data, 2, part_log);
  fs::remove(tmp);

  REQUIRE(resumed.params == full.params);
  REQUIRE(resumed.bank.z == full.bank.z);
  REQUIRE(resumed.bank.noise_state == full.bank.noise_state);
  REQUIRE(resumed.adam.t == full.adam.t);
  REQUIRE(resumed.shuffle_state == full.shuffle_state);
  REQUIRE(resumed.epoch == full.epoch);
}

TEST_CASE("train: reconstruction loss drops on the synthetic teacher data") {
  SynthSpec spec = tiny_spec();
  spec.per_class_train = 30;
  auto [data, teacher] = gen_synth(spec);
  TrainConfig cfg = tiny_cfg();
  cfg.epochs = 15;
  cfg.hidden_dim = 8;
  TrainLog log;
  train(data, cfg, log);
  REQUIRE(log.back().mean_loss < 0.5 * log.front().mean_loss);
}

TEST_CASE("train: defaults match the published constants") {
  TrainConfig cfg;
  REQUIRE(cfg.sigma == 0.3);
  REQUIRE(cfg.langevin.steps == 10);
  REQUIRE(cfg.langevin.step_size == 0.3);
  REQUIRE(cfg.learning_rate == 1e-3);
  REQUIRE(cfg.batch_size == 64);
  REQUIRE(cfg.epochs == 50);
  REQUIRE(cfg.latent_dim == 10);
  REQUIRE(cfg.adam_beta1 == 0.9);
  REQUIRE(cfg.adam_beta2 == 0.999);
}

TEST_CASE("TrainConfig validation rejects bad values") {
  TrainConfig cfg;
  cfg.adam_beta1 = 1.0;
  REQUIRE_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = TrainConfig{};
  cfg.batch_size = 0;
  REQUIRE_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = TrainConfig{};
  cfg.learning_rate = 0.0;
  REQUIRE_THROWS_AS(cfg.validate(), std::invalid_argument);
}
