// Command-line front end for the feature-to-feature translator pipeline.
//
// Subcommands: gen-synth, train, eval, sweep-synth-count, gradcheck.
// stdout carries machine-readable JSON/CSV only; diagnostics go to stderr.
// Exit codes: 0 ok, 1 I/O failure, 2 usage error, 3 invariant violation.

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "abp/abp.hpp"

namespace {

using nlohmann::json;

constexpr int kExitIo = 1;
constexpr int kExitUsage = 2;
constexpr int kExitInvariant = 3;

struct GenSynthArgs {
  abp::SynthSpec spec;
  std::string out;
};

int run_gen_synth(const GenSynthArgs& a) {
  auto [dataset, teacher] = abp::gen_synth(a.spec);
  abp::save_dataset(dataset, a.out);
  json summary = {
      {"out", a.out},
      {"n", dataset.size()},
      {"feature_dim", dataset.feature_dim()},
      {"attr_dim", dataset.attr_dim()},
      {"num_seen", dataset.seen_classes.size()},
      {"num_unseen", dataset.unseen_classes.size()},
      {"has_mask", dataset.mask.has_value()},
      {"seed", a.spec.seed},
  };
  std::cout << summary.dump() << "\n";
  return 0;
}

struct TrainArgs {
  abp::TrainConfig cfg;
  std::string data;
  std::string out;
  std::string resume;
  std::string output_act = "relu";
  bool no_noise = false;
};

int run_train(const TrainArgs& a) {
  abp::Dataset dataset = abp::load_dataset(a.data);
  abp::TrainConfig cfg = a.cfg;
  cfg.output_act = abp::activation_from_name(a.output_act);
  cfg.langevin.noise_enabled = !a.no_noise;
  cfg.langevin.sigma = cfg.sigma;

  abp::fs::create_directories(a.out);
  std::ofstream log_sink(abp::fs::path(a.out) / "train.log", std::ios::app);

  abp::TrainState state;
  if (!a.resume.empty()) {
    state = abp::load_checkpoint(a.resume);
    state.cfg.epochs = cfg.epochs;  // target epoch count may be extended on resume
  } else {
    state = abp::init_train_state(dataset, cfg);
  }

  abp::TrainLog log;
  const abp::fs::path ckpt = abp::fs::path(a.out) / "checkpoint.abpt";
  try {
    while (state.epoch < state.cfg.epochs) {
      abp::run_epochs(state, dataset, 1, log, &log_sink);
      abp::save_checkpoint(state, ckpt);
      std::cerr << "epoch " << state.epoch << "/" << state.cfg.epochs << " loss "
                << log.back().mean_loss << "\n";
    }
  } catch (...) {
    abp::save_checkpoint(state, abp::fs::path(a.out) / "checkpoint.partial.abpt");
    throw;
  }
  abp::save_checkpoint(state, abp::fs::path(a.out) / "final.abpt");

  json summary = {{"checkpoint", (abp::fs::path(a.out) / "final.abpt").string()},
                  {"epochs", state.epoch},
                  {"final_loss", log.empty() ? 0.0 : log.back().mean_loss},
                  {"config", json(state.cfg)}};
  std::cout << summary.dump() << "\n";
  return 0;
}

struct EvalArgs {
  std::string mode;
  std::string checkpoint;
  std::string data;
  std::size_t per_class = 300;
  std::size_t knn_k = 20;
  std::uint64_t seed = 0;
  abp::SoftmaxConfig softmax;
};

int run_eval(const EvalArgs& a) {
  abp::Dataset dataset = abp::load_dataset(a.data);
  abp::TrainState state = abp::load_checkpoint(a.checkpoint);
  abp::EvalReport rep;
  if (a.mode == "zsl") {
    rep = abp::eval_zsl(state.params, dataset, a.per_class, a.knn_k, a.seed);
  } else {
    rep = abp::eval_gzsl(state.params, dataset, a.per_class, a.seed, a.softmax);
  }
  std::cout << json(rep).dump() << "\n";
  return 0;
}

struct SweepArgs {
  std::string checkpoint;
  std::string data;
  std::vector<std::size_t> per_class_list = {1, 10, 50, 300};
  std::size_t knn_k = 20;
  std::uint64_t seed = 0;
};

int run_sweep(const SweepArgs& a) {
  abp::Dataset dataset = abp::load_dataset(a.data);
  abp::TrainState state = abp::load_checkpoint(a.checkpoint);
  std::cout << "per_class,top1\n";
  for (std::size_t pc : a.per_class_list) {
    abp::EvalReport rep = abp::eval_zsl(state.params, dataset, pc, a.knn_k, a.seed);
    std::cout << pc << "," << rep.top1 << "\n";
  }
  return 0;
}

struct GradcheckArgs {
  std::size_t trials = 10;
  std::uint64_t seed = 1;
  double tolerance = 1e-6;
};

// Central finite differences of the masked reconstruction loss
// L = 1/2 ||m o (x - g(c, z))||^2 against the analytic backward passes.
int run_gradcheck(const GradcheckArgs& a) {
  abp::RngStream rng(a.seed, abp::Stream::Init);
  double worst = 0.0;
  bool ok = true;
  for (std::size_t trial = 0; trial < a.trials; ++trial) {
    abp::Dims dims{2 + rng.next_below(6), 1 + rng.next_below(5), 2 + rng.next_below(6),
                   2 + rng.next_below(6)};
    const abp::Activation out_act =
        trial % 3 == 0 ? abp::Activation::Identity
                       : (trial % 3 == 1 ? abp::Activation::Relu : abp::Activation::LeakyRelu);
    abp::ModelParams p = abp::init_params(rng, dims, abp::Activation::LeakyRelu, out_act, 0.3);
    std::vector<double> c = rng.gaussian(dims.attr_dim);
    std::vector<double> z = rng.gaussian(dims.latent_dim);
    std::vector<double> x = rng.gaussian(dims.feature_dim);
    std::vector<double> mask(dims.feature_dim, 1.0);
    if (trial % 2 == 1) {
      for (double& m : mask) m = rng.next_unit() < 0.3 ? 0.0 : 1.0;
    }

    // finite differences are invalid across an activation kink; shift any
    // pre-activation sitting near zero before differencing
    for (int pass = 0; pass < 8; ++pass) {
      abp::ForwardTrace probe;
      abp::forward(p, c, z, probe);
      bool clean = true;
      for (std::size_t j = 0; j < probe.hidden_pre.size(); ++j) {
        if (std::abs(probe.hidden_pre[j]) < 1e-4) {
          p.b1[j] += probe.hidden_pre[j] >= 0.0 ? 1e-3 : -1e-3;
          clean = false;
        }
      }
      for (std::size_t k = 0; k < probe.output_pre.size(); ++k) {
        if (std::abs(probe.output_pre[k]) < 1e-4) {
          p.b2[k] += probe.output_pre[k] >= 0.0 ? 1e-3 : -1e-3;
          clean = false;
        }
      }
      if (clean) break;
    }

    auto loss = [&](const abp::ModelParams& q, const std::vector<double>& zz) {
      std::vector<double> g = abp::forward(q, c, zz);
      double s = 0.0;
      for (std::size_t k = 0; k < g.size(); ++k) {
        const double r = mask[k] * (x[k] - g[k]);
        s += 0.5 * r * r;
      }
      return s;
    };

    abp::ForwardTrace t;
    abp::forward(p, c, z, t);
    std::vector<double> residual(dims.feature_dim);
    for (std::size_t k = 0; k < residual.size(); ++k) {
      residual[k] = mask[k] * mask[k] * (x[k] - t.output[k]);
    }
    // dL/dtheta = -(dg/dtheta)^T residual, dL/dz likewise
    abp::ParamGrads gt = abp::grad_wrt_theta(p, t, residual);
    std::vector<double> gz = abp::grad_wrt_z(p, t, residual);

    const double step = 1e-6;
    // cancellation noise floor: differences below eps * |f| / step carry
    // no signal at the requested tolerance
    const double fd_floor =
        8.0 * 2.220446049250313e-16 * std::abs(loss(p, z)) / step / a.tolerance;
    auto check = [&](double analytic, double* slot, double base_z_or_theta) {
      (void)base_z_or_theta;
      const double saved = *slot;
      *slot = saved + step;
      const double up = loss(p, z);
      *slot = saved - step;
      const double down = loss(p, z);
      *slot = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double denom = std::max({std::abs(analytic), std::abs(numeric), fd_floor});
      const double rel = std::abs(-analytic - numeric) / denom;
      worst = std::max(worst, rel);
      if (rel >= a.tolerance) ok = false;
    };
    for (std::size_t i = 0; i < p.w1.data.size(); ++i) check(gt.w1.data[i], &p.w1.data[i], 0);
    for (std::size_t i = 0; i < p.b1.size(); ++i) check(gt.b1[i], &p.b1[i], 0);
    for (std::size_t i = 0; i < p.w2.data.size(); ++i) check(gt.w2.data[i], &p.w2.data[i], 0);
    for (std::size_t i = 0; i < p.b2.size(); ++i) check(gt.b2[i], &p.b2[i], 0);
    for (std::size_t j = 0; j < z.size(); ++j) {
      const double saved = z[j];
      z[j] = saved + step;
      const double up = loss(p, z);
      z[j] = saved - step;
      const double down = loss(p, z);
      z[j] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double denom = std::max({std::abs(gz[j]), std::abs(numeric), fd_floor});
      const double rel = std::abs(-gz[j] - numeric) / denom;
      worst = std::max(worst, rel);
      if (rel >= a.tolerance) ok = false;
    }
  }
  json out = {{"trials", a.trials}, {"tolerance", a.tolerance}, {"worst_rel_error", worst},
              {"ok", ok}};
  std::cout << out.dump() << "\n";
  return ok ? 0 : kExitInvariant;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Alternating back-propagation feature-to-feature translator"};
  app.require_subcommand(1);

  GenSynthArgs gen;
  auto* cmd_gen = app.add_subcommand("gen-synth", "Generate a synthetic teacher dataset");
  cmd_gen->add_option("--out", gen.out, "Output dataset directory")->required();
  cmd_gen->add_option("--num-seen", gen.spec.num_seen);
  cmd_gen->add_option("--num-unseen", gen.spec.num_unseen);
  cmd_gen->add_option("--per-class-train", gen.spec.per_class_train);
  cmd_gen->add_option("--per-class-test", gen.spec.per_class_test);
  cmd_gen->add_option("--attr-dim", gen.spec.attr_dim);
  cmd_gen->add_option("--latent-dim", gen.spec.latent_dim);
  cmd_gen->add_option("--feature-dim", gen.spec.feature_dim);
  cmd_gen->add_option("--teacher-hidden", gen.spec.teacher_hidden);
  cmd_gen->add_option("--teacher-gain", gen.spec.teacher_gain);
  cmd_gen->add_option("--teacher-latent-gain", gen.spec.teacher_latent_gain);
  cmd_gen->add_option("--sigma", gen.spec.sigma);
  cmd_gen->add_option("--missing-ratio", gen.spec.missing_ratio);
  cmd_gen->add_option("--seed", gen.spec.seed);

  TrainArgs tr;
  auto* cmd_train = app.add_subcommand("train", "Train the translator");
  cmd_train->add_option("--data", tr.data, "Dataset directory")->required();
  cmd_train->add_option("--out", tr.out, "Output directory")->required();
  cmd_train->add_option("--resume", tr.resume, "Checkpoint to resume from");
  cmd_train->add_option("--epochs", tr.cfg.epochs);
  cmd_train->add_option("--batch-size", tr.cfg.batch_size);
  cmd_train->add_option("--learning-rate", tr.cfg.learning_rate);
  cmd_train->add_option("--adam-beta1", tr.cfg.adam_beta1);
  cmd_train->add_option("--adam-beta2", tr.cfg.adam_beta2);
  cmd_train->add_option("--adam-eps", tr.cfg.adam_eps);
  cmd_train->add_option("--sigma", tr.cfg.sigma);
  cmd_train->add_option("--langevin-steps", tr.cfg.langevin.steps);
  cmd_train->add_option("--step-size", tr.cfg.langevin.step_size);
  cmd_train->add_flag("--no-noise", tr.no_noise, "Disable Langevin noise");
  cmd_train->add_option("--latent-dim", tr.cfg.latent_dim);
  cmd_train->add_option("--hidden-dim", tr.cfg.hidden_dim);
  cmd_train->add_option("--output-act", tr.output_act)
      ->check(CLI::IsMember({"relu", "identity"}));
  cmd_train->add_option("--seed", tr.cfg.seed);
  cmd_train->add_flag("--masked", tr.cfg.masked, "Use the dataset mask in the loss");

  EvalArgs ev;
  auto* cmd_eval = app.add_subcommand("eval", "Evaluate ZSL or GZSL");
  cmd_eval->add_option("mode", ev.mode, "zsl or gzsl")
      ->required()
      ->check(CLI::IsMember({"zsl", "gzsl"}));
  cmd_eval->add_option("--checkpoint", ev.checkpoint)->required();
  cmd_eval->add_option("--data", ev.data)->required();
  cmd_eval->add_option("--per-class", ev.per_class);
  cmd_eval->add_option("--knn-k", ev.knn_k);
  cmd_eval->add_option("--seed", ev.seed);
  cmd_eval->add_option("--softmax-lr", ev.softmax.learning_rate);
  cmd_eval->add_option("--softmax-iterations", ev.softmax.iterations);

  SweepArgs sw;
  auto* cmd_sweep = app.add_subcommand("sweep-synth-count",
                                       "ZSL accuracy vs synthetic features per class (CSV)");
  cmd_sweep->add_option("--checkpoint", sw.checkpoint)->required();
  cmd_sweep->add_option("--data", sw.data)->required();
  cmd_sweep->add_option("--per-class-list", sw.per_class_list)->delimiter(',');
  cmd_sweep->add_option("--knn-k", sw.knn_k);
  cmd_sweep->add_option("--seed", sw.seed);

  GradcheckArgs gc;
  auto* cmd_gc = app.add_subcommand("gradcheck", "Finite-difference gradient check");
  cmd_gc->add_option("--trials", gc.trials);
  cmd_gc->add_option("--seed", gc.seed);
  cmd_gc->add_option("--tolerance", gc.tolerance);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*cmd_gen) return run_gen_synth(gen);
    if (*cmd_train) return run_train(tr);
    if (*cmd_eval) return run_eval(ev);
    if (*cmd_sweep) return run_sweep(sw);
    if (*cmd_gc) return run_gradcheck(gc);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::runtime_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    const std::string msg = e.what();
    const bool io = msg.find("missing file") != std::string::npos ||
                    msg.find("cannot open") != std::string::npos ||
                    msg.find("truncated") != std::string::npos ||
                    msg.find("bad magic") != std::string::npos;
    return io ? kExitIo : kExitInvariant;
  }
  return kExitUsage;
}
