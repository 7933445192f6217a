// catgrad command line: estimator audits, density tables, gradient checks,
// desk-scale training experiments and the speed benchmark.
#include <cmath>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "catgrad/distributions.hpp"
#include "catgrad/harness.hpp"
#include "catgrad/oracle.hpp"

namespace {

using namespace catgrad;

struct CommonArgs {
  std::string config_path;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string out = "out";
  double scale = 0.0;  // 0: keep config value
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "JSON experiment config");
  cmd->add_option("--seed", args.seed, "master seed override")->each([&](const std::string&) {
    args.seed_set = true;
  });
  cmd->add_option("--out", args.out, "output directory");
  cmd->add_option("--scale", args.scale, "width scale factor override");
}

ExperimentConfig load_config(const CommonArgs& args, const std::string& task) {
  ExperimentConfig config;
  if (!args.config_path.empty()) config = config_from_json_file(args.config_path);
  config.task = task;
  if (args.seed_set) config.master_seed = args.seed;
  if (args.scale > 0) config.scale = args.scale;
  return config;
}

int run_train(const CommonArgs& args, const std::string& task) {
  ExperimentConfig config = load_config(args, task);
  GridResult result = run_grid(config, args.out);
  const RunRecord& best = result.records[result.best_index];
  std::cout << "cells: " << result.records.size() << "\n"
            << "best cell: " << best.cell_id << " (validation " << best.final_validation << ")\n"
            << "reported test metric: " << result.reported_test << "\n"
            << "outputs: " << args.out << "\n";
  return 0;
}

int run_speed(const CommonArgs& args) {
  ExperimentConfig config = load_config(args, "speed");
  std::vector<SpeedRow> rows = run_speed_benchmark(config);
  write_text_file(args.out + "/speed.csv", speed_rows_to_csv(rows));
  for (std::size_t k : config.k_list) {
    std::cout << "k=" << k << " single/marginalize ratio " << speed_ratio_at(rows, k) << "\n";
  }
  std::cout << "outputs: " << args.out << "/speed.csv\n";
  return 0;
}

int run_density(const CommonArgs& args, std::size_t k, std::vector<double> taus,
                std::vector<double> probs, std::size_t grid, std::size_t samples) {
  if (taus.empty()) taus = {0.1, 0.5, 1.0, 10.0};
  if (probs.empty()) probs = k == 2 ? std::vector<double>{0.3, 0.7}
                                    : std::vector<double>{0.2, 0.3, 0.5};
  Tensor logits({probs.size()});
  for (std::size_t i = 0; i < probs.size(); ++i) logits[i] = std::log(probs[i]);
  emit_density_figure_data(k, taus, logits, grid, samples, 12345, args.out);

  CategoricalParams params(logits);
  bool ok = true;
  for (double tau : taus) {
    auto density = [&](const Tensor& y) {
      return std::exp(gumbel_softmax_log_density(y, params, tau));
    };
    // at small tau nearly all mass sits within eps^(1/tau) of the corners,
    // so the boundary margin must shrink with the temperature
    double eps = std::min(1e-9, std::pow(10.0, -6.0 / tau));
    if (k == 3 && tau < 0.4) {
      // the triangle parameterization cannot reach below eps ~ 1e-12
      std::cout << "[SKIP] normalization k=3 tau=" << tau
                << " (mass concentrates inside the quadrature margin)\n";
      continue;
    }
    double integral = simplex_quadrature(density, k, 64, eps);
    double tol = k == 2 ? 1e-4 : (tau < 1.0 ? 1e-2 : 1e-3);
    bool pass = std::abs(integral - 1.0) < tol;
    ok = ok && pass;
    std::cout << (pass ? "[PASS] " : "[FAIL] ") << "normalization k=" << k << " tau=" << tau
              << " integral=" << integral << "\n";
  }
  std::cout << "outputs: " << args.out << "/density.csv, " << args.out << "/sample_means.csv\n";
  return ok ? 0 : 1;
}

int run_audit(const CommonArgs& args, std::uint64_t trials) {
  std::uint64_t seed = args.seed_set ? args.seed : 17;
  Tensor logits3({3}, {std::log(0.2), std::log(0.3), std::log(0.5)});
  EnumerationTestbed lin = categorical_testbed("cat3-linear", logits3, {1.0, 0.4, 0.7});
  CostFn centered_quad = [](Graph& g, Value z) {
    Value d = sub(z, g.constant(Tensor::full({4}, 0.5)));
    return sum_all(mul(g.constant(Tensor({4}, {0.8, -0.3, 0.5, 1.1})), mul(d, d)));
  };
  EnumerationTestbed quad =
      bernoulli_testbed("bern4-quadratic", Tensor({4}, {0.2, -0.4, 0.7, 0.0}), centered_quad);
  CostFn cubic = [](Graph&, Value z) { return sum_all(mul(mul(z, z), z)); };
  EnumerationTestbed cubic_tb =
      bernoulli_testbed("bern1-cubic", Tensor({1}, {std::log(0.3 / 0.7)}), cubic);

  struct Item {
    EstimatorKind kind;
    const EnumerationTestbed* testbed;
    bool expect_unbiased;
  };
  BaselineState centered;
  centered.f_mean = 0.7;
  std::vector<Item> items = {
      {EstimatorKind::Sf, &lin, true},         {EstimatorKind::Nvil, &lin, true},
      {EstimatorKind::MuProp, &lin, true},     {EstimatorKind::MuProp, &quad, true},
      {EstimatorKind::Darn, &quad, true},      {EstimatorKind::Darn, &cubic_tb, false},
      {EstimatorKind::Gs, &lin, false},        {EstimatorKind::St, &lin, false},
  };

  nlohmann::json records = nlohmann::json::array();
  bool ok = true;
  for (const Item& item : items) {
    const BaselineState* state = item.kind == EstimatorKind::Nvil ? &centered : nullptr;
    EstimatorAudit audit = audit_estimator(item.kind, *item.testbed, trials, seed, state);
    records.push_back(nlohmann::json::parse(audit.to_json()));
    bool unbiased = audit.max_abs_z < 3.0;
    bool pass = item.expect_unbiased ? unbiased : true;  // biased ones are informational
    if (item.kind == EstimatorKind::Darn && item.testbed == &cubic_tb) pass = !unbiased;
    ok = ok && pass;
    std::cout << (pass ? "[PASS] " : "[FAIL] ") << audit.estimator << " on " << audit.testbed_id
              << " max|z|=" << audit.max_abs_z << (item.expect_unbiased ? " (unbiased)" : "")
              << "\n";
  }
  write_text_file(args.out + "/audits.json", records.dump(2));
  std::cout << "outputs: " << args.out << "/audits.json\n";
  return ok ? 0 : 1;
}

int run_grad_check(const CommonArgs& args) {
  std::uint64_t seed = args.seed_set ? args.seed : 31;
  bool ok = true;
  auto report = [&](const std::string& name, double rel) {
    bool pass = rel < 1e-5;
    ok = ok && pass;
    std::cout << (pass ? "[PASS] " : "[FAIL] ") << name << " rel_error=" << rel << "\n";
  };

  auto rel_error = [](const Tensor& a, const Tensor& b) {
    double diff = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
      diff += (a[i] - b[i]) * (a[i] - b[i]);
      na += a[i] * a[i];
      nb += b[i] * b[i];
    }
    double denom = std::sqrt(na) + std::sqrt(nb);
    return denom < 1e-12 ? std::sqrt(diff) : std::sqrt(diff) / denom;
  };

  {  // tempered softmax composite
    RngStream rng(seed);
    Tensor theta({4});
    for (std::size_t i = 0; i < 4; ++i) theta[i] = 2.0 * rng.uniform() - 1.0;
    Tensor w({4}, {0.3, -0.2, 0.8, 0.1});
    auto fn = [&](const Tensor& t) {
      Graph g;
      Value x = g.parameter(t);
      return sum_all(mul(tempered_softmax(x, 0, 0.7), g.constant(w))).scalar();
    };
    Graph g;
    Value x = g.parameter(theta);
    auto grads = g.backward(sum_all(mul(tempered_softmax(x, 0, 0.7), g.constant(w))));
    report("tempered_softmax", rel_error(grads.at(x.id), finite_difference(fn, theta)));
  }

  {  // gumbel-softmax sample path with frozen noise
    RngStream rng(seed + 1);
    Tensor theta({4});
    for (std::size_t i = 0; i < 4; ++i) theta[i] = 2.0 * rng.uniform() - 1.0;
    Tensor noise = sample_gumbel({4}, rng);
    Tensor w({4}, {1.0, -0.5, 0.2, 0.9});
    auto build = [&](Graph& g, Value x) {
      OpAttrs attrs;
      attrs.axis = 0;
      attrs.tau = 0.6;
      attrs.noise = noise;
      return g.apply(Op::GumbelSoftmax, {x}, std::move(attrs));
    };
    auto fn = [&](const Tensor& t) {
      Graph g;
      Value x = g.parameter(t);
      return sum_all(mul(build(g, x), g.constant(w))).scalar();
    };
    Graph g;
    Value x = g.parameter(theta);
    auto grads = g.backward(sum_all(mul(build(g, x), g.constant(w))));
    report("gumbel_softmax_path", rel_error(grads.at(x.id), finite_difference(fn, theta)));
  }

  {  // model losses at tiny widths, frozen noise via fixed seeds
    RngStream data_rng(seed + 2);
    Tensor xu(Shape{3, 4}), xl(Shape{3, 4}), x(Shape{3, 4});
    for (std::size_t i = 0; i < 12; ++i) {
      xu[i] = data_rng.uniform() < 0.5 ? 1.0 : 0.0;
      xl[i] = data_rng.uniform() < 0.5 ? 1.0 : 0.0;
      x[i] = data_rng.uniform() < 0.5 ? 1.0 : 0.0;
    }

    SbnConfig scfg;
    scfg.in_dim = 4;
    scfg.out_dim = 4;
    LayerSpec layer;
    layer.kind = LatentKind::Categorical;
    layer.classes = 3;
    layer.groups = 2;
    scfg.latent_layers = {layer};
    RngStream init(seed + 3);
    Sbn sbn(scfg, init);
    EstimatorConfig est{.kind = EstimatorKind::Gs, .tau = 0.8};
    RngStream g1(seed + 4);
    StepResult res = sbn.training_step(xu, xl, est, g1);
    double worst = 0;
    for (std::size_t pi = 0; pi < sbn.params().size(); ++pi) {
      auto fn = [&](const Tensor& t) {
        Tensor saved = sbn.params().value(pi);
        sbn.params().value(pi) = t;
        RngStream r(seed + 4);
        double loss = sbn.training_step(xu, xl, est, r).loss;
        sbn.params().value(pi) = saved;
        return loss;
      };
      worst = std::max(worst, rel_error(res.grads[pi], finite_difference(fn, sbn.params().value(pi))));
    }
    report("sbn_loss", worst);

    VaeConfig vcfg;
    vcfg.x_dim = 4;
    vcfg.latent.kind = LatentKind::Categorical;
    vcfg.latent.classes = 3;
    vcfg.latent.groups = 2;
    RngStream vinit(seed + 5);
    Vae vae(vcfg, vinit);
    RngStream g2(seed + 6);
    StepResult vres = vae.training_step(x, est, g2);
    worst = 0;
    for (std::size_t pi = 0; pi < vae.params().size(); ++pi) {
      auto fn = [&](const Tensor& t) {
        Tensor saved = vae.params().value(pi);
        vae.params().value(pi) = t;
        RngStream r(seed + 6);
        double loss = vae.training_step(x, est, r).loss;
        vae.params().value(pi) = saved;
        return loss;
      };
      worst = std::max(worst, rel_error(vres.grads[pi], finite_difference(fn, vae.params().value(pi))));
    }
    report("vae_elbo", worst);

    for (InferenceMode mode : {InferenceMode::Marginalize, InferenceMode::Gumbel}) {
      SsvaeConfig ccfg;
      ccfg.x_dim = 4;
      ccfg.classes = 3;
      ccfg.style_dim = 2;
      ccfg.hidden = 3;
      ccfg.alpha = 0.3;
      ccfg.mode = mode;
      RngStream cinit(seed + 7);
      Ssvae ssvae(ccfg, cinit);
      Tensor y({3, 3});
      for (std::size_t e = 0; e < 3; ++e) y[e * 3 + e] = 1.0;
      RngStream g3(seed + 8);
      StepResult sres = ssvae.training_step(xu, y, x, 0.9, g3);
      worst = 0;
      for (std::size_t pi = 0; pi < ssvae.params().size(); ++pi) {
        auto fn = [&](const Tensor& t) {
          Tensor saved = ssvae.params().value(pi);
          ssvae.params().value(pi) = t;
          RngStream r(seed + 8);
          double loss = ssvae.training_step(xu, y, x, 0.9, r).loss;
          ssvae.params().value(pi) = saved;
          return loss;
        };
        worst = std::max(worst,
                         rel_error(sres.grads[pi], finite_difference(fn, ssvae.params().value(pi))));
      }
      report(std::string("ssvae_objective_") + inference_mode_name(mode), worst);
    }
  }
  (void)args;
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gumbel-softmax estimator toolkit"};
  app.require_subcommand(1);

  CommonArgs audit_args, density_args, grad_args, sbn_args, vae_args, ssvae_args, speed_args;
  std::uint64_t audit_trials = 20000;
  std::size_t density_k = 2, density_grid = 100, density_samples = 20000;
  std::vector<double> density_taus, density_probs;

  CLI::App* audit = app.add_subcommand("audit", "bias/variance audits vs the enumeration oracle");
  add_common(audit, audit_args);
  audit->add_option("--trials", audit_trials, "Monte Carlo trials per audit");

  CLI::App* density = app.add_subcommand("density", "density tables + normalization checks");
  add_common(density, density_args);
  density->add_option("--k", density_k, "number of classes (2 or 3)");
  density->add_option("--taus", density_taus, "temperatures");
  density->add_option("--probs", density_probs, "class probabilities");
  density->add_option("--grid", density_grid, "grid points per tau");
  density->add_option("--samples", density_samples, "draws per sample-mean row");

  CLI::App* gradcheck = app.add_subcommand("grad-check", "autodiff vs finite differences");
  add_common(gradcheck, grad_args);

  CLI::App* train_sbn = app.add_subcommand("train-sbn", "structured output prediction grid");
  add_common(train_sbn, sbn_args);
  CLI::App* train_vae = app.add_subcommand("train-vae", "discrete-latent VAE grid");
  add_common(train_vae, vae_args);
  CLI::App* train_ssvae = app.add_subcommand("train-ssvae", "semi-supervised VAE grid");
  add_common(train_ssvae, ssvae_args);

  CLI::App* speed = app.add_subcommand("speed", "marginalization vs single-sample steps/sec");
  add_common(speed, speed_args);

  CLI11_PARSE(app, argc, argv);

  try {
    if (audit->parsed()) return run_audit(audit_args, audit_trials);
    if (density->parsed()) {
      return run_density(density_args, density_k, density_taus, density_probs, density_grid,
                         density_samples);
    }
    if (gradcheck->parsed()) return run_grad_check(grad_args);
    if (train_sbn->parsed()) return run_train(sbn_args, "sbn");
    if (train_vae->parsed()) return run_train(vae_args, "vae");
    if (train_ssvae->parsed()) return run_train(ssvae_args, "ssvae");
    if (speed->parsed()) return run_speed(speed_args);
  } catch (const std::exception& e) {
    nlohmann::json err;
    err["error"] = e.what();
    std::cerr << err.dump() << "\n";
    return 1;
  }
  return 1;
}
