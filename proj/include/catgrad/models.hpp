#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "catgrad/estimators.hpp"
#include "catgrad/graph.hpp"

namespace catgrad {

enum class LatentKind { Bernoulli, Categorical };

/// One stochastic layer: `out` Bernoulli units, or `groups` independent
/// k-way categorical variables one-hot encoded into groups*classes units.
struct LayerSpec {
  std::size_t in = 0;
  std::size_t out = 0;
  LatentKind kind = LatentKind::Bernoulli;
  std::size_t classes = 2;
  std::size_t groups = 1;

  std::size_t units() const;  // width of the sample fed downstream
  void validate() const;
};

/// Flat named parameter collection. Models keep their weights here and bind
/// them into a fresh graph every step.
class ParamStore {
 public:
  std::size_t add(std::string name, Tensor value);
  std::size_t size() const { return values_.size(); }
  Tensor& value(std::size_t i) { return values_[i]; }
  const Tensor& value(std::size_t i) const { return values_[i]; }
  const std::string& name(std::size_t i) const { return names_[i]; }
  std::vector<Tensor>& values() { return values_; }
  const std::vector<Tensor>& values() const { return values_; }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
};

/// Uniform(-b, b) with b = sqrt(6 / (fan_in + fan_out)).
Tensor glorot_uniform(std::size_t fan_in, std::size_t fan_out, Shape shape, RngStream& rng);

struct EstimatorConfig {
  EstimatorKind kind = EstimatorKind::Gs;
  double tau = 1.0;
  double slope = 1.0;
  bool variance_normalize = true;
  double baseline_lr = 1e-3;  // NVIL input-baseline regression step
};

struct StepResult {
  double loss = 0.0;           // objective value, mean per example
  std::vector<Tensor> grads;   // aligned with the model's ParamStore
};

// ---- structured output prediction ------------------------------------------

struct SbnConfig {
  std::size_t in_dim = 0;   // upper-half pixels
  std::size_t out_dim = 0;  // lower-half pixels
  std::vector<LayerSpec> latent_layers;
};

/// Stochastic network predicting the lower image half from the upper half.
class Sbn {
 public:
  Sbn(SbnConfig config, RngStream& init_rng);

  /// Single-sample training objective (mean NLL of the lower half) with
  /// gradients routed through the configured estimator. Score-function
  /// estimators consume/update one BaselineState per latent layer.
  StepResult training_step(const Tensor& x_upper, const Tensor& x_lower,
                           const EstimatorConfig& est, RngStream& rng,
                           std::vector<BaselineState>* baselines = nullptr);

  /// log-mean-exp multi-sample bound on -log p(x_lower | x_upper), averaged
  /// over the batch; samples are discrete.
  double eval_bound(const Tensor& x_upper, const Tensor& x_lower, int m, RngStream& rng) const;

  std::vector<BaselineState> make_baselines(RngStream& rng) const;
  ParamStore& params() { return params_; }
  const SbnConfig& config() const { return config_; }

 private:
  SbnConfig config_;
  ParamStore params_;
};

// ---- VAE with discrete latents ----------------------------------------------

struct VaeConfig {
  std::size_t x_dim = 0;
  LayerSpec latent;  // latent.in is ignored; encoder maps x_dim -> latent params
};

/// VAE with a Bernoulli or grouped-categorical latent layer and a learned
/// prior. The KL term is computed analytically between the discrete
/// distributions even when the sample is relaxed.
class Vae {
 public:
  Vae(VaeConfig config, RngStream& init_rng);

  StepResult training_step(const Tensor& x, const EstimatorConfig& est, RngStream& rng,
                           std::vector<BaselineState>* baselines = nullptr);

  /// Multi-sample importance bound on -log p(x) with discrete samples.
  double eval_bound(const Tensor& x, int m, RngStream& rng) const;

  /// Mean analytic KL(q(z|x) || prior) over the batch; deterministic.
  double kl_term(const Tensor& x) const;

  std::vector<BaselineState> make_baselines(RngStream& rng) const;
  ParamStore& params() { return params_; }
  const VaeConfig& config() const { return config_; }

 private:
  VaeConfig config_;
  ParamStore params_;
};

// ---- semi-supervised VAE -----------------------------------------------------

enum class InferenceMode { Marginalize, Gumbel, StGumbel };
InferenceMode inference_mode_from_name(const std::string& name);
const char* inference_mode_name(InferenceMode mode);

struct SsvaeConfig {
  std::size_t x_dim = 0;
  std::size_t classes = 10;
  std::size_t style_dim = 4;
  std::size_t hidden = 16;
  double alpha = 0.1;
  InferenceMode mode = InferenceMode::Marginalize;
};

/// Kingma-style M2 model: categorical class y, Gaussian style z, uniform
/// class prior. The unlabeled bound is either marginalized exactly over y
/// or estimated from one relaxed sample.
class Ssvae {
 public:
  Ssvae(SsvaeConfig config, RngStream& init_rng);

  /// -L(x, y): single-sample labeled bound for one batch (mean).
  double labeled_bound(const Tensor& x, const Tensor& y_onehot, RngStream& rng) const;
  /// -U(x): unlabeled bound for one batch (mean). Marginalize mode is
  /// deterministic given parameters and x (z uses one reparameterized
  /// sample per class term drawn from `rng`).
  double unlabeled_bound(const Tensor& x, InferenceMode mode, double tau, RngStream& rng) const;
  /// mean log q(y|x) for labeled data.
  double classifier_log_prob(const Tensor& x, const Tensor& y_onehot) const;

  /// J = E[-L] + E[-U] + alpha E[log q(y|x)]; the step minimizes -J.
  StepResult training_step(const Tensor& x_labeled, const Tensor& y_onehot,
                           const Tensor& x_unlabeled, double tau, RngStream& rng);

  /// Fraction of labeled examples whose classifier argmax matches y.
  double classifier_accuracy(const Tensor& x, const std::vector<int>& labels) const;

  ParamStore& params() { return params_; }
  const SsvaeConfig& config() const { return config_; }

 private:
  SsvaeConfig config_;
  ParamStore params_;
};

/// Measured per-component costs of one forward/backward step, seconds.
struct SsvaeStepCosts {
  double classifier = 0;  // D
  double inference = 0;   // I
  double generative = 0;  // G
};

SsvaeStepCosts measure_step_costs(Ssvae& model, const Tensor& x, std::size_t reps = 5);

/// Predicted marginalize / single-sample steps-per-second ratio,
/// (D + k(I+G)) / (D + I + G).
double predicted_speed_ratio(const SsvaeStepCosts& costs, std::size_t k);

}  // namespace catgrad
