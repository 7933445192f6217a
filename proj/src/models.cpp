#include "catgrad/models.hpp"

#include <chrono>
#include <cmath>

namespace catgrad {

std::size_t LayerSpec::units() const {
  return kind == LatentKind::Bernoulli ? out : groups * classes;
}

void LayerSpec::validate() const {
  if (in == 0) throw Error("layer: input dim must be positive");
  if (kind == LatentKind::Bernoulli) {
    if (out == 0) throw Error("layer: output dim must be positive");
  } else {
    if (classes < 2 || groups == 0) throw Error("layer: categorical needs k>=2 and groups>=1");
    if (out != 0 && out != groups * classes) {
      throw Error("layer: categorical out must equal groups*classes");
    }
  }
}

std::size_t ParamStore::add(std::string name, Tensor value) {
  names_.push_back(std::move(name));
  values_.push_back(std::move(value));
  return values_.size() - 1;
}

Tensor glorot_uniform(std::size_t fan_in, std::size_t fan_out, Shape shape, RngStream& rng) {
  double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = (2.0 * rng.uniform() - 1.0) * bound;
  return t;
}

namespace {

constexpr double kProbClamp = 1e-7;

enum class ForwardMode { Sampled, MeanField, MeanFieldHalf };

struct LayerTap {
  LayerSpec spec;
  Value pre_act;  // bernoulli: [batch, out]; categorical: [batch, groups, k]
  Value sample;   // same shape as pre_act
};

std::vector<Value> bind_params(Graph& g, const ParamStore& store) {
  std::vector<Value> bound;
  bound.reserve(store.size());
  for (std::size_t i = 0; i < store.size(); ++i) bound.push_back(g.parameter(store.value(i)));
  return bound;
}

Value affine(Graph&, Value x, Value w, Value b) { return add(matmul(x, w), b); }

Value negate(Value x) { return mul(x, x.graph->constant_scalar(-1.0)); }

/// Per-example Bernoulli NLL of `target` under probabilities
/// clamp(sigmoid(logits)); returns a [batch] vector node.
Value bernoulli_nll_vec(Graph& g, Value logits, const Tensor& target) {
  Value t = g.constant(target);
  Value one = g.constant_scalar(1.0);
  Value p = clamp(sigmoid(logits), kProbClamp, 1.0 - kProbClamp);
  Value ll = add(mul(t, log_op(p)), mul(sub(one, t), log_op(sub(one, p))));
  return negate(sum(ll, 1));
}

/// Samples (or mean-field-substitutes) one stochastic layer and feeds a
/// [batch, units] tensor downstream. `a` is the [batch, units] pre-activation.
Value stochastic_layer(Graph& g, Value a, const LayerSpec& spec, const EstimatorConfig& est,
                       ForwardMode mode, RngStream* rng, std::vector<LayerTap>* taps) {
  std::size_t batch = a.shape()[0];
  if (spec.kind == LatentKind::Bernoulli) {
    Value sample{};
    if (mode == ForwardMode::MeanFieldHalf) {
      sample = g.constant(Tensor::full({batch, spec.out}, 0.5));
    } else if (mode == ForwardMode::MeanField) {
      sample = sigmoid(a);
    } else {
      switch (est.kind) {
        case EstimatorKind::Gs: sample = binary_concrete_node(a, est.tau, *rng); break;
        case EstimatorKind::StGs: sample = st_binary_concrete_node(a, est.tau, *rng); break;
        case EstimatorKind::St: sample = st_bernoulli_node(a, 1.0, *rng); break;
        case EstimatorKind::StSlope: sample = st_bernoulli_node(a, est.slope, *rng); break;
        default: sample = bernoulli_sample_node(a, *rng); break;
      }
    }
    if (taps) taps->push_back({spec, a, sample});
    return sample;
  }

  Value a3 = reshape(a, {batch, spec.groups, spec.classes});
  Value z3{};
  if (mode == ForwardMode::MeanField || mode == ForwardMode::MeanFieldHalf) {
    z3 = softmax(a3, 2);
  } else {
    switch (est.kind) {
      case EstimatorKind::Gs: z3 = gumbel_softmax_node(a3, 2, est.tau, *rng); break;
      case EstimatorKind::StGs: z3 = st_gumbel_softmax_node(a3, 2, est.tau, *rng); break;
      case EstimatorKind::St: z3 = st_categorical_node(a3, 2, *rng, 1.0); break;
      case EstimatorKind::StSlope: z3 = st_categorical_node(a3, 2, *rng, est.slope); break;
      default: z3 = categorical_sample_node(a3, 2, *rng); break;
    }
  }
  if (taps) taps->push_back({spec, a3, z3});
  return reshape(z3, {batch, spec.groups * spec.classes});
}

/// Per-example log p(z | pre-activation) for one tapped layer, [batch].
Value layer_log_prob(const LayerTap& tap) {
  if (tap.spec.kind == LatentKind::Bernoulli) {
    // z*a - softplus(a)
    return sum(sub(mul(tap.sample, tap.pre_act), softplus(tap.pre_act)), 1);
  }
  Value dotted = sum(sum(mul(tap.sample, tap.pre_act), 2), 1);
  Value norm = sum(log_sum_exp(tap.pre_act, 2), 1);
  return sub(dotted, norm);
}

using ForwardBuilder =
    std::function<Value(Graph&, const std::vector<Value>&, std::vector<LayerTap>*, ForwardMode,
                        RngStream*, Value*)>;

bool is_score_estimator(EstimatorKind kind) { return !estimator_is_pathwise(kind); }

/// Shared training-step driver. Pathwise estimators backprop the loss
/// directly; score-function estimators get a per-layer surrogate term with
/// the configured baseline (moving average, input net, or Taylor).
StepResult run_training_step(ParamStore& store, const ForwardBuilder& forward,
                             const EstimatorConfig& est, RngStream& rng,
                             std::vector<BaselineState>* baselines,
                             const Tensor& baseline_input) {
  Graph g;
  std::vector<Value> bound = bind_params(g, store);
  std::vector<LayerTap> taps;
  Value signal_vec{};
  Value cost_vec = forward(g, bound, &taps, ForwardMode::Sampled, &rng, &signal_vec);
  std::size_t batch = cost_vec.shape()[0];
  Value loss_node = mean(cost_vec, 0);

  StepResult result;
  result.loss = loss_node.scalar();

  if (!is_score_estimator(est.kind)) {
    auto grads = g.backward(loss_node);
    result.grads.reserve(store.size());
    for (std::size_t i = 0; i < store.size(); ++i) result.grads.push_back(grads.at(bound[i].id));
    return result;
  }

  // ---- score-function route --------------------------------------------
  Tensor f = signal_vec.tensor();  // learning signal per example
  if (baselines && !baselines->empty() && baselines->size() != taps.size()) {
    throw Error("training_step: one baseline state per stochastic layer expected");
  }

  // Mean-field pass for the Taylor-expanded baselines (DARN / MuProp).
  bool taylor = est.kind == EstimatorKind::Darn || est.kind == EstimatorKind::MuProp;
  std::vector<Tensor> f_prime;  // adjoint of each mean-field sample node
  std::vector<Tensor> zbar;     // expansion points
  Tensor f_mf;                  // mean-field signal per example
  std::vector<Tensor> mu_b_grads;
  if (taylor) {
    Graph mf;
    std::vector<Value> mf_bound = bind_params(mf, store);
    std::vector<LayerTap> mf_taps;
    Value mf_signal{};
    ForwardMode mode = est.kind == EstimatorKind::Darn ? ForwardMode::MeanFieldHalf
                                                       : ForwardMode::MeanField;
    forward(mf, mf_bound, &mf_taps, mode, nullptr, &mf_signal);
    f_mf = mf_signal.tensor();
    mf.backward(sum_all(mf_signal));
    for (const LayerTap& tap : mf_taps) {
      f_prime.push_back(mf.adjoint_of(tap.sample));
      zbar.push_back(tap.sample.tensor());
    }
    if (est.kind == EstimatorKind::MuProp) {
      // mu_b = sum_l f'(zbar_l)^T dmu_l/dtheta: seed a second mean-field
      // pass with the frozen f' so only the distribution-parameter paths
      // contribute (the cost's own parameters stay out).
      Graph mb;
      std::vector<Value> mb_bound = bind_params(mb, store);
      std::vector<LayerTap> mb_taps;
      Value mb_signal{};
      forward(mb, mb_bound, &mb_taps, ForwardMode::MeanField, nullptr, &mb_signal);
      Value seeded{};
      for (std::size_t l = 0; l < mb_taps.size(); ++l) {
        Value term = sum_all(mul(mb_taps[l].sample, mb.constant(f_prime[l])));
        seeded = l == 0 ? term : add(seeded, term);
      }
      auto mb_grads = mb.backward(seeded);
      for (std::size_t i = 0; i < store.size(); ++i) {
        Tensor grad = mb_grads.at(mb_bound[i].id);
        scale_inplace(grad, 1.0 / static_cast<double>(batch));
        mu_b_grads.push_back(std::move(grad));
      }
    }
  }

  Value surrogate = loss_node;
  std::vector<Value> nvil_net_params;
  for (std::size_t l = 0; l < taps.size(); ++l) {
    BaselineState* state = (baselines && !baselines->empty()) ? &(*baselines)[l] : nullptr;
    double sigma_div = 1.0;
    if (state && (est.variance_normalize || est.kind == EstimatorKind::Nvil)) {
      sigma_div = std::max(1.0, state->sigma());
    }

    Tensor coeff({batch});
    double mean_signal = 0;
    for (std::size_t e = 0; e < batch; ++e) {
      double b = 0.0;
      if (est.kind == EstimatorKind::Sf || est.kind == EstimatorKind::Nvil) {
        b = state ? state->f_mean : 0.0;
      }
      if (taylor) {
        b = f_mf[e];
        const Tensor& fp = f_prime[l];
        const Tensor& zb = zbar[l];
        const Tensor& z = taps[l].sample.tensor();
        std::size_t per = fp.numel() / batch;
        for (std::size_t u = 0; u < per; ++u) {
          b += fp[e * per + u] * (z[e * per + u] - zb[e * per + u]);
        }
      }
      coeff[e] = (f[e] - b) / static_cast<double>(batch) / sigma_div;
      mean_signal += f[e] / static_cast<double>(batch);
    }

    if (est.kind == EstimatorKind::Nvil && state && state->has_net()) {
      // subtract the input baseline and attach its regression branch
      Value xin = g.constant(baseline_input);
      Value w1 = g.parameter(state->w1);
      Value b1 = g.parameter(state->b1);
      Value w2 = g.parameter(state->w2);
      Value b2 = g.parameter(state->b2);
      Value h = tanh_op(add(matmul(xin, w1), b1));
      Value net = add(sum(mul(h, w2), 1), b2);  // [batch]
      Tensor net_vals = net.tensor();
      Tensor targets({batch});
      for (std::size_t e = 0; e < batch; ++e) {
        coeff[e] -= net_vals[e] / static_cast<double>(batch) / sigma_div;
        targets[e] = f[e] - state->f_mean;
      }
      Value resid = sub(g.constant(targets), net);
      surrogate = add(surrogate, mean(mul(resid, resid), 0));
      nvil_net_params.insert(nvil_net_params.end(), {w1, b1, w2, b2});
    }

    surrogate = add(surrogate, sum(mul(g.constant(coeff), layer_log_prob(taps[l])), 0));
    if (state) *state = updated_baseline(*state, mean_signal);
  }

  auto grads = g.backward(surrogate);
  result.grads.reserve(store.size());
  for (std::size_t i = 0; i < store.size(); ++i) result.grads.push_back(grads.at(bound[i].id));
  if (!mu_b_grads.empty()) {
    for (std::size_t i = 0; i < store.size(); ++i) add_inplace(result.grads[i], mu_b_grads[i]);
  }

  // one plain gradient step on the NVIL regression nets
  if (!nvil_net_params.empty() && baselines) {
    std::size_t idx = 0;
    for (std::size_t l = 0; l < taps.size(); ++l) {
      BaselineState* state = &(*baselines)[l];
      if (!state->has_net()) continue;
      Tensor* dst[4] = {&state->w1, &state->b1, &state->w2, &state->b2};
      for (int p = 0; p < 4; ++p) {
        axpy_inplace(*dst[p], -est.baseline_lr, grads.at(nvil_net_params[idx + p].id));
      }
      idx += 4;
    }
  }
  return result;
}

// ---- tensor-level forward helpers for evaluation ---------------------------

Tensor t_affine(const Tensor& x, const Tensor& w, const Tensor& b) {
  std::size_t n = x.rows(), d = x.cols(), u = w.cols();
  if (w.rows() != d) throw Error("affine: shape mismatch");
  Tensor out({n, u});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < d; ++p) {
      double xv = x[i * d + p];
      if (xv == 0) continue;
      for (std::size_t j = 0; j < u; ++j) out[i * u + j] += xv * w[p * u + j];
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < u; ++j) out[i * u + j] += b[j];
  }
  return out;
}

double sigmoid_scalar(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  double e = std::exp(v);
  return e / (1.0 + e);
}

/// Discrete draw given [batch, units] pre-activations; optionally
/// accumulates the log prob of the draw per example.
Tensor draw_layer(const Tensor& a, const LayerSpec& spec, RngStream& rng,
                  std::vector<double>* log_prob) {
  std::size_t batch = a.rows(), units = a.cols();
  Tensor z({batch, units});
  if (spec.kind == LatentKind::Bernoulli) {
    for (std::size_t e = 0; e < batch; ++e) {
      for (std::size_t u = 0; u < units; ++u) {
        double p = sigmoid_scalar(a[e * units + u]);
        bool on = rng.uniform() < p;
        z[e * units + u] = on ? 1.0 : 0.0;
        if (log_prob) (*log_prob)[e] += std::log(on ? p : 1.0 - p);
      }
    }
    return z;
  }
  std::size_t k = spec.classes;
  for (std::size_t e = 0; e < batch; ++e) {
    for (std::size_t grp = 0; grp < spec.groups; ++grp) {
      const double* lane = a.data().data() + e * units + grp * k;
      double best = -std::numeric_limits<double>::infinity();
      std::size_t arg = 0;
      for (std::size_t c = 0; c < k; ++c) {
        double v = lane[c] + rng.gumbel();
        if (v > best) {
          best = v;
          arg = c;
        }
      }
      z[e * units + grp * k + arg] = 1.0;
      if (log_prob) {
        double lse = log_sum_exp_span(std::span<const double>(lane, k));
        (*log_prob)[e] += lane[arg] - lse;
      }
    }
  }
  return z;
}

void bernoulli_log_lik_rows(const Tensor& logits, const Tensor& target,
                            std::vector<double>& out) {
  std::size_t n = logits.rows(), d = logits.cols();
  for (std::size_t e = 0; e < n; ++e) {
    double ll = 0;
    for (std::size_t j = 0; j < d; ++j) {
      double p = std::clamp(sigmoid_scalar(logits[e * d + j]), kProbClamp, 1.0 - kProbClamp);
      ll += target[e * d + j] == 1.0 ? std::log(p) : std::log(1.0 - p);
    }
    out[e] += ll;
  }
}

}  // namespace

// ---- Sbn --------------------------------------------------------------------

Sbn::Sbn(SbnConfig config, RngStream& init_rng) : config_(std::move(config)) {
  if (config_.in_dim == 0 || config_.out_dim == 0 || config_.latent_layers.empty()) {
    throw Error("sbn: need input/output dims and at least one latent layer");
  }
  std::size_t prev = config_.in_dim;
  for (std::size_t l = 0; l < config_.latent_layers.size(); ++l) {
    LayerSpec& spec = config_.latent_layers[l];
    spec.in = prev;
    spec.validate();
    std::size_t width = spec.units();
    params_.add("w" + std::to_string(l), glorot_uniform(prev, width, {prev, width}, init_rng));
    params_.add("b" + std::to_string(l), Tensor({width}));
    prev = width;
  }
  params_.add("w_out", glorot_uniform(prev, config_.out_dim, {prev, config_.out_dim}, init_rng));
  params_.add("b_out", Tensor({config_.out_dim}));
}

std::vector<BaselineState> Sbn::make_baselines(RngStream& rng) const {
  std::vector<BaselineState> states;
  for (std::size_t l = 0; l < config_.latent_layers.size(); ++l) {
    states.push_back(make_baseline_state(config_.in_dim, 8, rng));
  }
  return states;
}

StepResult Sbn::training_step(const Tensor& x_upper, const Tensor& x_lower,
                              const EstimatorConfig& est, RngStream& rng,
                              std::vector<BaselineState>* baselines) {
  ForwardBuilder forward = [&](Graph& g, const std::vector<Value>& p,
                               std::vector<LayerTap>* taps, ForwardMode mode, RngStream* r,
                               Value* signal_out) -> Value {
    Value h = g.constant(x_upper);
    std::size_t pi = 0;
    for (const LayerSpec& spec : config_.latent_layers) {
      Value a = affine(g, h, p[pi], p[pi + 1]);
      pi += 2;
      h = stochastic_layer(g, a, spec, est, mode, r, taps);
    }
    Value out_logits = affine(g, h, p[pi], p[pi + 1]);
    Value nll = bernoulli_nll_vec(g, out_logits, x_lower);
    if (signal_out) *signal_out = nll;
    return nll;
  };
  return run_training_step(params_, forward, est, rng, baselines, x_upper);
}

double Sbn::eval_bound(const Tensor& x_upper, const Tensor& x_lower, int m,
                       RngStream& rng) const {
  if (m < 1) throw Error("sbn eval: m must be >= 1");
  std::size_t batch = x_upper.rows();
  std::vector<std::vector<double>> log_w(batch, std::vector<double>(static_cast<std::size_t>(m)));
  for (int s = 0; s < m; ++s) {
    Tensor h = x_upper;
    std::size_t pi = 0;
    for (const LayerSpec& spec : config_.latent_layers) {
      Tensor a = t_affine(h, params_.value(pi), params_.value(pi + 1));
      pi += 2;
      h = draw_layer(a, spec, rng, nullptr);
    }
    Tensor out_logits = t_affine(h, params_.value(pi), params_.value(pi + 1));
    std::vector<double> ll(batch, 0.0);
    bernoulli_log_lik_rows(out_logits, x_lower, ll);
    for (std::size_t e = 0; e < batch; ++e) log_w[e][static_cast<std::size_t>(s)] = ll[e];
  }
  double total = 0;
  for (std::size_t e = 0; e < batch; ++e) {
    total += log_sum_exp_span(log_w[e]) - std::log(static_cast<double>(m));
  }
  return -total / static_cast<double>(batch);
}

// ---- Vae --------------------------------------------------------------------

namespace {

/// Analytic KL between the encoder distribution (pre-activations `a`) and
/// the learned prior (parameter logits), per example.
Value discrete_kl_vec(Graph& g, Value a, Value prior, const LayerSpec& spec) {
  std::size_t batch = a.shape()[0];
  if (spec.kind == LatentKind::Bernoulli) {
    Value q = sigmoid(a);
    Value one = g.constant_scalar(1.0);
    // q*(softplus(-b) - softplus(-a)) + (1-q)*(softplus(b) - softplus(a))
    Value term_on = mul(q, sub(softplus(negate(prior)), softplus(negate(a))));
    Value term_off = mul(sub(one, q), sub(softplus(prior), softplus(a)));
    return sum(add(term_on, term_off), 1);
  }
  Value a3 = reshape(a, {batch, spec.groups, spec.classes});
  Value q = softmax(a3, 2);
  Value prior3 = reshape(prior, {spec.groups, spec.classes});
  // per group: sum_i q_i (a_i - b_i) - lse(a) + lse(b)
  Value dotted = sum(mul(q, sub(a3, prior3)), 2);    // [batch, groups]
  Value lse_q = log_sum_exp(a3, 2);                  // [batch, groups]
  Value lse_p = log_sum_exp(prior3, 1);              // [groups]
  Value per_group = add(sub(dotted, lse_q), lse_p);  // suffix broadcast
  return sum(per_group, 1);
}

}  // namespace

Vae::Vae(VaeConfig config, RngStream& init_rng) : config_(std::move(config)) {
  if (config_.x_dim == 0) throw Error("vae: x_dim must be positive");
  config_.latent.in = config_.x_dim;
  config_.latent.validate();
  std::size_t width = config_.latent.units();
  params_.add("w_enc", glorot_uniform(config_.x_dim, width, {config_.x_dim, width}, init_rng));
  params_.add("b_enc", Tensor({width}));
  params_.add("w_dec", glorot_uniform(width, config_.x_dim, {width, config_.x_dim}, init_rng));
  params_.add("b_dec", Tensor({config_.x_dim}));
  params_.add("prior", Tensor({width}));
}

std::vector<BaselineState> Vae::make_baselines(RngStream& rng) const {
  return {make_baseline_state(config_.x_dim, 8, rng)};
}

StepResult Vae::training_step(const Tensor& x, const EstimatorConfig& est, RngStream& rng,
                              std::vector<BaselineState>* baselines) {
  ForwardBuilder forward = [&](Graph& g, const std::vector<Value>& p,
                               std::vector<LayerTap>* taps, ForwardMode mode, RngStream* r,
                               Value* signal_out) -> Value {
    Value xin = g.constant(x);
    Value a = affine(g, xin, p[0], p[1]);
    Value z = stochastic_layer(g, a, config_.latent, est, mode, r, taps);
    Value dec_logits = affine(g, z, p[2], p[3]);
    Value recon = bernoulli_nll_vec(g, dec_logits, x);
    Value kl = discrete_kl_vec(g, a, p[4], config_.latent);
    if (signal_out) *signal_out = recon;
    return add(recon, kl);
  };
  return run_training_step(params_, forward, est, rng, baselines, x);
}

double Vae::kl_term(const Tensor& x) const {
  Graph g;
  std::vector<Value> p = bind_params(g, params_);
  Value a = affine(g, g.constant(x), p[0], p[1]);
  return mean(discrete_kl_vec(g, a, p[4], config_.latent), 0).scalar();
}

double Vae::eval_bound(const Tensor& x, int m, RngStream& rng) const {
  if (m < 1) throw Error("vae eval: m must be >= 1");
  std::size_t batch = x.rows();
  Tensor a = t_affine(x, params_.value(0), params_.value(1));
  const Tensor& prior = params_.value(4);
  std::size_t units = config_.latent.units();

  auto prior_log_prob = [&](const Tensor& z, std::size_t e) {
    double lp = 0;
    if (config_.latent.kind == LatentKind::Bernoulli) {
      for (std::size_t u = 0; u < units; ++u) {
        double p = sigmoid_scalar(prior[u]);
        lp += z[e * units + u] == 1.0 ? std::log(p) : std::log1p(-p);
      }
    } else {
      std::size_t k = config_.latent.classes;
      for (std::size_t grp = 0; grp < config_.latent.groups; ++grp) {
        std::span<const double> lane(prior.data().data() + grp * k, k);
        double lse = log_sum_exp_span(lane);
        for (std::size_t c = 0; c < k; ++c) {
          if (z[e * units + grp * k + c] == 1.0) lp += lane[c] - lse;
        }
      }
    }
    return lp;
  };

  std::vector<std::vector<double>> log_w(batch, std::vector<double>(static_cast<std::size_t>(m)));
  for (int s = 0; s < m; ++s) {
    std::vector<double> q_ll(batch, 0.0);
    Tensor z = draw_layer(a, config_.latent, rng, &q_ll);
    Tensor dec_logits = t_affine(z, params_.value(2), params_.value(3));
    std::vector<double> ll(batch, 0.0);
    bernoulli_log_lik_rows(dec_logits, x, ll);
    for (std::size_t e = 0; e < batch; ++e) {
      log_w[e][static_cast<std::size_t>(s)] = ll[e] + prior_log_prob(z, e) - q_ll[e];
    }
  }
  double total = 0;
  for (std::size_t e = 0; e < batch; ++e) {
    total += log_sum_exp_span(log_w[e]) - std::log(static_cast<double>(m));
  }
  return -total / static_cast<double>(batch);
}

// ---- Ssvae ------------------------------------------------------------------

InferenceMode inference_mode_from_name(const std::string& name) {
  if (name == "marginalize") return InferenceMode::Marginalize;
  if (name == "gumbel") return InferenceMode::Gumbel;
  if (name == "st_gumbel") return InferenceMode::StGumbel;
  throw Error("unknown inference mode: " + name);
}

const char* inference_mode_name(InferenceMode mode) {
  switch (mode) {
    case InferenceMode::Marginalize: return "marginalize";
    case InferenceMode::Gumbel: return "gumbel";
    case InferenceMode::StGumbel: return "st_gumbel";
  }
  return "?";
}

Ssvae::Ssvae(SsvaeConfig config, RngStream& init_rng) : config_(std::move(config)) {
  // classes == 1 is degenerate but allowed: the speed benchmark compares
  // marginalization against single-sample inference starting from k = 1.
  if (config_.x_dim == 0 || config_.classes < 1 || config_.style_dim == 0) {
    throw Error("ssvae: invalid dimensions");
  }
  std::size_t x = config_.x_dim, k = config_.classes, s = config_.style_dim, h = config_.hidden;
  params_.add("cls_w1", glorot_uniform(x, h, {x, h}, init_rng));
  params_.add("cls_b1", Tensor({h}));
  params_.add("cls_w2", glorot_uniform(h, k, {h, k}, init_rng));
  params_.add("cls_b2", Tensor({k}));
  params_.add("inf_w1", glorot_uniform(x + k, h, {x + k, h}, init_rng));
  params_.add("inf_b1", Tensor({h}));
  params_.add("inf_wmu", glorot_uniform(h, s, {h, s}, init_rng));
  params_.add("inf_bmu", Tensor({s}));
  params_.add("inf_wls", glorot_uniform(h, s, {h, s}, init_rng));
  params_.add("inf_bls", Tensor({s}));
  params_.add("dec_w1", glorot_uniform(k + s, h, {k + s, h}, init_rng));
  params_.add("dec_b1", Tensor({h}));
  params_.add("dec_w2", glorot_uniform(h, x, {h, x}, init_rng));
  params_.add("dec_b2", Tensor({x}));
}

namespace {

struct SsvaeNodes {
  std::vector<Value> p;
  Value x;  // [batch, x_dim]
};

Value classifier_logits(Graph& g, const SsvaeNodes& n) {
  Value h = tanh_op(affine(g, n.x, n.p[0], n.p[1]));
  return affine(g, h, n.p[2], n.p[3]);
}

/// -L(x, y) per example: recon log-lik - Gaussian KL - log k, with one
/// reparameterized style sample. `y` may be one-hot or simplex-interior.
Value labeled_bound_vec(Graph& g, const SsvaeNodes& n, Value y, const Tensor& x_target,
                        std::size_t classes, RngStream& rng) {
  Value inf_in = concat({n.x, y}, 1);
  Value h = tanh_op(affine(g, inf_in, n.p[4], n.p[5]));
  Value mu = affine(g, h, n.p[6], n.p[7]);
  Value log_sigma = affine(g, h, n.p[8], n.p[9]);
  Value sigma = exp_op(log_sigma);
  Value z = gaussian_reparam_node(mu, sigma, rng);

  Value dec_in = concat({y, z}, 1);
  Value h2 = tanh_op(affine(g, dec_in, n.p[10], n.p[11]));
  Value x_logits = affine(g, h2, n.p[12], n.p[13]);
  Value recon_ll = negate(bernoulli_nll_vec(g, x_logits, x_target));

  // KL(N(mu, sigma^2) || N(0,1)) = 0.5(sigma^2 + mu^2 - 1) - log sigma
  Value half = g.constant_scalar(0.5);
  Value kl_terms =
      sub(mul(half, sub(add(mul(sigma, sigma), mul(mu, mu)), g.constant_scalar(1.0))), log_sigma);
  Value kl = sum(kl_terms, 1);

  Value log_prior_y = g.constant_scalar(-std::log(static_cast<double>(classes)));
  return add(sub(recon_ll, kl), log_prior_y);
}

/// Entropy of q(y|x) per example.
Value entropy_vec(Value q_logits) {
  Value probs = softmax(q_logits, 1);
  return sub(log_sum_exp(q_logits, 1), sum(mul(probs, q_logits), 1));
}

Value one_hot_rows_const(Graph& g, std::size_t batch, std::size_t k, std::size_t cls) {
  Tensor y({batch, k});
  for (std::size_t e = 0; e < batch; ++e) y[e * k + cls] = 1.0;
  return g.constant(y);
}

/// -U(x) per example for the requested inference mode.
Value unlabeled_bound_vec(Graph& g, const SsvaeNodes& n, const Tensor& x, std::size_t classes,
                          InferenceMode mode, double tau, RngStream& rng) {
  std::size_t batch = x.rows();
  Value q_logits = classifier_logits(g, n);
  Value entropy = entropy_vec(q_logits);
  if (mode == InferenceMode::Marginalize) {
    Value probs = softmax(q_logits, 1);
    Value acc{};
    for (std::size_t cls = 0; cls < classes; ++cls) {
      Value y = one_hot_rows_const(g, batch, classes, cls);
      Value neg_l = labeled_bound_vec(g, n, y, x, classes, rng);
      Value w = reshape(slice(probs, 1, cls, cls + 1), {batch});
      Value term = mul(w, neg_l);
      acc = cls == 0 ? term : add(acc, term);
    }
    return add(acc, entropy);
  }
  Value y = mode == InferenceMode::Gumbel ? gumbel_softmax_node(q_logits, 1, tau, rng)
                                          : st_gumbel_softmax_node(q_logits, 1, tau, rng);
  Value neg_l = labeled_bound_vec(g, n, y, x, classes, rng);
  return add(neg_l, entropy);
}

Value log_q_vec(Graph& g, const SsvaeNodes& n, const Tensor& y_onehot) {
  Value q_logits = classifier_logits(g, n);
  Value y = g.constant(y_onehot);
  return sub(sum(mul(y, q_logits), 1), log_sum_exp(q_logits, 1));
}

}  // namespace

double Ssvae::labeled_bound(const Tensor& x, const Tensor& y_onehot, RngStream& rng) const {
  Graph g;
  SsvaeNodes n{bind_params(g, params_), {}};
  n.x = g.constant(x);
  Value y = g.constant(y_onehot);
  Value bound = labeled_bound_vec(g, n, y, x, config_.classes, rng);
  return mean(bound, 0).scalar();
}

double Ssvae::unlabeled_bound(const Tensor& x, InferenceMode mode, double tau,
                              RngStream& rng) const {
  Graph g;
  SsvaeNodes n{bind_params(g, params_), {}};
  n.x = g.constant(x);
  Value bound = unlabeled_bound_vec(g, n, x, config_.classes, mode, tau, rng);
  return mean(bound, 0).scalar();
}

double Ssvae::classifier_log_prob(const Tensor& x, const Tensor& y_onehot) const {
  Graph g;
  SsvaeNodes n{bind_params(g, params_), {}};
  n.x = g.constant(x);
  return mean(log_q_vec(g, n, y_onehot), 0).scalar();
}

StepResult Ssvae::training_step(const Tensor& x_labeled, const Tensor& y_onehot,
                                const Tensor& x_unlabeled, double tau, RngStream& rng) {
  Graph g;
  std::vector<Value> bound = bind_params(g, params_);

  SsvaeNodes lab{bound, g.constant(x_labeled)};
  Value neg_l = labeled_bound_vec(g, lab, g.constant(y_onehot), x_labeled, config_.classes, rng);
  Value log_q = log_q_vec(g, lab, y_onehot);

  SsvaeNodes unl{bound, g.constant(x_unlabeled)};
  Value neg_u = unlabeled_bound_vec(g, unl, x_unlabeled, config_.classes, config_.mode, tau, rng);

  // J = E[-L] + E[-U] + alpha E[log q]; the step minimizes -J
  Value j = add(add(mean(neg_l, 0), mean(neg_u, 0)),
                mul(g.constant_scalar(config_.alpha), mean(log_q, 0)));
  Value loss = negate(j);

  StepResult result;
  result.loss = loss.scalar();
  auto grads = g.backward(loss);
  result.grads.reserve(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) result.grads.push_back(grads.at(bound[i].id));
  return result;
}

double Ssvae::classifier_accuracy(const Tensor& x, const std::vector<int>& labels) const {
  Graph g;
  SsvaeNodes n{bind_params(g, params_), {}};
  n.x = g.constant(x);
  Tensor logits = classifier_logits(g, n).tensor();
  std::size_t batch = x.rows(), k = config_.classes;
  std::size_t hits = 0;
  for (std::size_t e = 0; e < batch; ++e) {
    std::span<const double> row(logits.data().data() + e * k, k);
    if (argmax_span(row) == static_cast<std::size_t>(labels[e])) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(batch);
}

SsvaeStepCosts measure_step_costs(Ssvae& model, const Tensor& x, std::size_t reps) {
  const SsvaeConfig& cfg = model.config();
  std::size_t batch = x.rows();
  RngStream rng(1234);
  Tensor y({batch, cfg.classes});
  for (std::size_t e = 0; e < batch; ++e) y[e * cfg.classes + e % cfg.classes] = 1.0;

  auto time_best = [&](auto&& fn) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < reps; ++r) {
      auto t0 = std::chrono::steady_clock::now();
      fn();
      auto t1 = std::chrono::steady_clock::now();
      best = std::min(best, std::chrono::duration<double>(t1 - t0).count());
    }
    return best;
  };

  ParamStore& store = model.params();
  SsvaeStepCosts costs;
  costs.classifier = time_best([&] {
    Graph g;
    SsvaeNodes n{bind_params(g, store), g.constant(x)};
    Value logits = classifier_logits(g, n);
    g.backward(mean(sum(mul(logits, logits), 1), 0));
  });
  costs.inference = time_best([&] {
    Graph g;
    SsvaeNodes n{bind_params(g, store), g.constant(x)};
    Value inf_in = concat({n.x, g.constant(y)}, 1);
    Value h = tanh_op(affine(g, inf_in, n.p[4], n.p[5]));
    Value mu = affine(g, h, n.p[6], n.p[7]);
    Value sigma = exp_op(affine(g, h, n.p[8], n.p[9]));
    Value z = gaussian_reparam_node(mu, sigma, rng);
    g.backward(mean(sum(mul(z, z), 1), 0));
  });
  costs.generative = time_best([&] {
    Graph g;
    SsvaeNodes n{bind_params(g, store), g.constant(x)};
    Tensor z({batch, cfg.style_dim});
    for (std::size_t i = 0; i < z.numel(); ++i) z[i] = rng.gaussian();
    Value dec_in = concat({g.constant(y), g.constant(z)}, 1);
    Value h2 = tanh_op(affine(g, dec_in, n.p[10], n.p[11]));
    Value x_logits = affine(g, h2, n.p[12], n.p[13]);
    g.backward(mean(bernoulli_nll_vec(g, x_logits, x), 0));
  });
  return costs;
}

double predicted_speed_ratio(const SsvaeStepCosts& costs, std::size_t k) {
  double d = costs.classifier, ig = costs.inference + costs.generative;
  return (d + static_cast<double>(k) * ig) / (d + ig);
}

}  // namespace catgrad
