#include "catgrad/estimators.hpp"

#include <algorithm>
#include <cmath>

namespace catgrad {

namespace {

double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

double eval_cost(const CostFn& cost, const Tensor& sample) {
  Graph g;
  Value z = g.constant(sample);
  return cost(g, z).scalar();
}

// f(point) and grad f at point, via a fresh graph with the point as parameter.
std::pair<double, Tensor> cost_and_grad_at(const CostFn& cost, const Tensor& point) {
  Graph g;
  Value z = g.parameter(point);
  Value c = cost(g, z);
  double value = c.scalar();
  auto grads = g.backward(c);
  return {value, grads.at(z.id)};
}

Tensor default_baseline_input() { return Tensor({1}, {1.0}); }

double normalizer(const BaselineState* state, const EstimatorOptions& opts) {
  if (!state || !opts.variance_normalize) return 1.0;
  return std::max(1.0, state->sigma());
}

}  // namespace

double BaselineState::sigma() const { return std::sqrt(std::max(f_var, 0.0)); }

BaselineState make_baseline_state(std::size_t input_dim, std::size_t hidden, RngStream& rng) {
  BaselineState s;
  if (hidden > 0) {
    double bound = std::sqrt(6.0 / static_cast<double>(input_dim + hidden));
    s.w1 = Tensor({input_dim, hidden});
    for (std::size_t i = 0; i < s.w1.numel(); ++i) s.w1[i] = (2.0 * rng.uniform() - 1.0) * bound;
    s.b1 = Tensor({hidden});
    s.w2 = Tensor({hidden});  // zero: the net starts as a no-op baseline
    s.b2 = Tensor({1});
  }
  return s;
}

BaselineState updated_baseline(const BaselineState& state, double signal) {
  BaselineState next = state;
  next.updates = state.updates + 1;
  if (state.updates == 0) {
    next.f_mean = signal;
    next.f_var = 0.0;
  } else {
    double d = signal - state.f_mean;
    next.f_mean = state.decay * state.f_mean + (1.0 - state.decay) * signal;
    next.f_var = state.decay * state.f_var + (1.0 - state.decay) * d * d;
  }
  return next;
}

double baseline_net_value(const BaselineState& state, const Tensor& input) {
  if (!state.has_net()) return 0.0;
  std::size_t d = state.w1.rows(), h = state.w1.cols();
  if (input.numel() != d) throw Error("baseline_net: input size mismatch");
  double out = state.b2[0];
  for (std::size_t j = 0; j < h; ++j) {
    double a = state.b1[j];
    for (std::size_t i = 0; i < d; ++i) a += input[i] * state.w1[i * h + j];
    out += state.w2[j] * std::tanh(a);
  }
  return out;
}

Tensor distribution_mean(DistKind kind, const Tensor& params) {
  Tensor m(params.shape());
  if (kind == DistKind::Categorical) {
    softmax_span(params.data(), m.data());
  } else {
    for (std::size_t i = 0; i < params.numel(); ++i) m[i] = sigmoid_scalar(params[i]);
  }
  return m;
}

Tensor score_function(DistKind kind, const Tensor& params, const Tensor& z) {
  if (!z.same_shape(params)) throw Error("score_function: shape mismatch");
  Tensor mean = distribution_mean(kind, params);
  Tensor score(params.shape());
  for (std::size_t i = 0; i < params.numel(); ++i) score[i] = z[i] - mean[i];
  return score;
}

Tensor draw_sample(DistKind kind, const Tensor& params, RngStream& rng) {
  if (kind == DistKind::Categorical) {
    return gumbel_max_sample(CategoricalParams(params), rng);
  }
  Tensor z(params.shape());
  for (std::size_t i = 0; i < params.numel(); ++i) {
    z[i] = rng.uniform() < sigmoid_scalar(params[i]) ? 1.0 : 0.0;
  }
  return z;
}

EstimatorOutput sf_gradient(const EstimatorInput& input, RngStream& rng,
                            const BaselineState* state, const EstimatorOptions& opts) {
  if (input.num_samples < 1) throw Error("sf_gradient: num_samples must be >= 1");
  EstimatorOutput out;
  out.grad = Tensor(input.params.shape());
  double norm = normalizer(state, opts);
  double b = state ? state->f_mean : 0.0;
  double inv_m = 1.0 / static_cast<double>(input.num_samples);
  for (int s = 0; s < input.num_samples; ++s) {
    Tensor z = draw_sample(input.kind, input.params, rng);
    double f = eval_cost(input.cost, z);
    double coeff = (f - b) / norm;
    axpy_inplace(out.grad, coeff * inv_m, score_function(input.kind, input.params, z));
    out.learning_signal += f * inv_m;
    out.baseline += b * inv_m;
    out.normalized_signal += coeff * inv_m;
  }
  return out;
}

EstimatorOutput nvil_gradient(const EstimatorInput& input, RngStream& rng,
                              const BaselineState& state, const EstimatorOptions& opts) {
  (void)opts;  // NVIL's signal division is part of its definition
  if (input.num_samples < 1) throw Error("nvil_gradient: num_samples must be >= 1");
  Tensor x = input.baseline_input.numel() ? input.baseline_input : default_baseline_input();
  EstimatorOutput out;
  out.grad = Tensor(input.params.shape());
  double norm = std::max(1.0, state.sigma());
  double inv_m = 1.0 / static_cast<double>(input.num_samples);

  // Accumulate regression grads for the input baseline net alongside.
  std::vector<Tensor> net_grads;
  bool train_net = state.has_net();
  if (train_net) {
    net_grads = {Tensor(state.w1.shape()), Tensor(state.b1.shape()), Tensor(state.w2.shape()),
                 Tensor(state.b2.shape())};
  }

  for (int s = 0; s < input.num_samples; ++s) {
    Tensor z = draw_sample(input.kind, input.params, rng);
    double f = eval_cost(input.cost, z);
    double b_in = baseline_net_value(state, x);
    double centered = f - state.f_mean - b_in;
    double coeff = centered / norm;
    axpy_inplace(out.grad, coeff * inv_m, score_function(input.kind, input.params, z));
    out.learning_signal += f * inv_m;
    out.baseline += (state.f_mean + b_in) * inv_m;
    out.normalized_signal += coeff * inv_m;

    if (train_net) {
      // grads of 0.5*(f - f_mean - net(x))^2 w.r.t. the net parameters
      Graph g;
      Value xin = g.constant(x.reshaped({1, x.numel()}));
      Value w1 = g.parameter(state.w1);
      Value b1 = g.parameter(state.b1);
      Value w2 = g.parameter(state.w2);
      Value b2 = g.parameter(state.b2);
      Value h = tanh_op(add(matmul(xin, w1), b1));
      Value v = add(sum_all(mul(h, w2)), b2);
      Value target = g.constant_scalar(f - state.f_mean);
      Value resid = sub(target, v);
      Value loss = mul(resid, resid);
      auto grads = g.backward(loss);
      double half = 0.5 * inv_m;
      axpy_inplace(net_grads[0], half, grads.at(w1.id));
      axpy_inplace(net_grads[1], half, grads.at(b1.id));
      axpy_inplace(net_grads[2], half, grads.at(w2.id));
      axpy_inplace(net_grads[3], half, grads.at(b2.id));
    }
  }
  out.baseline_net_grads = std::move(net_grads);
  return out;
}

namespace {

// Shared Taylor-baseline core for DARN and MuProp. Expansion point zbar:
// DARN uses 1/2 for Bernoulli and the mean for categorical; MuProp uses the
// mean-field point mu_theta(z). MuProp adds the analytic correction term.
EstimatorOutput taylor_baseline_gradient(const EstimatorInput& input, RngStream& rng,
                                         const BaselineState* state,
                                         const EstimatorOptions& opts, bool add_mu_b) {
  if (input.num_samples < 1) throw Error("taylor estimator: num_samples must be >= 1");
  Tensor zbar = distribution_mean(input.kind, input.params);
  if (!add_mu_b && input.kind == DistKind::BernoulliVector) {
    zbar = Tensor::full(input.params.shape(), 0.5);
  }
  auto [f_bar, f_prime] = cost_and_grad_at(input.cost, zbar);

  EstimatorOutput out;
  out.grad = Tensor(input.params.shape());
  double norm = normalizer(state, opts);
  double inv_m = 1.0 / static_cast<double>(input.num_samples);
  for (int s = 0; s < input.num_samples; ++s) {
    Tensor z = draw_sample(input.kind, input.params, rng);
    double f = eval_cost(input.cost, z);
    double b = f_bar;
    for (std::size_t i = 0; i < z.numel(); ++i) b += f_prime[i] * (z[i] - zbar[i]);
    double coeff = (f - b) / norm;
    axpy_inplace(out.grad, coeff * inv_m, score_function(input.kind, input.params, z));
    out.learning_signal += f * inv_m;
    out.baseline += b * inv_m;
    out.normalized_signal += coeff * inv_m;
  }

  if (add_mu_b) {
    // mu_b = f'(zbar) . d E[z]/d theta, via autodiff through the mean map.
    Graph g;
    Value theta = g.parameter(input.params);
    Value mu = input.kind == DistKind::Categorical ? softmax(theta, 0) : sigmoid(theta);
    Value weighted = sum_all(mul(mu, g.constant(f_prime)));
    auto grads = g.backward(weighted);
    add_inplace(out.grad, grads.at(theta.id));
  }
  return out;
}

}  // namespace

EstimatorOutput darn_gradient(const EstimatorInput& input, RngStream& rng,
                              const BaselineState* state, const EstimatorOptions& opts) {
  return taylor_baseline_gradient(input, rng, state, opts, /*add_mu_b=*/false);
}

EstimatorOutput muprop_gradient(const EstimatorInput& input, RngStream& rng,
                                const BaselineState* state, const EstimatorOptions& opts) {
  return taylor_baseline_gradient(input, rng, state, opts, /*add_mu_b=*/true);
}

namespace {

// Pathwise estimators share one skeleton: build the sample node, run the
// cost, take the gradient w.r.t. the params.
EstimatorOutput pathwise_gradient(const EstimatorInput& input, RngStream& rng,
                                  const std::function<Value(Graph&, Value)>& make_sample) {
  if (input.num_samples < 1) throw Error("pathwise estimator: num_samples must be >= 1");
  EstimatorOutput out;
  out.grad = Tensor(input.params.shape());
  double inv_m = 1.0 / static_cast<double>(input.num_samples);
  for (int s = 0; s < input.num_samples; ++s) {
    Graph g;
    Value theta = g.parameter(input.params);
    Value sample = make_sample(g, theta);
    Value c = input.cost(g, sample);
    out.learning_signal += c.scalar() * inv_m;
    auto grads = g.backward(c);
    axpy_inplace(out.grad, inv_m, grads.at(theta.id));
  }
  out.normalized_signal = out.learning_signal;
  return out;
}

}  // namespace

EstimatorOutput st_gradient(const EstimatorInput& input, RngStream& rng) {
  return pathwise_gradient(input, rng, [&](Graph&, Value theta) {
    return input.kind == DistKind::Categorical ? st_categorical_node(theta, 0, rng)
                                               : st_bernoulli_node(theta, 1.0, rng);
  });
}

EstimatorOutput slope_annealed_st_gradient(const EstimatorInput& input, RngStream& rng,
                                           double slope) {
  if (!(slope > 0)) throw Error("slope_annealed_st: slope must be positive");
  return pathwise_gradient(input, rng, [&](Graph&, Value theta) {
    // Sampling stays exact; slope only sharpens the backward surrogate.
    return input.kind == DistKind::BernoulliVector ? st_bernoulli_node(theta, slope, rng)
                                                   : st_categorical_node(theta, 0, rng, slope);
  });
}

EstimatorOutput gs_gradient(const EstimatorInput& input, RngStream& rng, double tau) {
  return pathwise_gradient(input, rng, [&](Graph&, Value theta) {
    return input.kind == DistKind::Categorical ? gumbel_softmax_node(theta, 0, tau, rng)
                                               : binary_concrete_node(theta, tau, rng);
  });
}

EstimatorOutput st_gs_gradient(const EstimatorInput& input, RngStream& rng, double tau) {
  return pathwise_gradient(input, rng, [&](Graph&, Value theta) {
    return input.kind == DistKind::Categorical ? st_gumbel_softmax_node(theta, 0, tau, rng)
                                               : st_binary_concrete_node(theta, tau, rng);
  });
}

EstimatorKind estimator_from_name(std::string_view name) {
  if (name == "sf") return EstimatorKind::Sf;
  if (name == "nvil") return EstimatorKind::Nvil;
  if (name == "darn") return EstimatorKind::Darn;
  if (name == "muprop") return EstimatorKind::MuProp;
  if (name == "st") return EstimatorKind::St;
  if (name == "st_slope") return EstimatorKind::StSlope;
  if (name == "gs") return EstimatorKind::Gs;
  if (name == "st_gs") return EstimatorKind::StGs;
  throw Error("unknown estimator: " + std::string(name));
}

const char* estimator_name(EstimatorKind kind) {
  switch (kind) {
    case EstimatorKind::Sf: return "sf";
    case EstimatorKind::Nvil: return "nvil";
    case EstimatorKind::Darn: return "darn";
    case EstimatorKind::MuProp: return "muprop";
    case EstimatorKind::St: return "st";
    case EstimatorKind::StSlope: return "st_slope";
    case EstimatorKind::Gs: return "gs";
    case EstimatorKind::StGs: return "st_gs";
  }
  return "?";
}

bool estimator_is_pathwise(EstimatorKind kind) {
  switch (kind) {
    case EstimatorKind::St:
    case EstimatorKind::StSlope:
    case EstimatorKind::Gs:
    case EstimatorKind::StGs:
      return true;
    default:
      return false;
  }
}

EstimatorOutput estimate(EstimatorKind kind, const EstimatorInput& input, RngStream& rng,
                         const BaselineState* state, const EstimatorOptions& opts) {
  switch (kind) {
    case EstimatorKind::Sf: return sf_gradient(input, rng, state, opts);
    case EstimatorKind::Nvil:
      if (!state) throw Error("nvil requires a baseline state");
      return nvil_gradient(input, rng, *state, opts);
    case EstimatorKind::Darn: return darn_gradient(input, rng, state, opts);
    case EstimatorKind::MuProp: return muprop_gradient(input, rng, state, opts);
    case EstimatorKind::St: return st_gradient(input, rng);
    case EstimatorKind::StSlope: return slope_annealed_st_gradient(input, rng, input.slope);
    case EstimatorKind::Gs: return gs_gradient(input, rng, input.tau);
    case EstimatorKind::StGs: return st_gs_gradient(input, rng, input.tau);
  }
  throw Error("unknown estimator kind");
}

double annealed_slope(std::uint64_t step, const SlopeSchedule& schedule) {
  return std::min(schedule.s_max, 1.0 + schedule.rate * static_cast<double>(step));
}

}  // namespace catgrad
