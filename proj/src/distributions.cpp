#include "catgrad/distributions.hpp"

#include <cmath>
#include <limits>

namespace catgrad {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kSimplexTol = 1e-9;
}  // namespace

CategoricalParams::CategoricalParams(Tensor l) : logits(std::move(l)) {
  if (logits.rank() != 1 || logits.numel() < 2) {
    throw Error("categorical: logits must be a vector of length >= 2");
  }
  bool any_finite = false;
  for (double v : logits.data()) {
    if (std::isnan(v) || v == kInf) throw Error("categorical: logits must be finite or -inf");
    any_finite = any_finite || v > -kInf;
  }
  if (!any_finite) throw Error("categorical: all logits are -inf");
}

Tensor CategoricalParams::probabilities() const {
  Tensor p(logits.shape());
  softmax_span(logits.data(), p.data());
  return p;
}

double anneal_temperature(std::uint64_t step, const AnnealSchedule& schedule) {
  if (!(schedule.rate > 0) || !(schedule.floor > 0) || schedule.update_every == 0) {
    throw Error("anneal: rate and floor must be positive, update_every >= 1");
  }
  std::uint64_t held = step - step % schedule.update_every;
  return std::max(schedule.floor, std::exp(-schedule.rate * static_cast<double>(held)));
}

Tensor sample_gumbel(const Shape& shape, RngStream& rng) {
  Tensor g(shape);
  for (std::size_t i = 0; i < g.numel(); ++i) g[i] = rng.gumbel();
  return g;
}

std::size_t gumbel_max_index(const CategoricalParams& params, RngStream& rng) {
  std::size_t best = 0;
  double best_val = -kInf;
  for (std::size_t i = 0; i < params.k(); ++i) {
    double x = params.logits[i];
    if (x == -kInf) {
      rng.gumbel();  // keep the stream layout independent of logit values
      continue;
    }
    double v = x + rng.gumbel();
    if (v > best_val) {
      best_val = v;
      best = i;
    }
  }
  return best;
}

Tensor gumbel_max_sample(const CategoricalParams& params, RngStream& rng) {
  Tensor z(params.logits.shape());
  z[gumbel_max_index(params, rng)] = 1.0;
  return z;
}

Tensor gumbel_softmax_sample(const CategoricalParams& params, double tau, RngStream& rng) {
  if (!(tau > 0)) throw Error("gumbel_softmax: tau must be positive");
  std::size_t k = params.k();
  Tensor scaled(params.logits.shape());
  for (std::size_t i = 0; i < k; ++i) scaled[i] = (params.logits[i] + rng.gumbel()) / tau;
  Tensor y(scaled.shape());
  softmax_span(scaled.data(), y.data());
  return y;
}

Tensor st_gumbel_softmax_sample(const CategoricalParams& params, double tau, RngStream& rng) {
  Tensor y = gumbel_softmax_sample(params, tau, rng);
  return discretize_to_one_hot(y, 0);
}

double gumbel_softmax_log_density(const Tensor& y, const CategoricalParams& params, double tau) {
  if (!(tau > 0)) throw Error("gumbel_softmax_log_density: tau must be positive");
  std::size_t k = params.k();
  if (y.numel() != k) throw Error("gumbel_softmax_log_density: y/params size mismatch");
  double total = 0;
  for (double v : y.data()) {
    if (!(v > 0)) throw Error("gumbel_softmax_log_density: y must be strictly positive");
    total += v;
  }
  if (std::abs(total - 1.0) > kSimplexTol) {
    throw Error("gumbel_softmax_log_density: y is off the simplex");
  }

  // Normalize logits so the class probabilities sum to one; the density is
  // then exactly Gamma(k) tau^(k-1) (sum_i pi_i y_i^-tau)^-k prod_i pi_i y_i^-(tau+1).
  double lse = log_sum_exp_span(params.logits.data());
  double log_p = std::lgamma(static_cast<double>(k)) +
                 (static_cast<double>(k) - 1.0) * std::log(tau);
  std::vector<double> scaled(k);
  double lin = 0;
  for (std::size_t i = 0; i < k; ++i) {
    double x = params.logits[i] - lse;
    double log_y = std::log(y[i]);
    scaled[i] = x - tau * log_y;
    lin += x - (tau + 1.0) * log_y;
  }
  log_p += lin - static_cast<double>(k) * log_sum_exp_span(scaled);
  return log_p;
}

Tensor bernoulli_sample(const Tensor& probs, RngStream& rng) {
  Tensor z(probs.shape());
  for (std::size_t i = 0; i < probs.numel(); ++i) {
    double p = probs[i];
    if (!(p >= 0.0 && p <= 1.0)) throw Error("bernoulli_sample: p must be in [0,1]");
    z[i] = rng.uniform() < p ? 1.0 : 0.0;
  }
  return z;
}

double bernoulli_log_prob(const Tensor& z, const Tensor& probs) {
  if (!z.same_shape(probs)) throw Error("bernoulli_log_prob: shape mismatch");
  double lp = 0;
  for (std::size_t i = 0; i < z.numel(); ++i) {
    double p = probs[i];
    if (!(p >= 0.0 && p <= 1.0)) throw Error("bernoulli_log_prob: p must be in [0,1]");
    if (z[i] != 0.0 && z[i] != 1.0) throw Error("bernoulli_log_prob: z must be 0/1");
    double term = z[i] == 1.0 ? p : 1.0 - p;
    if (!(term > 0)) throw Error("bernoulli_log_prob: zero-probability outcome");
    lp += std::log(term);
  }
  return lp;
}

double categorical_log_prob(const Tensor& one_hot, const CategoricalParams& params) {
  if (one_hot.numel() != params.k()) throw Error("categorical_log_prob: size mismatch");
  std::size_t hot = params.k();
  for (std::size_t i = 0; i < one_hot.numel(); ++i) {
    if (one_hot[i] == 1.0) {
      if (hot != params.k()) throw Error("categorical_log_prob: not one-hot");
      hot = i;
    } else if (one_hot[i] != 0.0) {
      throw Error("categorical_log_prob: not one-hot");
    }
  }
  if (hot == params.k()) throw Error("categorical_log_prob: not one-hot");
  double lse = log_sum_exp_span(params.logits.data());
  return params.logits[hot] - lse;
}

Tensor gaussian_reparam_sample(const Tensor& mu, const Tensor& sigma, RngStream& rng) {
  if (!mu.same_shape(sigma)) throw Error("gaussian_reparam_sample: shape mismatch");
  Tensor z(mu.shape());
  for (std::size_t i = 0; i < mu.numel(); ++i) {
    if (!(sigma[i] > 0)) throw Error("gaussian_reparam_sample: sigma must be positive");
    z[i] = mu[i] + sigma[i] * rng.gaussian();
  }
  return z;
}

double gaussian_kl_to_standard(const Tensor& mu, const Tensor& sigma) {
  if (!mu.same_shape(sigma)) throw Error("gaussian_kl_to_standard: shape mismatch");
  double kl = 0;
  for (std::size_t i = 0; i < mu.numel(); ++i) {
    if (!(sigma[i] > 0)) throw Error("gaussian_kl_to_standard: sigma must be positive");
    double s2 = sigma[i] * sigma[i];
    kl += 0.5 * (s2 + mu[i] * mu[i] - 1.0) - std::log(sigma[i]);
  }
  return kl;
}

Tensor discretize_to_one_hot(const Tensor& y, int axis) { return one_hot_argmax(y, axis); }

}  // namespace catgrad
