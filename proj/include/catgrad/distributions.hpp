#pragma once

#include <cstdint>

#include "catgrad/graph.hpp"
#include "catgrad/rng.hpp"
#include "catgrad/tensor.hpp"

namespace catgrad {

/// Unnormalized log-probabilities of a k-way categorical variable.
struct CategoricalParams {
  Tensor logits;  // length k, k >= 2; -inf marks zero-probability classes

  explicit CategoricalParams(Tensor l);
  std::size_t k() const { return logits.numel(); }
  Tensor probabilities() const;  // softmax(logits)
};

/// tau(t) = max(floor, exp(-rate * t_N)) with t_N = update_every * floor(t / update_every).
struct AnnealSchedule {
  double rate = 1e-4;
  double floor = 0.5;
  std::uint64_t update_every = 1;
};

double anneal_temperature(std::uint64_t step, const AnnealSchedule& schedule);

/// i.i.d. Gumbel(0,1) draws via -log(-log(u)); uniforms clamped away from {0,1}.
Tensor sample_gumbel(const Shape& shape, RngStream& rng);

/// Exact categorical sample by the Gumbel-Max trick; returns a one-hot vector.
Tensor gumbel_max_sample(const CategoricalParams& params, RngStream& rng);
std::size_t gumbel_max_index(const CategoricalParams& params, RngStream& rng);

/// Relaxed sample y_i = exp((x_i+g_i)/tau) / sum_j exp((x_j+g_j)/tau).
Tensor gumbel_softmax_sample(const CategoricalParams& params, double tau, RngStream& rng);

/// One-hot forward value of the straight-through variant (tensor level).
Tensor st_gumbel_softmax_sample(const CategoricalParams& params, double tau, RngStream& rng);

/// log p(y) of the Gumbel-Softmax density, computed in log-space with
/// normalized logits. y must be strictly interior to the simplex.
double gumbel_softmax_log_density(const Tensor& y, const CategoricalParams& params, double tau);

// Bernoulli / categorical / Gaussian helpers.
Tensor bernoulli_sample(const Tensor& probs, RngStream& rng);
double bernoulli_log_prob(const Tensor& z, const Tensor& probs);
double categorical_log_prob(const Tensor& one_hot, const CategoricalParams& params);
Tensor gaussian_reparam_sample(const Tensor& mu, const Tensor& sigma, RngStream& rng);
/// KL( N(mu, diag(sigma^2)) || N(0, I) ), summed over dimensions.
double gaussian_kl_to_standard(const Tensor& mu, const Tensor& sigma);

/// Discretization rule used at evaluation time: argmax with lowest-index
/// tie-break, as a one-hot vector along `axis`.
Tensor discretize_to_one_hot(const Tensor& y, int axis);

}  // namespace catgrad
