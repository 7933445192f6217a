#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "catgrad/estimators.hpp"
#include "catgrad/graph.hpp"
#include "catgrad/tensor.hpp"

namespace catgrad {

/// Exhaustively enumerable testbed: a single k-way categorical variable or
/// a vector of independent Bernoulli bits, with a cost per outcome.
struct EnumerationTestbed {
  std::string id;
  DistKind kind = DistKind::Categorical;
  Tensor params;  // logits
  CostFn cost;

  std::size_t outcome_count() const;
  Tensor outcome(std::size_t index) const;      // one-hot / bit vector
  double outcome_log_prob(std::size_t index) const;
  EstimatorInput as_input(int num_samples = 1) const;
};

EnumerationTestbed categorical_testbed(std::string id, Tensor logits,
                                       std::vector<double> cost_per_class);
EnumerationTestbed bernoulli_testbed(std::string id, Tensor logits, CostFn cost);

/// Exact grad of L(theta) = sum_z p_theta(z) f(z), differentiated by
/// autodiff through the enumeration. Outcome space capped at 4096.
Tensor exact_expected_gradient(const EnumerationTestbed& testbed);
/// The enumerated expectation itself, as a function of arbitrary logits.
double enumerated_expectation(const EnumerationTestbed& testbed, const Tensor& params);

/// Central finite differences of fn around theta.
Tensor finite_difference(const std::function<double(const Tensor&)>& fn, const Tensor& theta,
                         double h = 1e-5);

/// Composite Simpson on [a, b] over a mesh dyadically refined toward both
/// endpoints, so integrable boundary singularities converge.
double graded_simpson(const std::function<double(double)>& fn, double a, double b,
                      int levels = 30, std::size_t points = 16);

/// Integral of `density` over the (k-1)-simplex: k=2 uses composite Simpson
/// over y1 in [eps, 1-eps] on a boundary-graded mesh; k=3 nests the same
/// rule over the triangle. `resolution` scales the node count.
double simplex_quadrature(const std::function<double(const Tensor&)>& density, std::size_t k,
                          std::size_t resolution = 64, double eps = 1e-9);

struct EstimatorAudit {
  std::string estimator;
  std::string testbed_id;
  std::uint64_t n_trials = 0;
  Tensor mean_gradient;
  Tensor standard_error;
  Tensor exact_gradient;
  Tensor z_scores;
  Tensor per_coord_variance;
  double max_abs_z = 0.0;

  std::string to_json() const;
};

/// Bias/variance audit of an estimator against the enumeration oracle.
/// Deterministic given (seed, n_trials); means use pairwise summation.
EstimatorAudit audit_estimator(EstimatorKind kind, const EnumerationTestbed& testbed,
                               std::uint64_t n_trials, std::uint64_t seed,
                               const BaselineState* state = nullptr,
                               const EstimatorOptions& opts = {});

}  // namespace catgrad
