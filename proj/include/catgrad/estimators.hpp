#pragma once

#include <cstdint>
#include <functional>
#include <string_view>
#include <vector>

#include "catgrad/distributions.hpp"
#include "catgrad/graph.hpp"

namespace catgrad {

enum class DistKind { Categorical, BernoulliVector };

/// Cost closure: builds the (scalar) cost as a graph over the sample node,
/// so pathwise estimators can differentiate through it.
using CostFn = std::function<Value(Graph&, Value sample)>;

struct EstimatorInput {
  DistKind kind = DistKind::Categorical;
  Tensor params;  // categorical: logits [k]; bernoulli: per-unit pre-sigmoid logits [n]
  CostFn cost;
  int num_samples = 1;
  double tau = 1.0;            // gs / st_gs
  double slope = 1.0;          // st_slope
  Tensor baseline_input;       // NVIL conditioning input (defaults to a single 1)
};

/// Moving statistics of the learning signal plus the input-dependent
/// baseline network (one tanh hidden layer). Updates are pure.
struct BaselineState {
  double decay = 0.9;
  double f_mean = 0.0;
  double f_var = 0.0;
  std::uint64_t updates = 0;
  Tensor w1, b1, w2, b2;  // empty tensors = no input baseline net

  bool has_net() const { return w1.numel() > 0; }
  double sigma() const;
};

BaselineState make_baseline_state(std::size_t input_dim, std::size_t hidden, RngStream& rng);
BaselineState updated_baseline(const BaselineState& state, double signal);
double baseline_net_value(const BaselineState& state, const Tensor& input);

struct EstimatorOutput {
  Tensor grad;                   // shape of params
  double learning_signal = 0.0;  // mean raw f over the samples
  double baseline = 0.0;         // mean baseline value
  double normalized_signal = 0.0;
  // NVIL: gradients of the squared regression loss w.r.t. (w1, b1, w2, b2).
  std::vector<Tensor> baseline_net_grads;
};

struct EstimatorOptions {
  // Divide the learning signal by max(1, sigma_f). Takes effect when a
  // BaselineState (which tracks sigma_f) is supplied; NVIL always divides.
  bool variance_normalize = true;
};

EstimatorOutput sf_gradient(const EstimatorInput& input, RngStream& rng,
                            const BaselineState* state = nullptr,
                            const EstimatorOptions& opts = {});
EstimatorOutput nvil_gradient(const EstimatorInput& input, RngStream& rng,
                              const BaselineState& state, const EstimatorOptions& opts = {});
EstimatorOutput darn_gradient(const EstimatorInput& input, RngStream& rng,
                              const BaselineState* state = nullptr,
                              const EstimatorOptions& opts = {});
EstimatorOutput muprop_gradient(const EstimatorInput& input, RngStream& rng,
                                const BaselineState* state = nullptr,
                                const EstimatorOptions& opts = {});
EstimatorOutput st_gradient(const EstimatorInput& input, RngStream& rng);
EstimatorOutput slope_annealed_st_gradient(const EstimatorInput& input, RngStream& rng,
                                           double slope);
EstimatorOutput gs_gradient(const EstimatorInput& input, RngStream& rng, double tau);
EstimatorOutput st_gs_gradient(const EstimatorInput& input, RngStream& rng, double tau);

enum class EstimatorKind { Sf, Nvil, Darn, MuProp, St, StSlope, Gs, StGs };

/// Accepts: sf | nvil | darn | muprop | st | st_slope | gs | st_gs.
EstimatorKind estimator_from_name(std::string_view name);
const char* estimator_name(EstimatorKind kind);
bool estimator_is_pathwise(EstimatorKind kind);

EstimatorOutput estimate(EstimatorKind kind, const EstimatorInput& input, RngStream& rng,
                         const BaselineState* state = nullptr,
                         const EstimatorOptions& opts = {});

/// grad of log p_theta(z) w.r.t. the params.
Tensor score_function(DistKind kind, const Tensor& params, const Tensor& z);
/// E[z]: softmax(logits) or sigmoid(logits).
Tensor distribution_mean(DistKind kind, const Tensor& params);
Tensor draw_sample(DistKind kind, const Tensor& params, RngStream& rng);

/// s(t) = min(s_max, 1 + rate * t).
struct SlopeSchedule {
  double rate = 0.0;
  double s_max = 5.0;
};
double annealed_slope(std::uint64_t step, const SlopeSchedule& schedule);

}  // namespace catgrad
