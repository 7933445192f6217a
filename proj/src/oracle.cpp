#include "catgrad/oracle.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

#include "catgrad/stats.hpp"

namespace catgrad {

namespace {
constexpr std::size_t kMaxOutcomes = 4096;

double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}
}  // namespace

std::size_t EnumerationTestbed::outcome_count() const {
  if (kind == DistKind::Categorical) return params.numel();
  std::size_t bits = params.numel();
  if (bits >= 12) throw Error("testbed: Bernoulli vector too wide to enumerate");
  return std::size_t{1} << bits;
}

Tensor EnumerationTestbed::outcome(std::size_t index) const {
  Tensor z(params.shape());
  if (kind == DistKind::Categorical) {
    z[index] = 1.0;
  } else {
    for (std::size_t b = 0; b < params.numel(); ++b) z[b] = (index >> b) & 1 ? 1.0 : 0.0;
  }
  return z;
}

double EnumerationTestbed::outcome_log_prob(std::size_t index) const {
  if (kind == DistKind::Categorical) {
    return params[index] - log_sum_exp_span(params.data());
  }
  double lp = 0;
  for (std::size_t b = 0; b < params.numel(); ++b) {
    double p = sigmoid_scalar(params[b]);
    lp += ((index >> b) & 1) ? std::log(p) : std::log1p(-p);
  }
  return lp;
}

EstimatorInput EnumerationTestbed::as_input(int num_samples) const {
  EstimatorInput in;
  in.kind = kind;
  in.params = params;
  in.cost = cost;
  in.num_samples = num_samples;
  return in;
}

EnumerationTestbed categorical_testbed(std::string id, Tensor logits,
                                       std::vector<double> cost_per_class) {
  if (logits.numel() != cost_per_class.size()) {
    throw Error("categorical_testbed: logits/cost size mismatch");
  }
  EnumerationTestbed tb;
  tb.id = std::move(id);
  tb.kind = DistKind::Categorical;
  tb.params = std::move(logits);
  std::size_t k = cost_per_class.size();
  Tensor table({k}, std::move(cost_per_class));
  tb.cost = [table](Graph& g, Value z) { return sum_all(mul(z, g.constant(table))); };
  return tb;
}

EnumerationTestbed bernoulli_testbed(std::string id, Tensor logits, CostFn cost) {
  EnumerationTestbed tb;
  tb.id = std::move(id);
  tb.kind = DistKind::BernoulliVector;
  tb.params = std::move(logits);
  tb.cost = std::move(cost);
  tb.outcome_count();  // validates width
  return tb;
}

namespace {

// Cost values are theta-independent; freeze them once per outcome.
std::vector<double> outcome_costs(const EnumerationTestbed& tb) {
  std::size_t n = tb.outcome_count();
  if (n > kMaxOutcomes) throw Error("oracle: outcome space too large");
  std::vector<double> f(n);
  for (std::size_t i = 0; i < n; ++i) {
    Graph g;
    f[i] = tb.cost(g, g.constant(tb.outcome(i))).scalar();
  }
  return f;
}

}  // namespace

Tensor exact_expected_gradient(const EnumerationTestbed& testbed) {
  std::vector<double> f = outcome_costs(testbed);
  Graph g;
  Value theta = g.parameter(testbed.params);
  Value loss{};
  if (testbed.kind == DistKind::Categorical) {
    Value probs = softmax(theta, 0);
    loss = sum_all(mul(probs, g.constant(Tensor({f.size()}, std::vector<double>(f)))));
  } else {
    // L = sum_z exp(sum_i z_i a_i - softplus(a_i)) f(z)
    Value neg_norm = sum_all(softplus(theta));
    bool first = true;
    for (std::size_t i = 0; i < f.size(); ++i) {
      Value lp = sub(sum_all(mul(g.constant(testbed.outcome(i)), theta)), neg_norm);
      Value term = mul(exp_op(lp), g.constant_scalar(f[i]));
      loss = first ? term : add(loss, term);
      first = false;
    }
  }
  auto grads = g.backward(loss);
  return grads.at(theta.id);
}

double enumerated_expectation(const EnumerationTestbed& testbed, const Tensor& params) {
  EnumerationTestbed shifted = testbed;
  shifted.params = params;
  std::vector<double> f = outcome_costs(testbed);
  double total = 0;
  for (std::size_t i = 0; i < f.size(); ++i) {
    total += std::exp(shifted.outcome_log_prob(i)) * f[i];
  }
  return total;
}

Tensor finite_difference(const std::function<double(const Tensor&)>& fn, const Tensor& theta,
                         double h) {
  Tensor grad(theta.shape());
  Tensor probe = theta;
  for (std::size_t i = 0; i < theta.numel(); ++i) {
    double orig = probe[i];
    probe[i] = orig + h;
    double up = fn(probe);
    probe[i] = orig - h;
    double down = fn(probe);
    probe[i] = orig;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw Error("finite_difference: non-finite function value");
    }
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

namespace {

// Panel boundaries on [a, b], dyadically refined toward both endpoints so
// integrable boundary singularities are resolved.
std::vector<double> graded_panels(double a, double b, int levels) {
  std::vector<double> ts;
  ts.push_back(a);
  double width = b - a;
  for (int j = levels; j >= 1; --j) ts.push_back(a + width * std::ldexp(1.0, -j));
  for (int j = 1; j <= levels; ++j) ts.push_back(b - width * std::ldexp(1.0, -j));
  ts.push_back(b);
  return ts;
}

double simpson_panel(const std::function<double(double)>& f, double p, double q, std::size_t n) {
  if (n % 2) ++n;
  double h = (q - p) / static_cast<double>(n);
  double s = f(p) + f(q);
  for (std::size_t i = 1; i < n; ++i) {
    s += f(p + h * static_cast<double>(i)) * (i % 2 ? 4.0 : 2.0);
  }
  return s * h / 3.0;
}

double graded_integral(const std::function<double(double)>& f, double a, double b, int levels,
                       std::size_t pts) {
  if (!(a < b)) return 0.0;
  std::vector<double> ts = graded_panels(a, b, levels);
  double total = 0;
  for (std::size_t i = 0; i + 1 < ts.size(); ++i) {
    total += simpson_panel(f, ts[i], ts[i + 1], pts);
  }
  return total;
}

}  // namespace

double graded_simpson(const std::function<double(double)>& fn, double a, double b, int levels,
                      std::size_t points) {
  return graded_integral(fn, a, b, levels, points);
}

int levels_for_eps(double eps, int floor_levels) {
  double needed = std::ceil(-std::log2(eps)) + 2.0;
  return std::max(floor_levels, static_cast<int>(needed));
}

double simplex_quadrature(const std::function<double(const Tensor&)>& density, std::size_t k,
                          std::size_t resolution, double eps) {
  if (!(eps > 0) || eps >= 0.5) throw Error("simplex_quadrature: eps must be in (0, 0.5)");
  if (k == 2) {
    // Two mirrored halves parameterized by the small coordinate, so mesh
    // points stay exact arbitrarily close to either corner.
    std::size_t pts = std::max<std::size_t>(8, resolution);
    int levels = levels_for_eps(eps, 45);
    auto low = [&](double y1) { return density(Tensor({2}, {y1, 1.0 - y1})); };
    auto high = [&](double y2) { return density(Tensor({2}, {1.0 - y2, y2})); };
    return graded_integral(low, eps, 0.5, levels, pts) +
           graded_integral(high, eps, 0.5, levels, pts);
  }
  if (k == 3) {
    // The nested parameterization computes y3 = 1 - y1 - y2, so eps below
    // ~1e-12 is lost to cancellation; clamp and keep the margin honest.
    eps = std::max(eps, 1e-12);
    std::size_t pts = std::max<std::size_t>(12, resolution / 4);
    int levels = levels_for_eps(eps, 22);
    auto outer = [&](double y1) {
      auto inner = [&](double y2) { return density(Tensor({3}, {y1, y2, 1.0 - y1 - y2})); };
      return graded_integral(inner, eps, 1.0 - y1 - eps, levels, pts);
    };
    return graded_integral(outer, eps, 1.0 - 2.0 * eps, levels, pts);
  }
  throw Error("simplex_quadrature: only k=2 and k=3 are supported");
}

EstimatorAudit audit_estimator(EstimatorKind kind, const EnumerationTestbed& testbed,
                               std::uint64_t n_trials, std::uint64_t seed,
                               const BaselineState* state, const EstimatorOptions& opts) {
  if (n_trials < 2) throw Error("audit: need at least 2 trials");
  EstimatorAudit audit;
  audit.estimator = estimator_name(kind);
  audit.testbed_id = testbed.id;
  audit.n_trials = n_trials;
  audit.exact_gradient = exact_expected_gradient(testbed);

  std::size_t dim = testbed.params.numel();
  std::vector<std::vector<double>> draws(dim, std::vector<double>(n_trials));
  EstimatorInput input = testbed.as_input(1);
  for (std::uint64_t t = 0; t < n_trials; ++t) {
    RngStream rng = RngStream::derive(seed, t, 0);
    EstimatorOutput out = estimate(kind, input, rng, state, opts);
    for (std::size_t d = 0; d < dim; ++d) draws[d][t] = out.grad[d];
  }

  audit.mean_gradient = Tensor(testbed.params.shape());
  audit.standard_error = Tensor(testbed.params.shape());
  audit.z_scores = Tensor(testbed.params.shape());
  audit.per_coord_variance = Tensor(testbed.params.shape());
  for (std::size_t d = 0; d < dim; ++d) {
    audit.mean_gradient[d] = mean(draws[d]);
    audit.per_coord_variance[d] = variance(draws[d]);
    audit.standard_error[d] = standard_error(draws[d]);
    // Relative floor keeps zero-variance (algebraically exact) estimators
    // from turning round-off into huge z-scores.
    double se = std::max(audit.standard_error[d],
                         1e-12 * (1.0 + std::abs(audit.exact_gradient[d])));
    double bias = audit.mean_gradient[d] - audit.exact_gradient[d];
    audit.z_scores[d] = bias / se;
    audit.max_abs_z = std::max(audit.max_abs_z, std::abs(audit.z_scores[d]));
  }
  return audit;
}

std::string EstimatorAudit::to_json() const {
  nlohmann::json j;
  j["estimator"] = estimator;
  j["testbed"] = testbed_id;
  j["n"] = n_trials;
  auto vec = [](const Tensor& t) {
    return std::vector<double>(t.data().begin(), t.data().end());
  };
  j["mean"] = vec(mean_gradient);
  j["se"] = vec(standard_error);
  j["exact"] = vec(exact_gradient);
  j["z"] = vec(z_scores);
  j["var"] = vec(per_coord_variance);
  return j.dump();
}

}  // namespace catgrad
