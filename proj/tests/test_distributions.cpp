#include <doctest.h>

#include <cmath>

#include "catgrad/distributions.hpp"
#include "catgrad/oracle.hpp"
#include "catgrad/stats.hpp"
#include "test_util.hpp"

using namespace catgrad;

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// builds a gumbel-softmax node with caller-chosen noise
Value gs_with_noise(Graph& g, Value logits, double tau, Tensor noise) {
  OpAttrs attrs;
  attrs.axis = 0;
  attrs.tau = tau;
  attrs.noise = std::move(noise);
  return g.apply(Op::GumbelSoftmax, {logits}, std::move(attrs));
}

Value st_gs_with_noise(Graph& g, Value logits, double tau, Tensor noise) {
  OpAttrs attrs;
  attrs.axis = 0;
  attrs.tau = tau;
  attrs.noise = std::move(noise);
  return g.apply(Op::StGumbelSoftmax, {logits}, std::move(attrs));
}

}  // namespace

TEST_CASE("gumbel inverse transform hits known points") {
  CHECK(gumbel_from_uniform(std::exp(-1.0)) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(gumbel_from_uniform(std::exp(-std::exp(1.0))) == doctest::Approx(-1.0));
  CHECK(std::isfinite(gumbel_from_uniform(0.0)));
  CHECK(std::isfinite(gumbel_from_uniform(1.0)));
}

TEST_CASE("gumbel sample moments match Euler-Mascheroni and pi^2/6") {
  RngStream rng(101);
  const std::size_t n = 1000000;
  std::vector<double> xs(n);
  for (double& x : xs) x = rng.gumbel();
  CHECK(std::abs(mean(xs) - 0.5772156649) < 0.01);
  CHECK(std::abs(variance(xs) - 1.6449340668) < 0.02);
}

TEST_CASE("gumbel-max with a deterministic class") {
  RngStream rng(5);
  CategoricalParams params(Tensor({3}, {0.0, kNegInf, kNegInf}));
  for (int i = 0; i < 50; ++i) CHECK(gumbel_max_index(params, rng) == 0);
  CHECK_THROWS_AS(CategoricalParams(Tensor({3}, {kNegInf, kNegInf, kNegInf})), Error);
}

TEST_CASE("gumbel-max with zero noise is plain argmax") {
  Graph g;
  Value logits = g.constant(Tensor({3}, {1.0, 0.0, -1.0}));
  OpAttrs attrs;
  attrs.axis = 0;
  attrs.noise = Tensor({3});
  Tensor z = g.apply(Op::CategoricalSample, {logits}, std::move(attrs)).tensor();
  CHECK(z[0] == 1.0);
}

TEST_CASE("gumbel-max frequencies match the categorical") {
  RngStream rng(7);
  Tensor logits({3}, {std::log(0.2), std::log(0.3), std::log(0.5)});
  CategoricalParams params(logits);
  const std::size_t n = 100000;
  std::vector<double> counts(3, 0.0);
  for (std::size_t i = 0; i < n; ++i) counts[gumbel_max_index(params, rng)] += 1.0;
  std::vector<double> expected{0.2 * n, 0.3 * n, 0.5 * n};
  CHECK(chi2_test_passes(counts, expected, 0.01));
}

TEST_CASE("element-wise mean of one-hot samples approaches pi") {
  RngStream rng(8);
  Tensor logits({3}, {std::log(0.2), std::log(0.3), std::log(0.5)});
  CategoricalParams params(logits);
  const std::size_t n = 100000;
  Tensor acc({3});
  for (std::size_t i = 0; i < n; ++i) add_inplace(acc, gumbel_max_sample(params, rng));
  scale_inplace(acc, 1.0 / static_cast<double>(n));
  CHECK(std::abs(acc[0] - 0.2) < 0.01);
  CHECK(std::abs(acc[1] - 0.3) < 0.01);
  CHECK(std::abs(acc[2] - 0.5) < 0.01);
}

TEST_CASE("gumbel-softmax with zero noise is tempered softmax of the logits") {
  Graph g;
  Tensor logits({3}, {0.4, -0.3, 1.1});
  Value x = g.constant(logits);
  for (double tau : {0.5, 1.0, 2.0}) {
    Tensor y = gs_with_noise(g, x, tau, Tensor({3})).tensor();
    Tensor expect(logits.shape());
    std::vector<double> scaled{logits[0] / tau, logits[1] / tau, logits[2] / tau};
    softmax_span(scaled, expect.data());
    CHECK(max_abs_diff(y, expect) < 1e-14);
  }
}

TEST_CASE("equal logits with equal noise give the uniform vector") {
  Graph g;
  Value x = g.constant(Tensor({4}));
  Tensor y = gs_with_noise(g, x, 0.7, Tensor::full({4}, 0.3)).tensor();
  for (std::size_t i = 0; i < 4; ++i) CHECK(y[i] == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("simplex sample invariant holds across taus") {
  RngStream rng(9);
  CategoricalParams params(Tensor({5}, {1.0, 0.5, 0.0, -0.5, -1.0}));
  for (double tau : {0.1, 1.0, 10.0}) {
    for (int i = 0; i < 200; ++i) {
      Tensor y = gumbel_softmax_sample(params, tau, rng);
      double s = 0;
      for (std::size_t j = 0; j < y.numel(); ++j) {
        CHECK(y[j] > 0.0);
        s += y[j];
      }
      CHECK(std::abs(s - 1.0) < 1e-9);
    }
  }
  CHECK_THROWS_AS(gumbel_softmax_sample(params, 0.0, rng), Error);
}

namespace {

struct Concentration {
  double one_hot_fraction = 0;   // share of draws with max coordinate > 0.99
  std::vector<double> argmax_counts;
};

Concentration measure_concentration(const CategoricalParams& params, double tau, std::size_t n,
                                    std::uint64_t seed) {
  RngStream rng(seed);
  Concentration c;
  c.argmax_counts.assign(params.k(), 0.0);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < n; ++i) {
    Tensor y = gumbel_softmax_sample(params, tau, rng);
    std::size_t arg = 0;
    double best = 0;
    for (std::size_t j = 0; j < y.numel(); ++j) {
      if (y[j] > best) {
        best = y[j];
        arg = j;
      }
    }
    if (best > 0.99) ++hits;
    c.argmax_counts[arg] += 1.0;
  }
  c.one_hot_fraction = static_cast<double>(hits) / static_cast<double>(n);
  return c;
}

}  // namespace

TEST_CASE("low temperature concentrates samples with correct argmax marginals") {
  const std::size_t n = 100000;
  // The one-hot fraction at fixed tau depends on the top-two gap of the
  // perturbed logits, so it is pi-dependent: ~0.9716 at (0.2,0.3,0.5)
  // (Monte Carlo derived), and above 0.99 only for skewed classes.
  CategoricalParams mild(Tensor({3}, {std::log(0.2), std::log(0.3), std::log(0.5)}));
  Concentration a = measure_concentration(mild, 0.01, n, 10);
  CHECK(a.one_hot_fraction > 0.965);
  CHECK(a.one_hot_fraction < 0.980);
  std::vector<double> expected{0.2 * n, 0.3 * n, 0.5 * n};
  CHECK(chi2_test_passes(a.argmax_counts, expected, 0.01));

  CategoricalParams skewed(Tensor({3}, {std::log(0.9), std::log(0.07), std::log(0.03)}));
  Concentration b = measure_concentration(skewed, 0.01, n, 11);
  CHECK(b.one_hot_fraction >= 0.99);
  std::vector<double> expected_skewed{0.9 * n, 0.07 * n, 0.03 * n};
  CHECK(chi2_test_passes(b.argmax_counts, expected_skewed, 0.01));
}

TEST_CASE("high temperature pushes the sample mean to uniform") {
  RngStream rng(11);
  Tensor logits({3}, {std::log(0.2), std::log(0.3), std::log(0.5)});
  CategoricalParams params(logits);
  const std::size_t n = 100000;
  Tensor acc({3});
  for (std::size_t i = 0; i < n; ++i) add_inplace(acc, gumbel_softmax_sample(params, 100.0, rng));
  scale_inplace(acc, 1.0 / static_cast<double>(n));
  for (std::size_t j = 0; j < 3; ++j) CHECK(std::abs(acc[j] - 1.0 / 3.0) < 0.02);
}

TEST_CASE("straight-through forward is one-hot at any temperature") {
  RngStream rng(12);
  CategoricalParams params(Tensor({4}, {0.5, -0.2, 0.1, 0.9}));
  for (double tau : {0.05, 1.0, 25.0}) {
    for (int i = 0; i < 100; ++i) {
      Tensor z = st_gumbel_softmax_sample(params, tau, rng);
      double s = 0;
      int ones = 0;
      for (std::size_t j = 0; j < 4; ++j) {
        s += z[j];
        ones += z[j] == 1.0;
        CHECK((z[j] == 0.0 || z[j] == 1.0));
      }
      CHECK(s == 1.0);
      CHECK(ones == 1);
    }
  }
}

TEST_CASE("straight-through backward equals the relaxed backward for shared noise") {
  RngStream rng(13);
  Tensor logits({4}, {0.5, -0.2, 0.1, 0.9});
  Tensor noise = sample_gumbel({4}, rng);
  Tensor coeffs({4}, {0.3, -1.0, 0.7, 0.2});
  double tau = 0.8;

  Graph g1;
  Value x1 = g1.parameter(logits);
  Value y = gs_with_noise(g1, x1, tau, noise);
  auto grads_soft = g1.backward(sum_all(mul(y, g1.constant(coeffs))));

  Graph g2;
  Value x2 = g2.parameter(logits);
  Value z = st_gs_with_noise(g2, x2, tau, noise);
  auto grads_hard = g2.backward(sum_all(mul(z, g2.constant(coeffs))));

  CHECK(max_abs_diff(grads_soft.at(x1.id), grads_hard.at(x2.id)) == 0.0);

  // forward one-hot sits on the argmax of the underlying relaxed sample
  Graph g3;
  Value x3 = g3.constant(logits);
  Tensor zf = st_gs_with_noise(g3, x3, tau, noise).tensor();
  Tensor yf = gs_with_noise(g3, x3, tau, noise).tensor();
  CHECK(max_abs_diff(zf, one_hot_argmax(yf, 0)) == 0.0);
}

TEST_CASE("log density at the symmetric point of a fair binary is zero") {
  CategoricalParams params(Tensor({2}, {std::log(0.5), std::log(0.5)}));
  double lp = gumbel_softmax_log_density(Tensor({2}, {0.5, 0.5}), params, 1.0);
  CHECK(lp == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("log density is permutation equivariant") {
  CategoricalParams params(Tensor({3}, {std::log(0.2), std::log(0.3), std::log(0.5)}));
  CategoricalParams flipped(Tensor({3}, {std::log(0.5), std::log(0.3), std::log(0.2)}));
  Tensor y({3}, {0.6, 0.3, 0.1});
  Tensor y_flipped({3}, {0.1, 0.3, 0.6});
  for (double tau : {0.5, 1.0, 2.0}) {
    CHECK(gumbel_softmax_log_density(y, params, tau) ==
          doctest::Approx(gumbel_softmax_log_density(y_flipped, flipped, tau)).epsilon(1e-12));
  }
}

TEST_CASE("log density accepts unnormalized logits") {
  Tensor y({3}, {0.2, 0.5, 0.3});
  CategoricalParams a(Tensor({3}, {0.1, 0.9, -0.4}));
  CategoricalParams b(Tensor({3}, {0.1 + 3.0, 0.9 + 3.0, -0.4 + 3.0}));
  CHECK(gumbel_softmax_log_density(y, a, 0.7) ==
        doctest::Approx(gumbel_softmax_log_density(y, b, 0.7)).epsilon(1e-12));
}

TEST_CASE("log density rejects bad simplex points") {
  CategoricalParams params(Tensor({2}, {0.0, 0.0}));
  CHECK_THROWS_AS(gumbel_softmax_log_density(Tensor({2}, {0.0, 1.0}), params, 1.0), Error);
  CHECK_THROWS_AS(gumbel_softmax_log_density(Tensor({2}, {0.6, 0.6}), params, 1.0), Error);
  CHECK_THROWS_AS(gumbel_softmax_log_density(Tensor({2}, {0.5, 0.5}), params, -1.0), Error);
}

TEST_CASE("sampler and density agree on histogram bins") {
  // chi-square over 50 bins of y_1 against bin masses from the quadrature
  RngStream rng(14);
  Tensor logits({2}, {std::log(0.35), std::log(0.65)});
  CategoricalParams params(logits);
  const double tau = 1.0;
  const std::size_t bins = 50, n = 100000;
  std::vector<double> counts(bins, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    Tensor y = gumbel_softmax_sample(params, tau, rng);
    std::size_t b = std::min(bins - 1, static_cast<std::size_t>(y[0] * bins));
    counts[b] += 1.0;
  }
  auto density = [&](const Tensor& y) {
    return std::exp(gumbel_softmax_log_density(y, params, tau));
  };
  std::vector<double> expected(bins, 0.0);
  for (std::size_t b = 0; b < bins; ++b) {
    auto slice_density = [&](const Tensor& y) { return density(y); };
    // integrate the marginal over this bin
    double lo = static_cast<double>(b) / bins, hi = static_cast<double>(b + 1) / bins;
    const int steps = 64;
    double acc = 0;
    for (int s = 0; s <= steps; ++s) {
      double y1 = lo + (hi - lo) * s / steps;
      y1 = std::min(std::max(y1, 1e-9), 1.0 - 1e-9);
      double w = (s == 0 || s == steps) ? 1.0 : (s % 2 ? 4.0 : 2.0);
      acc += w * slice_density(Tensor({2}, {y1, 1.0 - y1}));
    }
    expected[b] = acc * (hi - lo) / steps / 3.0 * n;
  }
  CHECK(chi2_test_passes(counts, expected, 0.01));
}

TEST_CASE("anneal schedule follows max(floor, exp(-r tN))") {
  AnnealSchedule s{.rate = 1e-4, .floor = 0.5, .update_every = 1};
  CHECK(anneal_temperature(0, s) == 1.0);
  CHECK(anneal_temperature(100000, s) == 0.5);  // exp(-10) ~ 4.5e-5 floored
  AnnealSchedule held{.rate = 1e-4, .floor = 0.5, .update_every = 500};
  CHECK(anneal_temperature(499, held) == 1.0);
  CHECK(anneal_temperature(500, held) == doctest::Approx(std::exp(-1e-4 * 500)));
  // non-increasing, bounded
  double prev = 1.0;
  for (std::uint64_t t = 0; t < 20000; t += 137) {
    double tau = anneal_temperature(t, held);
    CHECK(tau <= prev + 1e-15);
    CHECK(tau >= 0.5);
    CHECK(tau <= 1.0);
    prev = tau;
  }
}

TEST_CASE("distribution helpers hit closed forms") {
  CHECK(gaussian_kl_to_standard(Tensor({1}, {0.0}), Tensor({1}, {1.0})) == 0.0);
  CHECK(bernoulli_log_prob(Tensor({1}, {1.0}), Tensor({1}, {0.5})) ==
        doctest::Approx(std::log(0.5)));
  CategoricalParams uniform4(Tensor({4}));
  Tensor onehot({4});
  onehot[2] = 1.0;
  CHECK(categorical_log_prob(onehot, uniform4) == doctest::Approx(std::log(0.25)));
  CHECK_THROWS_AS(gaussian_kl_to_standard(Tensor({1}, {0.0}), Tensor({1}, {0.0})), Error);
}

TEST_CASE("pathwise gradient matches finite differences of the MC expectation") {
  // common random numbers: E(theta) = mean_i f(y(theta, g_i))
  Tensor logits({3}, {0.2, -0.1, 0.4});
  Tensor coeffs({3}, {1.0, 2.0, 3.0});
  const double tau = 1.0;
  const std::size_t n = 100000;

  std::vector<Tensor> noises;
  noises.reserve(n);
  RngStream rng(15);
  for (std::size_t i = 0; i < n; ++i) noises.push_back(sample_gumbel({3}, rng));

  auto mc_expectation = [&](const Tensor& theta) {
    std::vector<double> vals(n);
    for (std::size_t i = 0; i < n; ++i) {
      Tensor scaled({3});
      for (std::size_t j = 0; j < 3; ++j) scaled[j] = (theta[j] + noises[i][j]) / tau;
      Tensor y({3});
      softmax_span(scaled.data(), y.data());
      vals[i] = dot(y, coeffs);
    }
    return mean(vals);
  };

  // per-draw pathwise gradients through the graph
  std::vector<std::vector<double>> per_coord(3, std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i) {
    Graph g;
    Value x = g.parameter(logits);
    Value y = gs_with_noise(g, x, tau, noises[i]);
    auto grads = g.backward(sum_all(mul(y, g.constant(coeffs))));
    for (std::size_t j = 0; j < 3; ++j) per_coord[j][i] = grads.at(x.id)[j];
  }
  Tensor fd = finite_difference(mc_expectation, logits, 1e-4);
  for (std::size_t j = 0; j < 3; ++j) {
    double m = mean(per_coord[j]);
    double se = standard_error(per_coord[j]);
    CHECK(std::abs(m - fd[j]) < 3.0 * se + 1e-6);
  }
}
