#include <doctest.h>

#include <cmath>

#include "catgrad/stats.hpp"
#include "catgrad/tensor.hpp"

using namespace catgrad;

TEST_CASE("pairwise sum matches plain sum") {
  std::vector<double> v(1000);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::sin(static_cast<double>(i));
  double plain = 0;
  for (double x : v) plain += x;
  CHECK(pairwise_sum(v) == doctest::Approx(plain).epsilon(1e-12));
}

TEST_CASE("variance of a known sample") {
  std::vector<double> v{1.0, 2.0, 3.0, 4.0};
  CHECK(mean(v) == doctest::Approx(2.5));
  CHECK(variance(v) == doctest::Approx(5.0 / 3.0));
  CHECK(standard_error(v) == doctest::Approx(std::sqrt(5.0 / 12.0)));
}

TEST_CASE("chi2 quantiles match reference values") {
  // Reference values from standard chi-square tables.
  CHECK(chi2_quantile(0.99, 2) == doctest::Approx(9.210340).epsilon(1e-5));
  CHECK(chi2_quantile(0.99, 3) == doctest::Approx(11.344867).epsilon(1e-5));
  CHECK(chi2_quantile(0.99, 9) == doctest::Approx(21.665994).epsilon(1e-5));
  CHECK(chi2_quantile(0.99, 49) == doctest::Approx(74.919474).epsilon(1e-5));
}

TEST_CASE("chi2 cdf round-trips the quantile") {
  for (double df : {1.0, 5.0, 20.0}) {
    for (double p : {0.1, 0.5, 0.95}) {
      CHECK(chi2_cdf(chi2_quantile(p, df), df) == doctest::Approx(p).epsilon(1e-9));
    }
  }
}

TEST_CASE("chi2 statistic") {
  std::vector<double> obs{10, 20, 30};
  std::vector<double> expd{20, 20, 20};
  CHECK(chi2_statistic(obs, expd) == doctest::Approx(10.0));
  CHECK(chi2_test_passes(obs, obs, 0.01));
  CHECK_THROWS_AS(chi2_statistic(obs, std::vector<double>{1, 2}), Error);
}
