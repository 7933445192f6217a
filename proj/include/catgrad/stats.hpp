#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace catgrad {

/// Sum with fixed pairwise reduction order. Used wherever reproducibility
/// of Monte Carlo means matters.
double pairwise_sum(std::span<const double> values);

double mean(std::span<const double> values);
double variance(std::span<const double> values);  // unbiased, n-1 divisor
double standard_error(std::span<const double> values);

/// Regularized lower incomplete gamma P(a, x).
double reg_lower_gamma(double a, double x);

double chi2_cdf(double x, double df);
/// Inverse chi-square CDF by bisection; p in (0, 1).
double chi2_quantile(double p, double df);

/// Pearson statistic sum (obs - exp)^2 / exp. Expected counts must be > 0.
double chi2_statistic(std::span<const double> observed, std::span<const double> expected);

/// Goodness-of-fit helper: true when observed counts are consistent with
/// expected counts at level alpha (df = bins - 1 unless overridden).
bool chi2_test_passes(std::span<const double> observed, std::span<const double> expected,
                      double alpha, int df_override = -1);

}  // namespace catgrad
