#pragma once

#include <span>

namespace recdenoise {

double mean(std::span<const double> xs);
/// Sample standard deviation (n - 1 denominator); 0 for fewer than two values.
double stddev(std::span<const double> xs);

/// Upper tail of the standard normal distribution.
double normal_sf(double z);

struct TestResult {
  double statistic = 0.0;
  double p_value = 1.0;
};

/// One-sided Wilcoxon rank-sum (Mann-Whitney) test of H1: `a` tends to be
/// larger than `b`. Normal approximation with tie and continuity correction;
/// `statistic` is U for `a`.
TestResult rank_sum_greater(std::span<const double> a, std::span<const double> b);

/// Kendall tau-b between x and y with a one-sided p-value for H1: tau < 0
/// (normal approximation of the tau-b variance).
TestResult kendall_tau_decreasing(std::span<const double> x, std::span<const double> y);

}  // namespace recdenoise
