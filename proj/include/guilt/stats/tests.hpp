#pragma once

#include <span>

namespace guilt::stats {

double mean(std::span<const double> values);
/// Unbiased (n-1) sample variance.
double sample_variance(std::span<const double> values);
double sample_stddev(std::span<const double> values);

/// Pearson product-moment correlation. Throws DegenerateStatistic when either
/// side has zero variance or fewer than two points.
double pearson(std::span<const double> x, std::span<const double> y);

struct WelchResult {
  double t = 0.0;
  double df = 0.0;
  double p = 1.0;  // two-sided
};

/// Unequal-variance two-sample t test with Welch-Satterthwaite degrees of freedom.
/// Requires at least two values per sample and nonzero variance in at least one.
WelchResult welch_t_test(std::span<const double> a, std::span<const double> b);

/// One-sided p for the alternative mean(a) > mean(b).
double welch_greater_p(const WelchResult& result);

}  // namespace guilt::stats
