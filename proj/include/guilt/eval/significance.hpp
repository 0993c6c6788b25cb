#pragma once

#include <cstdint>
#include <span>
#include <utility>

namespace guilt::eval {

/// MSE of predicting the training mean for every test target. Throws
/// InvalidInput when either side is empty.
double mean_baseline(std::span<const double> train_targets, std::span<const double> test_targets);

struct WilcoxonResult {
  double w_plus = 0.0;      // sum of ranks of positive differences a - b
  std::size_t n = 0;        // pairs with nonzero difference
  double p = 1.0;           // one-sided: a tends to be smaller than b
  bool exact = true;
};

/// Paired signed-rank test of "A is better (lower) than B". Zero differences
/// are dropped and ties get midranks. The null distribution is exact for
/// n <= 25 and a tie-corrected normal approximation above. Throws InvalidInput
/// for unequal or empty samples and DegenerateStatistic when every
/// difference is zero.
WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b);

/// Percentile bootstrap interval for the mean. Quantiles interpolate linearly
/// between order statistics of the resampled means.
std::pair<double, double> bootstrap_ci(std::span<const double> values, double level = 0.95,
                                       std::size_t resamples = 10000, std::uint64_t seed = 0);

}  // namespace guilt::eval
