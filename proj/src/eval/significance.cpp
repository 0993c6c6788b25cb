#include "guilt/eval/significance.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include <boost/math/distributions/normal.hpp>

#include "guilt/common/error.hpp"
#include "guilt/common/random.hpp"

namespace guilt::eval {

double mean_baseline(std::span<const double> train_targets, std::span<const double> test_targets) {
  if (train_targets.empty() || test_targets.empty()) throw InvalidInput("mean baseline needs train and test targets");
  // Deviations from a pivot keep the mean of a constant sample exact.
  const double pivot = train_targets[0];
  double dev = 0.0;
  for (double y : train_targets) dev += y - pivot;
  const double mean = pivot + dev / static_cast<double>(train_targets.size());
  double sum = 0.0;
  for (double y : test_targets) sum += (y - mean) * (y - mean);
  return sum / static_cast<double>(test_targets.size());
}

WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw InvalidInput("paired samples differ in length");
  if (a.empty()) throw InvalidInput("signed-rank test needs at least one pair");
  std::vector<double> d;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] != b[i]) d.push_back(a[i] - b[i]);
  }
  if (d.empty()) throw DegenerateStatistic("all paired differences are zero");
  const std::size_t n = d.size();

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return std::abs(d[x]) < std::abs(d[y]); });
  // Doubled midranks stay integral: a tie group over ranks i+1..j gets i+j+1.
  std::vector<long> rank2(n);
  double tie_term = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && std::abs(d[order[j]]) == std::abs(d[order[i]])) ++j;
    for (std::size_t k = i; k < j; ++k) rank2[order[k]] = static_cast<long>(i + j + 1);
    const double t = static_cast<double>(j - i);
    tie_term += t * t * t - t;
    i = j;
  }
  long w2 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (d[i] > 0) w2 += rank2[i];
  }

  WilcoxonResult out;
  out.n = n;
  out.w_plus = static_cast<double>(w2) / 2.0;
  if (n <= 25) {
    // Each pair contributes its rank to W+ with probability 1/2 under the null.
    const long total = std::accumulate(rank2.begin(), rank2.end(), 0L);
    std::vector<double> dist(static_cast<std::size_t>(total) + 1, 0.0);
    dist[0] = 1.0;
    long reach = 0;
    for (long r : rank2) {
      for (long s = reach; s >= 0; --s) {
        if (dist[static_cast<std::size_t>(s)] != 0.0) dist[static_cast<std::size_t>(s + r)] += dist[static_cast<std::size_t>(s)];
      }
      reach += r;
    }
    double below = 0.0;
    for (long s = 0; s <= w2; ++s) below += dist[static_cast<std::size_t>(s)];
    out.p = std::ldexp(below, -static_cast<int>(n));
    out.exact = true;
  } else {
    const double nn = static_cast<double>(n);
    const double mean = nn * (nn + 1) / 4.0;
    const double var = nn * (nn + 1) * (2 * nn + 1) / 24.0 - tie_term / 48.0;
    const double z = (out.w_plus - mean) / std::sqrt(var);
    out.p = boost::math::cdf(boost::math::normal(), z);
    out.exact = false;
  }
  out.p = std::min(1.0, out.p);
  return out;
}

std::pair<double, double> bootstrap_ci(std::span<const double> values, double level, std::size_t resamples,
                                       std::uint64_t seed) {
  if (values.empty()) throw InvalidInput("bootstrap needs at least one value");
  if (!(level > 0.0 && level < 1.0)) throw InvalidInput("confidence level must be in (0,1)");
  if (resamples == 0) throw InvalidInput("bootstrap needs at least one resample");
  Rng rng(seed);
  const std::size_t n = values.size();
  // Summing deviations from a pivot keeps a constant sample's means exact.
  const double pivot = values[0];
  std::vector<double> means(resamples);
  for (auto& m : means) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += values[rng.uniform_index(n)] - pivot;
    m = pivot + s / static_cast<double>(n);
  }
  std::sort(means.begin(), means.end());
  auto quantile = [&](double q) {
    const double pos = q * static_cast<double>(resamples - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, resamples - 1);
    return means[lo] + (pos - static_cast<double>(lo)) * (means[hi] - means[lo]);
  };
  const double alpha = (1.0 - level) / 2.0;
  return {quantile(alpha), quantile(1.0 - alpha)};
}

}  // namespace guilt::eval
