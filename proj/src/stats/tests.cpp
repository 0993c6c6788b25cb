#include "guilt/stats/tests.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <cmath>
#include <numeric>

#include "guilt/common/error.hpp"

namespace guilt::stats {

double mean(std::span<const double> values) {
  if (values.empty()) throw DegenerateStatistic("mean of empty sample");
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

double sample_variance(std::span<const double> values) {
  if (values.size() < 2) throw DegenerateStatistic("variance needs two values");
  const double m = mean(values);
  double ss = 0.0;
  for (double v : values) ss += (v - m) * (v - m);
  return ss / static_cast<double>(values.size() - 1);
}

double sample_stddev(std::span<const double> values) { return std::sqrt(sample_variance(values)); }

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw DegenerateStatistic("pearson needs paired samples of size >= 2");
  const double mx = mean(x), my = mean(y);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw DegenerateStatistic("pearson with a constant variable");
  return sxy / std::sqrt(sxx * syy);
}

WelchResult welch_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) throw DegenerateStatistic("welch test needs two values per sample");
  const double va = sample_variance(a) / static_cast<double>(a.size());
  const double vb = sample_variance(b) / static_cast<double>(b.size());
  if (va + vb == 0.0) throw DegenerateStatistic("welch test with zero variance in both samples");
  WelchResult r;
  r.t = (mean(a) - mean(b)) / std::sqrt(va + vb);
  r.df = (va + vb) * (va + vb) /
         (va * va / static_cast<double>(a.size() - 1) + vb * vb / static_cast<double>(b.size() - 1));
  const boost::math::students_t dist(r.df);
  r.p = std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t))));
  return r;
}

double welch_greater_p(const WelchResult& result) {
  const boost::math::students_t dist(result.df);
  return boost::math::cdf(boost::math::complement(dist, result.t));
}

}  // namespace guilt::stats
