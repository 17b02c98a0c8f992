#include "recdenoise/stats.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <vector>

namespace recdenoise {

double mean(std::span<const double> xs) {
  if (xs.empty()) return 0.0;
  // Shifted by the first value so that constant input averages exactly.
  double shifted = 0.0;
  for (double x : xs) shifted += x - xs.front();
  return xs.front() + shifted / static_cast<double>(xs.size());
}

double stddev(std::span<const double> xs) {
  if (xs.size() < 2) return 0.0;
  const double m = mean(xs);
  double ss = 0.0;
  for (double x : xs) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

double normal_sf(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

TestResult rank_sum_greater(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("rank_sum_greater: both samples must be non-empty");
  struct Obs {
    double value;
    bool from_a;
  };
  std::vector<Obs> all;
  all.reserve(a.size() + b.size());
  for (double v : a) all.push_back({v, true});
  for (double v : b) all.push_back({v, false});
  std::sort(all.begin(), all.end(), [](const Obs& x, const Obs& y) { return x.value < y.value; });

  const double n1 = static_cast<double>(a.size());
  const double n2 = static_cast<double>(b.size());
  const double n = n1 + n2;
  double rank_sum_a = 0.0, tie_term = 0.0;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    while (j < all.size() && all[j].value == all[i].value) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
    const double t = static_cast<double>(j - i);
    tie_term += t * t * t - t;
    for (std::size_t k = i; k < j; ++k)
      if (all[k].from_a) rank_sum_a += avg_rank;
    i = j;
  }
  TestResult r;
  r.statistic = rank_sum_a - n1 * (n1 + 1.0) / 2.0;
  const double var = n1 * n2 / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
  if (var <= 0.0) {
    r.p_value = 1.0;
    return r;
  }
  const double z = (r.statistic - n1 * n2 / 2.0 - 0.5) / std::sqrt(var);
  r.p_value = normal_sf(z);
  return r;
}

TestResult kendall_tau_decreasing(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw std::invalid_argument("kendall_tau: samples differ in length");
  const std::size_t n = x.size();
  if (n < 2) throw std::invalid_argument("kendall_tau: need at least two pairs");
  double concordant = 0.0, discordant = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double s = (x[i] - x[j]) * (y[i] - y[j]);
      if (s > 0) concordant += 1;
      if (s < 0) discordant += 1;
    }
  }
  auto tie_groups = [](std::span<const double> v) {
    std::map<double, double> counts;
    for (double e : v) counts[e] += 1;
    std::vector<double> t;
    for (const auto& [_, c] : counts)
      if (c > 1) t.push_back(c);
    return t;
  };
  const auto tx = tie_groups(x), ty = tie_groups(y);
  const double nd = static_cast<double>(n);
  const double n0 = nd * (nd - 1) / 2;
  double n1 = 0, n2 = 0, vt = 0, vu = 0, v1a = 0, v1b = 0, v2a = 0, v2b = 0;
  for (double t : tx) {
    n1 += t * (t - 1) / 2;
    vt += t * (t - 1) * (2 * t + 5);
    v1a += t * (t - 1);
    v2a += t * (t - 1) * (t - 2);
  }
  for (double u : ty) {
    n2 += u * (u - 1) / 2;
    vu += u * (u - 1) * (2 * u + 5);
    v1b += u * (u - 1);
    v2b += u * (u - 1) * (u - 2);
  }
  TestResult r;
  const double denom = std::sqrt((n0 - n1) * (n0 - n2));
  const double s = concordant - discordant;
  r.statistic = denom > 0 ? s / denom : 0.0;
  double var = (nd * (nd - 1) * (2 * nd + 5) - vt - vu) / 18.0 + v1a * v1b / (2 * nd * (nd - 1));
  if (nd > 2) var += v2a * v2b / (9 * nd * (nd - 1) * (nd - 2));
  r.p_value = var > 0 ? 1.0 - normal_sf(s / std::sqrt(var)) : 1.0;
  return r;
}

}  // namespace recdenoise
