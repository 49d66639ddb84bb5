#include "ifval/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace ifval {

Vec average_ranks(const Vec& v) {
  const std::size_t n = v.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  Vec ranks(n, 0.0);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;  // 1-based
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

namespace {

double pearson_impl(const Vec& a, const Vec& b, const char* who) {
  if (a.size() != b.size() || a.size() < 2) {
    throw std::invalid_argument(std::string(who) + ": need equal lengths >= 2");
  }
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa <= 0.0 || sbb <= 0.0) {
    throw std::invalid_argument(std::string(who) +
                                ": undefined correlation (zero variance input)");
  }
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

}  // namespace

double spearman(const Vec& a, const Vec& b) {
  return pearson_impl(average_ranks(a), average_ranks(b), "spearman");
}

double pearson(const Vec& a, const Vec& b) { return pearson_impl(a, b, "pearson"); }

namespace {

double log_gamma(double x) { return std::lgamma(x); }

// Continued fraction for the incomplete beta function (Lentz).
double beta_cf(double a, double b, double x) {
  constexpr int kMaxIter = 300;
  constexpr double kEps = 1e-15;
  constexpr double kTiny = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) break;
  }
  return h;
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
  if (!(a > 0) || !(b > 0)) throw std::invalid_argument("incomplete_beta: a,b > 0");
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double ln_bt = log_gamma(a + b) - log_gamma(a) - log_gamma(b) +
                       a * std::log(x) + b * std::log1p(-x);
  const double bt = std::exp(ln_bt);
  if (x < (a + 1.0) / (a + b + 2.0)) {
    return bt * beta_cf(a, b, x) / a;
  }
  return 1.0 - bt * beta_cf(b, a, 1.0 - x) / b;
}

double f_sf(double f, double df1, double df2) {
  if (f <= 0.0) return 1.0;
  return incomplete_beta(df2 / 2.0, df1 / 2.0, df2 / (df2 + df1 * f));
}

AnovaResult anova_oneway(const std::vector<Vec>& groups) {
  if (groups.size() < 2) throw std::invalid_argument("anova: need >= 2 groups");
  std::size_t total = 0;
  for (const auto& g : groups) {
    if (g.size() < 2) throw std::invalid_argument("anova: each group needs >= 2 samples");
    total += g.size();
  }
  double grand = 0.0;
  for (const auto& g : groups)
    for (double x : g) grand += x;
  grand /= static_cast<double>(total);

  double ss_between = 0.0, ss_within = 0.0;
  bool means_differ = false;
  double first_mean = 0.0;
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const auto& g = groups[gi];
    double m = 0.0;
    for (double x : g) m += x;
    m /= static_cast<double>(g.size());
    if (gi == 0) first_mean = m;
    if (std::abs(m - first_mean) > 0) means_differ = true;
    ss_between += static_cast<double>(g.size()) * (m - grand) * (m - grand);
    for (double x : g) ss_within += (x - m) * (x - m);
  }
  AnovaResult r;
  r.df_between = groups.size() - 1;
  r.df_within = total - groups.size();
  const double ms_between = ss_between / static_cast<double>(r.df_between);
  const double ms_within = ss_within / static_cast<double>(r.df_within);
  if (ms_within <= 0.0) {
    if (means_differ) {
      r.f_stat = std::numeric_limits<double>::infinity();
      r.p_value = 0.0;
      r.degenerate = true;
    } else {
      r.f_stat = 0.0;
      r.p_value = 1.0;
    }
    return r;
  }
  r.f_stat = ms_between / ms_within;
  r.p_value = f_sf(r.f_stat, static_cast<double>(r.df_between),
                   static_cast<double>(r.df_within));
  return r;
}

double t_quantile(double level, double df) {
  // Inverts the t CDF by bisection on P(T <= t) = 1 - I_x(df/2, 1/2)/2.
  const double target = 0.5 * (1.0 + level);
  auto cdf = [df](double t) {
    if (t == 0.0) return 0.5;
    const double x = df / (df + t * t);
    const double tail = 0.5 * incomplete_beta(df / 2.0, 0.5, x);
    return t > 0 ? 1.0 - tail : tail;
  };
  double lo = 0.0, hi = 1.0;
  while (cdf(hi) < target) hi *= 2.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (cdf(mid) < target ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

Interval interval95(const Vec& samples, IntervalMethod method) {
  if (samples.size() < 2) throw std::invalid_argument("interval95: need >= 2 samples");
  Interval iv;
  iv.level = 0.95;
  iv.method = method;
  if (method == IntervalMethod::percentile) {
    Vec s = samples;
    std::sort(s.begin(), s.end());
    auto pct = [&s](double q) {
      const double pos = q * static_cast<double>(s.size() - 1);
      const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
      const std::size_t hi = std::min(lo + 1, s.size() - 1);
      const double frac = pos - static_cast<double>(lo);
      return s[lo] + frac * (s[hi] - s[lo]);
    };
    iv.low = pct(0.025);
    iv.high = pct(0.975);
  } else {
    const double n = static_cast<double>(samples.size());
    double m = 0.0;
    for (double x : samples) m += x;
    m /= n;
    double var = 0.0;
    for (double x : samples) var += (x - m) * (x - m);
    var /= (n - 1.0);
    const double half = t_quantile(0.95, n - 1.0) * std::sqrt(var / n);
    iv.low = m - half;
    iv.high = m + half;
  }
  return iv;
}

}  // namespace ifval
