#include <cmath>
#include <tuple>

#include "doctest.h"
#include "ifval/rng.hpp"
#include "ifval/stats.hpp"

using namespace ifval;

namespace {

// Numerical integration oracle for the F-distribution tail (Simpson).
// Substituting x = u^2 removes the integrable singularity at 0 that the
// density has for df1 = 1, so the integrand is smooth on [0, sqrt(f)].
double f_sf_numeric(double f, double d1, double d2) {
  auto integrand = [&](double u) {
    u = std::max(u, 1e-9);
    const double x = u * u;
    const double ln = 0.5 * d1 * std::log(d1 / d2) +
                      (0.5 * d1 - 1.0) * std::log(x) -
                      0.5 * (d1 + d2) * std::log(1.0 + d1 * x / d2) +
                      std::lgamma(0.5 * (d1 + d2)) - std::lgamma(0.5 * d1) -
                      std::lgamma(0.5 * d2) + std::log(2.0 * u);
    return std::exp(ln);
  };
  const int n = 200000;
  const double top = std::sqrt(f);
  const double h = top / n;
  double acc = integrand(0.0) + integrand(top);
  for (int i = 1; i < n; ++i) acc += integrand(i * h) * (i % 2 ? 4.0 : 2.0);
  return 1.0 - acc * h / 3.0;
}

}  // namespace

TEST_SUITE_BEGIN("stats");

TEST_CASE("spearman oracles") {
  CHECK(spearman({1, 2, 3, 4}, {1, 2, 3, 4}) == doctest::Approx(1.0));
  CHECK(spearman({1, 2, 3, 4}, {4, 3, 2, 1}) == doctest::Approx(-1.0));
  // Brute-force rank formula 1 - 6*sum(d^2)/(n(n^2-1)) gives 0.8.
  CHECK(spearman({1, 2, 3, 4}, {1, 3, 2, 4}) == doctest::Approx(0.8));
  CHECK_THROWS_WITH_AS(spearman({1, 1, 1}, {1, 2, 3}),
                       doctest::Contains("undefined correlation"),
                       std::invalid_argument);
  CHECK_THROWS_AS(spearman({1}, {2}), std::invalid_argument);
}

TEST_CASE("spearman properties: symmetry, monotone invariance, reversal") {
  RngStream s(5);
  for (int trial = 0; trial < 20; ++trial) {
    const Vec a = s.normal_vec(15);
    const Vec b = s.normal_vec(15);
    const double rho = spearman(a, b);
    CHECK(spearman(b, a) == doctest::Approx(rho).epsilon(1e-12));
    // Random strictly increasing map: x -> exp(c*x) + d*x with c,d > 0.
    const double c = 0.1 + s.uniform(), d = 0.1 + s.uniform();
    Vec a2 = a;
    for (auto& x : a2) x = std::exp(c * x) + d * x;
    CHECK(spearman(a2, b) == doctest::Approx(rho).epsilon(1e-12));
    Vec nb = b;
    for (auto& x : nb) x = -x;
    CHECK(spearman(a, nb) == doctest::Approx(-rho).epsilon(1e-12));
  }
}

TEST_CASE("pearson oracles") {
  CHECK(pearson({1, 2, 3}, {5, 7, 9}) == doctest::Approx(1.0));   // b = 2a+3
  CHECK(pearson({1, 2, 3}, {-1, -2, -3}) == doctest::Approx(-1.0));
  CHECK(pearson({1, 2, 3}, {1, 2, 4}) == doctest::Approx(0.98198).epsilon(1e-4));
  CHECK_THROWS_WITH_AS(pearson({2, 2, 2}, {1, 2, 3}),
                       doctest::Contains("undefined"), std::invalid_argument);
}

TEST_CASE("average ranks share the mean on ties") {
  const Vec r = average_ranks({10, 20, 20, 30});
  CHECK(r == Vec{1.0, 2.5, 2.5, 4.0});
}

TEST_CASE("anova oracles") {
  SUBCASE("identical groups: F = 0, p = 1") {
    const AnovaResult r = anova_oneway({{1, 2, 3}, {1, 2, 3}});
    CHECK(r.f_stat == doctest::Approx(0.0));
    CHECK(r.p_value == doctest::Approx(1.0));
    CHECK_FALSE(r.degenerate);
  }
  SUBCASE("hand-computed table") {
    const AnovaResult r = anova_oneway({{1, 2, 3}, {2, 3, 4}, {3, 4, 5}});
    CHECK(r.f_stat == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(r.p_value == doctest::Approx(0.125).epsilon(8e-3));
    CHECK(r.df_between == 2);
    CHECK(r.df_within == 6);
  }
  SUBCASE("permutation invariance") {
    const AnovaResult a = anova_oneway({{1, 5, 3}, {2, 2, 8}});
    const AnovaResult b = anova_oneway({{3, 1, 5}, {8, 2, 2}});
    CHECK(a.f_stat == doctest::Approx(b.f_stat).epsilon(1e-12));
    CHECK(a.p_value == doctest::Approx(b.p_value).epsilon(1e-12));
  }
  SUBCASE("zero within-variance with unequal means is degenerate") {
    const AnovaResult r = anova_oneway({{1, 1}, {2, 2}});
    CHECK(r.degenerate);
    CHECK(r.p_value == 0.0);
  }
  SUBCASE("preconditions") {
    CHECK_THROWS_AS(anova_oneway({{1, 2}}), std::invalid_argument);
    CHECK_THROWS_AS(anova_oneway({{1, 2}, {1}}), std::invalid_argument);
  }
}

TEST_CASE("anova p-value decreases as one group shifts away") {
  const Vec base{0.0, 0.5, -0.5, 0.2, -0.2};
  double prev_p = 1.1;
  for (double offset : {0.1, 0.4, 0.8, 1.6}) {
    Vec shifted = base;
    for (auto& x : shifted) x += offset;
    const AnovaResult r = anova_oneway({base, shifted});
    CHECK(r.p_value < prev_p);
    prev_p = r.p_value;
  }
}

TEST_CASE("F tail matches numerical integration for df <= 100") {
  const std::tuple<double, double, double> cases[] = {
      {2.0, 6.0, 3.0}, {1.0, 10.0, 4.9}, {5.0, 40.0, 1.7},
      {10.0, 100.0, 2.2}, {100.0, 100.0, 1.3}};
  for (auto [d1, d2, f] : cases) {
    CHECK(std::abs(f_sf(f, d1, d2) - f_sf_numeric(f, d1, d2)) < 1e-6);
  }
}

TEST_CASE("t quantile matches reference values") {
  CHECK(t_quantile(0.95, 10) == doctest::Approx(2.2281).epsilon(1e-3));
  CHECK(t_quantile(0.95, 1) == doctest::Approx(12.706).epsilon(1e-3));
  CHECK(t_quantile(0.95, 1000) == doctest::Approx(1.9623).epsilon(1e-3));
}

TEST_CASE("interval95 oracles") {
  SUBCASE("constant samples give a point interval") {
    const Interval iv = interval95({4, 4, 4, 4}, IntervalMethod::percentile);
    CHECK(iv.low == doctest::Approx(4.0));
    CHECK(iv.high == doctest::Approx(4.0));
  }
  SUBCASE("1..100 percentile interpolation") {
    Vec v(100);
    for (int i = 0; i < 100; ++i) v[i] = i + 1;
    const Interval iv = interval95(v, IntervalMethod::percentile);
    CHECK(iv.low == doctest::Approx(3.475).epsilon(1e-10));
    CHECK(iv.high == doctest::Approx(97.525).epsilon(1e-10));
  }
  SUBCASE("t interval is centered on the mean for symmetric samples") {
    const Vec v{-2, -1, 0, 1, 2};
    const Interval iv = interval95(v, IntervalMethod::t);
    CHECK(iv.low == doctest::Approx(-iv.high).epsilon(1e-12));
    CHECK(iv.low <= iv.high);
  }
  SUBCASE("needs at least two samples") {
    CHECK_THROWS_AS(interval95({1.0}, IntervalMethod::t), std::invalid_argument);
  }
}

TEST_SUITE_END();
