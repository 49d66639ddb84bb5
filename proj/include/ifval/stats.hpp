#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "ifval/linalg.hpp"

namespace ifval {

struct AnovaResult {
  double f_stat = 0.0;
  double p_value = 1.0;
  std::size_t df_between = 0;
  std::size_t df_within = 0;
  bool degenerate = false;  // zero within-group variance with unequal means
};

enum class IntervalMethod { percentile, t };

struct Interval {
  double low = 0.0;
  double high = 0.0;
  double level = 0.95;
  IntervalMethod method = IntervalMethod::percentile;
};

// Average ranks (ties share the mean rank).
Vec average_ranks(const Vec& v);

// Pearson correlation of average ranks; throws on constant input.
double spearman(const Vec& a, const Vec& b);

// Product-moment correlation; throws on zero variance.
double pearson(const Vec& a, const Vec& b);

AnovaResult anova_oneway(const std::vector<Vec>& groups);

Interval interval95(const Vec& samples, IntervalMethod method);

// Regularized incomplete beta I_x(a, b) by continued fraction.
double incomplete_beta(double a, double b, double x);

// Survival function of the F distribution, P(F > f).
double f_sf(double f, double df1, double df2);

// Two-sided Student-t quantile t_{(1+level)/2, df}.
double t_quantile(double level, double df);

}  // namespace ifval
