#pragma once

#include <functional>
#include <span>
#include <vector>

namespace copreg::stats {

inline constexpr double kLogSqrt2Pi = 0.91893853320467274178;

double normal_cdf(double z);
/// log Phi(z), accurate in the far lower tail.
double normal_log_cdf(double z);
double normal_quantile(double q);
double normal_log_pdf(double z);

/// P(X <= x, Y <= y) for a standard bivariate normal with correlation r.
///
/// Genz's BVND algorithm (Drezner-Wesolowsky reduction with 6/12/20 point
/// Gauss-Legendre rules selected by |r|); absolute error below 1e-15 in double
/// precision. |r| == 1 is handled as the degenerate comonotone/countermonotone case.
double bivariate_normal_cdf(double x, double y, double r);

double mean(std::span<const double> x);
/// Unbiased (n - 1) variance.
double variance(std::span<const double> x);
/// Type-7 (linear interpolation) empirical quantile, the default of most
/// statistical environments. Does not require sorted input.
double quantile(std::span<const double> x, double q);
double quantile_sorted(std::span<const double> sorted, double q);

/// Average ranks (1-based), ties receive the mean of their positions.
std::vector<double> ranks(std::span<const double> x);
double pearson(std::span<const double> x, std::span<const double> y);
double spearman(std::span<const double> x, std::span<const double> y);
/// Kendall tau-b in O(n log n) (Knight's algorithm).
double kendall_tau(std::span<const double> x, std::span<const double> y);

struct KsResult {
  double statistic;
  double p_value;
};

/// One-sample Kolmogorov-Smirnov test of x against a continuous cdf; p-value
/// from the asymptotic Kolmogorov distribution with Stephens' small-sample
/// correction.
KsResult ks_test(std::span<const double> x, const std::function<double(double)>& cdf);
/// Survival function of the Kolmogorov distribution, P(K > t).
double kolmogorov_sf(double t);

}  // namespace copreg::stats
