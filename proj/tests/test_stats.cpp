#include <doctest.h>

#include <cmath>
#include <numbers>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "copreg/random.hpp"
#include "copreg/stats.hpp"

using namespace copreg;

namespace {

// O(n^2) tau-b straight from the definition.
double brute_kendall(const std::vector<double>& x, const std::vector<double>& y) {
  double conc = 0, disc = 0, tx = 0, ty = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (std::size_t j = i + 1; j < x.size(); ++j) {
      const double dx = x[i] - x[j];
      const double dy = y[i] - y[j];
      if (dx == 0 && dy == 0) continue;
      if (dx == 0) {
        ++tx;
      } else if (dy == 0) {
        ++ty;
      } else if (dx * dy > 0) {
        ++conc;
      } else {
        ++disc;
      }
    }
  }
  return (conc - disc) / std::sqrt((conc + disc + tx) * (conc + disc + ty));
}

// P(X <= x, Y <= y) = int_{-inf}^{x} phi(s) Phi((y - r s)/sqrt(1-r^2)) ds
double bvn_by_quadrature(double x, double y, double r) {
  boost::math::quadrature::gauss_kronrod<double, 61> gk;
  const double sr = std::sqrt(1.0 - r * r);
  auto f = [&](double s) {
    return std::exp(stats::normal_log_pdf(s)) * stats::normal_cdf((y - r * s) / sr);
  };
  return gk.integrate(f, -40.0, x, 15, 1e-15);
}

}  // namespace

TEST_CASE("normal helpers") {
  CHECK(stats::normal_cdf(0.0) == 0.5);
  CHECK(stats::normal_quantile(0.975) == doctest::Approx(1.959963984540054).epsilon(1e-14));
  for (double z = -8.0; z <= 3.0; z += 0.37)
    CHECK(std::abs(stats::normal_quantile(stats::normal_cdf(z)) - z) < 1e-9);
  // Reference values from 30-digit arithmetic.
  CHECK(stats::normal_log_cdf(-40.0) == doctest::Approx(-804.608442013753788).epsilon(1e-9));
  CHECK(stats::normal_log_cdf(-31.0) == doctest::Approx(-484.853963627179289).epsilon(1e-9));
  CHECK(stats::normal_log_cdf(-2.0) == doctest::Approx(std::log(stats::normal_cdf(-2.0))));
}

TEST_CASE("bivariate normal cdf against quadrature and identities") {
  for (double r : {-0.95, -0.6, -0.2, 0.0, 0.25, 0.5, 0.8, 0.93, 0.99}) {
    CHECK(stats::bivariate_normal_cdf(0.0, 0.0, r) ==
          doctest::Approx(0.25 + std::asin(r) / (2.0 * std::numbers::pi)).epsilon(1e-13));
    for (double x : {-2.5, -0.7, 0.3, 1.9}) {
      for (double y : {-1.8, 0.0, 0.9, 2.6}) {
        CHECK(std::abs(stats::bivariate_normal_cdf(x, y, r) - bvn_by_quadrature(x, y, r)) < 1e-10);
      }
    }
  }
  CHECK(stats::bivariate_normal_cdf(0.4, -0.3, 0.0) ==
        doctest::Approx(stats::normal_cdf(0.4) * stats::normal_cdf(-0.3)).epsilon(1e-14));
  CHECK(stats::bivariate_normal_cdf(0.4, -0.3, 1.0) == doctest::Approx(stats::normal_cdf(-0.3)));
  CHECK(stats::bivariate_normal_cdf(0.4, 0.9, -1.0) ==
        doctest::Approx(stats::normal_cdf(0.4) + stats::normal_cdf(0.9) - 1.0));
}

TEST_CASE("empirical quantiles and ranks") {
  const std::vector<double> x{4.0, 1.0, 3.0, 2.0, 5.0};
  CHECK(stats::quantile(x, 0.5) == 3.0);
  CHECK(stats::quantile(x, 0.1) == doctest::Approx(1.4));
  CHECK(stats::quantile(x, 0.0) == 1.0);
  CHECK(stats::quantile(x, 1.0) == 5.0);
  const auto r = stats::ranks(std::vector<double>{10.0, 20.0, 10.0, 5.0});
  CHECK(r == std::vector<double>{2.5, 4.0, 2.5, 1.0});
}

TEST_CASE("kendall tau matches the O(n^2) definition, including ties") {
  Rng rng = make_rng(3);
  for (int rep = 0; rep < 5; ++rep) {
    std::vector<double> x(300), y(300);
    for (std::size_t i = 0; i < x.size(); ++i) {
      x[i] = std::round(4.0 * standard_normal(rng));
      y[i] = std::round(3.0 * (0.5 * x[i] + standard_normal(rng)));
    }
    CHECK(stats::kendall_tau(x, y) == doctest::Approx(brute_kendall(x, y)).epsilon(1e-12));
  }
  const std::vector<double> a{1, 2, 3, 4}, b{10, 20, 30, 40};
  CHECK(stats::kendall_tau(a, b) == doctest::Approx(1.0));
  CHECK(stats::spearman(a, b) == doctest::Approx(1.0));
}

TEST_CASE("ks test") {
  CHECK(stats::kolmogorov_sf(1.358) == doctest::Approx(0.05).epsilon(0.01));
  CHECK(stats::kolmogorov_sf(0.5) == doctest::Approx(0.9639).epsilon(1e-3));
  Rng rng = make_rng(11);
  std::vector<double> u(5000);
  for (auto& v : u) v = uniform01(rng);
  CHECK(stats::ks_test(u, [](double t) { return t; }).p_value > 0.01);
  for (auto& v : u) v = v * v;
  CHECK(stats::ks_test(u, [](double t) { return t; }).p_value < 1e-6);
}
