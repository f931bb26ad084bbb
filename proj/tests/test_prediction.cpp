#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "copreg/error.hpp"
#include "copreg/prediction.hpp"
#include "copreg/stats.hpp"
#include "copreg/synthetic.hpp"

using namespace copreg;

namespace {

McmcConfig quick_config(std::uint64_t seed = 5) {
  McmcConfig c;
  c.n_chains = 2;
  c.n_iterations = 1500;
  c.burn_in = 500;
  c.target_kept = 1000;
  c.seed = seed;
  return c;
}

/// y1 = 0.5 + 0.3 x + 0.8 y2 - 0.2 y2^2 + 0.05 y2^3 + N(0, 0.25), y2 ~ N(0, 1).
Dataset cubic_data(std::size_t n, std::uint64_t seed, double noise_coef = 0.0) {
  Rng rng = make_rng(seed);
  Dataset d;
  d.covariate_names = {"x", "noise"};
  d.x.resize(static_cast<Eigen::Index>(n), 2);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = standard_normal(rng), z = standard_normal(rng), y2 = standard_normal(rng);
    d.x(static_cast<Eigen::Index>(i), 0) = x;
    d.x(static_cast<Eigen::Index>(i), 1) = z;
    d.y2.push_back(y2);
    d.y1.push_back(0.5 + 0.3 * x + noise_coef * z + 0.8 * y2 - 0.2 * y2 * y2 + 0.05 * y2 * y2 * y2 +
                   0.5 * standard_normal(rng));
  }
  return d;
}

ModelSpec bivariate(MarginalFamily f1, MarginalFamily f2, CopulaFamily c, std::vector<double> beta,
                    Rotation rot = Rotation::R0) {
  const auto s = make_structure(f1, f2, CopulaChoice{c, rot}, {});
  return with_coefficients(s, beta);
}

/// Conditional density normalized by a fine trapezoid rule; returns grid,
/// density and cumulative distribution.
struct NumericConditional {
  std::vector<double> y, f, cdf;
  double mean = 0.0;
};

NumericConditional normalize(const ModelSpec& m, double y2, double lo, double hi, int points = 200001) {
  const auto p = observation_params(m, std::span<const double>{});
  NumericConditional out;
  const double h = (hi - lo) / (points - 1);
  for (int k = 0; k < points; ++k) {
    const double y = lo + h * k;
    double f = 0.0;
    if (y > support_lower(*p.margin1)) f = conditional_density(*p.copula, y, y2, *p.margin1, *p.margin2);
    out.y.push_back(y);
    out.f.push_back(f);
  }
  double z = 0.0, m1 = 0.0;
  out.cdf.assign(out.y.size(), 0.0);
  for (std::size_t k = 1; k < out.y.size(); ++k) {
    z += 0.5 * h * (out.f[k] + out.f[k - 1]);
    m1 += 0.5 * h * (out.y[k] * out.f[k] + out.y[k - 1] * out.f[k - 1]);
    out.cdf[k] = z;
  }
  for (auto& c : out.cdf) c /= z;
  out.mean = m1 / z;
  return out;
}

double interpolate_cdf(const NumericConditional& n, double y) {
  if (y <= n.y.front()) return 0.0;
  if (y >= n.y.back()) return 1.0;
  const double h = n.y[1] - n.y[0];
  const auto k = static_cast<std::size_t>((y - n.y.front()) / h);
  const double t = (y - n.y[k]) / h;
  return n.cdf[k] + t * (n.cdf[k + 1] - n.cdf[k]);
}

}  // namespace

TEST_CASE("polynomial baseline matches the normal equations") {
  const auto d = cubic_data(500, 1);
  const auto b = fit_polynomial_baseline(d, {"x"});
  REQUIRE(b.term_labels == std::vector<std::string>{"(Intercept)", "x", "y2", "y2^2", "y2^3"});
  Eigen::MatrixXd x(500, 5);
  for (Eigen::Index i = 0; i < 500; ++i) {
    const double y2 = d.y2[static_cast<std::size_t>(i)];
    x.row(i) << 1.0, d.x(i, 0), y2, y2 * y2, y2 * y2 * y2;
  }
  const Eigen::Map<const Eigen::VectorXd> y(d.y1.data(), 500);
  const Eigen::MatrixXd xtx = x.transpose() * x;
  const Eigen::VectorXd beta = xtx.ldlt().solve(x.transpose() * y);
  const double s2 = (y - x * beta).squaredNorm() / 495.0;
  const Eigen::VectorXd se = (s2 * xtx.inverse().diagonal()).cwiseSqrt();
  for (Eigen::Index j = 0; j < 5; ++j) {
    CHECK(b.coefficients[j] == doctest::Approx(beta[j]).epsilon(1e-9));
    CHECK(b.standard_errors[j] == doctest::Approx(se[j]).epsilon(1e-8));
  }
  CHECK(b.sigma2 == doctest::Approx(s2).epsilon(1e-10));
  CHECK(b.predict(d, 3) == doctest::Approx(x.row(3).dot(beta)).epsilon(1e-10));
  CHECK(b.coefficient_table().find("y2^3") != std::string::npos);
  const auto p = b.p_values();
  CHECK(p[1] < 1e-6);
}

TEST_CASE("polynomial baseline recovers the cubic") {
  int within = 0, total = 0;
  for (std::uint64_t r = 0; r < 20; ++r) {
    const auto b = fit_polynomial_baseline(cubic_data(400, 100 + r), {"x"});
    const double truth[] = {0.8, -0.2, 0.05};
    for (int k = 0; k < 3; ++k) {
      ++total;
      within += std::abs(b.coefficients[2 + k] - truth[k]) < 2.0 * b.standard_errors[2 + k] ? 1 : 0;
    }
  }
  CHECK(within >= 0.9 * total);
}

TEST_CASE("polynomial baseline errors and pruning") {
  auto d = cubic_data(100, 2);
  std::fill(d.y2.begin(), d.y2.end(), 1.5);
  try {
    fit_polynomial_baseline(d, {"x"});
    FAIL("expected rank deficiency");
  } catch (const StructuralError& e) {
    CHECK(std::string(e.what()).find("y2") != std::string::npos);
  }
  CHECK_THROWS_AS(fit_polynomial_baseline(cubic_data(4, 2), {"x"}), StructuralError);
  CHECK_THROWS_AS(fit_polynomial_baseline(cubic_data(50, 2), {"nope"}), StructuralError);

  const auto pruned = prune_polynomial_baseline(cubic_data(800, 3), {"x", "noise"});
  CHECK(pruned.covariates == std::vector<std::string>{"x"});
  const auto kept = prune_polynomial_baseline(cubic_data(800, 3, 0.4), {"x", "noise"});
  CHECK(kept.covariates == std::vector<std::string>{"x", "noise"});
}

TEST_CASE("baseline predictions are affine equivariant") {
  auto d = cubic_data(300, 4);
  d.standardization1 = Standardization::birth_weight_gaussian();
  d.standardization2 = Standardization::gestational_age_dagum();
  for (auto& y : d.y2) y = std::abs(y) + 0.5;
  const auto raw = restandardize(d, Standardization::identity(), Standardization::identity());
  const auto on_std = fit_polynomial_baseline(d, {"x"});
  const auto on_raw = fit_polynomial_baseline(raw, {"x"});
  for (std::size_t i = 0; i < 20; ++i) {
    const double y2 = raw.y2[i];
    const std::vector<double> xv{raw.x(static_cast<Eigen::Index>(i), 0)};
    CHECK(std::abs(on_std.predict_raw(y2, xv) - on_raw.predict_raw(y2, xv)) < 1e-9);
  }
}

TEST_CASE("independence conditional equals the first margin") {
  const auto m = bivariate(MarginalFamily::Gaussian, MarginalFamily::Gaussian, CopulaFamily::Clayton,
                           {1.0, std::log(4.0), 0.0, 0.0, -700.0});
  const auto s = make_conditional_sampler(m, 1.3, {}, {-10.0, 10.0});
  Rng rng = make_rng(3);
  const auto d = conditional_sample(s, 20000, rng);
  CHECK(std::abs(stats::mean(d.draws) - 1.0) < 3.0 * 2.0 / std::sqrt(20000.0));
  CHECK(s.mass >= kEnvelopeMass);
  CHECK(d.acceptance_rate > 0.0);
}

TEST_CASE("gaussian copula with gaussian margins is the conditional normal") {
  const double mu1 = 0.4, s1 = 1.5, mu2 = -0.2, s2 = 0.8, r = 0.6, y2 = 0.5;
  const double eta = r / std::sqrt(1.0 - r * r);
  const auto m = bivariate(MarginalFamily::Gaussian, MarginalFamily::Gaussian, CopulaFamily::Gaussian,
                           {mu1, std::log(s1 * s1), mu2, std::log(s2 * s2), eta});
  const double cmean = mu1 + r * s1 / s2 * (y2 - mu2);
  const double csd = s1 * std::sqrt(1.0 - r * r);
  const auto s = make_conditional_sampler(m, y2, {}, {-8.0, 8.0});
  CHECK(std::abs(s.mean() - cmean) < 1e-6);
  Rng rng = make_rng(11);
  const auto d = conditional_sample(s, 100000, rng);
  CHECK(std::abs(stats::mean(d.draws) - cmean) < 0.01);
  CHECK(std::abs(std::sqrt(stats::variance(d.draws)) - csd) < 0.01);
  const auto ks = stats::ks_test(d.draws, [&](double y) { return stats::normal_cdf((y - cmean) / csd); });
  CHECK(ks.p_value > 0.01);
  CHECK(s.cdf(cmean) == doctest::Approx(0.5).epsilon(1e-8));
}

TEST_CASE("clayton conditional with gaussian and dagum margins") {
  const auto m = bivariate(MarginalFamily::Gaussian, MarginalFamily::Dagum, CopulaFamily::Clayton,
                           {0.0, 0.0, std::log(0.8), std::log(4.0), std::log(3.0), std::log(2.0)});
  for (double y2 : {1.5, 3.0, 6.0}) {
    const auto s = make_conditional_sampler(m, y2, {}, {-6.0, 6.0});
    const auto num = normalize(m, y2, s.lo, s.hi);
    CHECK(s.mean() == doctest::Approx(num.mean).epsilon(1e-6));
    Rng rng = make_rng(static_cast<std::uint64_t>(y2 * 10));
    const auto d = conditional_sample(s, 100000, rng);
    CHECK(std::abs(stats::mean(d.draws) - num.mean) < 0.01);
    const auto ks = stats::ks_test(std::span<const double>(d.draws).first(20000),
                                   [&](double y) { return interpolate_cdf(num, y); });
    CHECK(ks.p_value > 0.01);
    for (int k = 0; k < 1000; ++k) {
      const double y = s.lo + (s.hi - s.lo) * k / 999.0;
      CHECK(s.density(y) <= s.envelope);
    }
    CHECK(d.envelope_violations == 0);
  }
}

TEST_CASE("rotated gumbel conditional with a dagum first margin") {
  const auto m = bivariate(MarginalFamily::Dagum, MarginalFamily::Gaussian, CopulaFamily::Gumbel,
                           {std::log(1.5), std::log(5.0), std::log(2.0), 0.0, 0.0, std::log(1.0)}, Rotation::R90);
  const auto s = make_conditional_sampler(m, -0.7, {}, {-2.0, 8.0});
  CHECK(s.lo == 0.0);
  const auto num = normalize(m, -0.7, 0.0, s.hi);
  Rng rng = make_rng(77);
  const auto d = conditional_sample(s, 20000, rng);
  CHECK(stats::ks_test(d.draws, [&](double y) { return interpolate_cdf(num, y); }).p_value > 0.01);
  CHECK(s.cdf(s.hi) - s.cdf(s.lo) >= kEnvelopeMass);
}

TEST_CASE("conditional sampler errors") {
  const auto m = bivariate(MarginalFamily::Gaussian, MarginalFamily::Dagum, CopulaFamily::Clayton,
                           {0.0, 0.0, 0.0, 0.0, 0.0, 0.0});
  CHECK_THROWS_AS(make_conditional_sampler(m, -1.0, {}, {-5.0, 5.0}), DomainError);
  CHECK_THROWS_AS(make_conditional_sampler(m, 1.0, {}, {5.0, -5.0}), StructuralError);
  const auto uni = with_coefficients(make_structure(MarginalFamily::Gaussian, std::nullopt, std::nullopt, {}),
                                     std::vector<double>{0.0, 0.0});
  CHECK_THROWS_AS(make_conditional_sampler(uni, 1.0, {}, {-5.0, 5.0}), StructuralError);

  const auto narrow = bivariate(MarginalFamily::Gaussian, MarginalFamily::Gaussian, CopulaFamily::Clayton,
                                {0.0, std::log(1e-6), 0.0, 0.0, -700.0});
  const auto s = make_conditional_sampler(narrow, 0.0, {}, {-100.0, 100.0});
  Rng rng = make_rng(1);
  CHECK_THROWS_AS(conditional_sample(s, 100, rng), NumericalError);
}

TEST_CASE("bivariate density grid") {
  const auto s1 = Standardization::birth_weight_gaussian();
  const auto s2 = Standardization::gestational_age_dagum();
  std::vector<double> y1, y2;
  for (int i = 0; i <= 400; ++i) y1.push_back(500.0 + 12.5 * i);
  for (int j = 0; j <= 400; ++j) y2.push_back(200.0 + 0.3 * j);
  const auto m = bivariate(MarginalFamily::Gaussian, MarginalFamily::Dagum, CopulaFamily::Clayton,
                           {-0.2, std::log(0.8), 0.0, std::log(8.0), std::log(3.1), std::log(0.4)});
  const auto g = bivariate_density_grid(m, {}, s1, s2, y1, y2);
  double total = 0.0;
  for (Eigen::Index i = 1; i < g.rows(); ++i)
    for (Eigen::Index j = 1; j < g.cols(); ++j)
      total += 0.25 * 12.5 * 0.3 * (g(i, j) + g(i - 1, j) + g(i, j - 1) + g(i - 1, j - 1));
  CHECK(total == doctest::Approx(1.0).epsilon(1e-3));

  const auto ind = bivariate(MarginalFamily::Gaussian, MarginalFamily::Dagum, CopulaFamily::Clayton,
                             {-0.2, std::log(0.8), 0.0, std::log(8.0), std::log(3.1), -700.0});
  const auto gi = bivariate_density_grid(ind, {}, s1, s2, y1, y2);
  const GaussianParams g1{-0.2, 0.8};
  const DagumParams d2{1.0, 8.0, 3.1};
  double worst = 0.0;
  for (std::size_t i = 0; i < y1.size(); i += 10)
    for (std::size_t j = 0; j < y2.size(); j += 10) {
      const double a = s1.forward(y1[i]), b = s2.forward(y2[j]);
      const double f = b > 0.0 ? gaussian_pdf(a, g1) * dagum_pdf(b, d2) / (500.0 * 14.0) : 0.0;
      worst = std::max(worst, std::abs(gi(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) - f));
    }
  CHECK(worst < 1e-12);
  const std::vector<double> beyond{330.0};
  CHECK(bivariate_density_grid(ind, {}, s1, s2, y1, beyond).isZero(0.0));

  const auto dir = std::filesystem::temp_directory_path() / "copreg_grid_test.csv";
  write_density_grid(dir, std::span<const double>(y1).first(2), std::span<const double>(y2).first(3),
                     g.topLeftCorner(2, 3));
  std::ifstream f(dir);
  std::string line;
  int lines = 0;
  while (std::getline(f, line)) ++lines;
  CHECK(lines == 7);
  std::filesystem::remove(dir);
}

TEST_CASE("covariate contrast shifts the density mode") {
  const auto s = make_structure(MarginalFamily::Gaussian, MarginalFamily::Gaussian,
                                CopulaChoice{CopulaFamily::Clayton, Rotation::R0}, {"sectio"},
                                {{"y1.mu", {"sectio"}}});
  const auto m = with_coefficients(s, std::vector<double>{0.0, -0.6, 0.0, 0.0, 0.0, std::log(1.0)});
  std::vector<double> y1, y2{0.0};
  for (int i = 0; i <= 800; ++i) y1.push_back(-4.0 + 0.01 * i);
  auto mode = [&](double sectio) {
    const std::vector<double> x{sectio};
    const auto g = bivariate_density_grid(m, x, Standardization::identity(), Standardization::identity(), y1, y2);
    Eigen::Index at = 0;
    g.col(0).maxCoeff(&at);
    return y1[static_cast<std::size_t>(at)];
  };
  CHECK(mode(1.0) < mode(0.0) - 0.3);
}

TEST_CASE("model comparison against the cubic baseline") {
  SUBCASE("baseline-generated data") {
    auto d = cubic_data(600, 9);
    const auto plan = make_cv_plan(d.size(), 4, 2);
    const auto s = make_structure(MarginalFamily::Gaussian, MarginalFamily::Gaussian,
                                  CopulaChoice{CopulaFamily::Clayton, Rotation::R0}, d.covariate_names,
                                  {{"y1.mu", {"x"}}});
    const auto rep = compare_models(s, {"x"}, d, PriorSpec{}, quick_config(), plan);
    CHECK(rep.baseline_score < rep.copula_score);
    CHECK(rep.residuals.size() == d.size());
    CHECK(rep.baseline.covariates == std::vector<std::string>{"x"});
    CHECK(to_text(rep).find("cubic polynomial baseline") != std::string::npos);
    CHECK(to_json(rep)["baseline_score"].get<double>() == rep.baseline_score);
    const auto path = std::filesystem::temp_directory_path() / "copreg_residuals_test.csv";
    write_residuals(path, rep);
    CHECK(std::filesystem::file_size(path) > 1000);
    std::filesystem::remove(path);
  }

  SUBCASE("tail-dependent copula data") {
    SyntheticSpec spec;
    spec.n = 600;
    spec.model = bivariate(MarginalFamily::Gaussian, MarginalFamily::Gaussian, CopulaFamily::Clayton,
                           {0.0, 0.0, 0.0, 0.0, std::log(8.0)});
    Rng rng = make_rng(12);
    const auto d = generate_synthetic(spec, rng);
    const auto plan = make_cv_plan(d.size(), 4, 2);
    ComparisonOptions o;
    o.sampled_score = true;
    const auto rep = compare_models(spec.model.structure, {}, d, PriorSpec{}, quick_config(), plan, o);
    CHECK(rep.copula_score < rep.baseline_score);
    REQUIRE(rep.copula_sampled_score.has_value());
    CHECK(std::abs(*rep.copula_sampled_score - rep.copula_score) < 0.1);
  }
}
