#include "copreg/marginals.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "copreg/error.hpp"
#include "copreg/stats.hpp"

namespace copreg {

namespace {

double softplus(double t) { return t > 0.0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t)); }

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};

}  // namespace

std::string_view to_string(MarginalFamily family) {
  switch (family) {
    case MarginalFamily::Gaussian: return "gaussian";
    case MarginalFamily::Dagum: return "dagum";
  }
  return "?";
}

MarginalFamily marginal_family_from_string(std::string_view name) {
  if (name == "gaussian" || name == "normal") return MarginalFamily::Gaussian;
  if (name == "dagum") return MarginalFamily::Dagum;
  throw StructuralError("unknown marginal family '" + std::string(name) + "'");
}

void validate(const GaussianParams& theta) {
  if (!std::isfinite(theta.mu)) throw DomainError("gaussian: mu must be finite");
  if (!(theta.sigma2 > 0.0) || !std::isfinite(theta.sigma2))
    throw DomainError("gaussian: sigma2 must be positive and finite");
}

void validate(const DagumParams& theta) {
  if (!(theta.p > 0.0 && theta.a > 0.0 && theta.b > 0.0) || !std::isfinite(theta.p) ||
      !std::isfinite(theta.a) || !std::isfinite(theta.b))
    throw DomainError("dagum: p, a, b must be positive and finite");
}

void validate(const MarginalParams& theta) {
  std::visit([](const auto& t) { validate(t); }, theta);
}

MarginalFamily family_of(const MarginalParams& theta) {
  return std::holds_alternative<GaussianParams>(theta) ? MarginalFamily::Gaussian
                                                      : MarginalFamily::Dagum;
}

double gaussian_log_pdf(double y, const GaussianParams& theta) {
  validate(theta);
  const double z = (y - theta.mu) / std::sqrt(theta.sigma2);
  return stats::normal_log_pdf(z) - 0.5 * std::log(theta.sigma2);
}

double gaussian_pdf(double y, const GaussianParams& theta) { return std::exp(gaussian_log_pdf(y, theta)); }

double gaussian_cdf(double y, const GaussianParams& theta) {
  validate(theta);
  return stats::normal_cdf((y - theta.mu) / std::sqrt(theta.sigma2));
}

double gaussian_quantile(double q, const GaussianParams& theta) {
  validate(theta);
  if (!(q > 0.0 && q < 1.0)) throw DomainError("gaussian_quantile: q must lie in (0, 1)");
  return theta.mu + std::sqrt(theta.sigma2) * stats::normal_quantile(q);
}

double dagum_log_pdf(double y, const DagumParams& theta) {
  validate(theta);
  if (!(y > 0.0)) throw DomainError("dagum_pdf: y must be positive (check the standardization)");
  const double t = theta.a * (std::log(y) - std::log(theta.b));
  return std::log(theta.a) + std::log(theta.p) - std::log(y) + theta.p * t -
         (theta.p + 1.0) * softplus(t);
}

double dagum_pdf(double y, const DagumParams& theta) { return std::exp(dagum_log_pdf(y, theta)); }

double dagum_cdf(double y, const DagumParams& theta) {
  validate(theta);
  if (!(y > 0.0)) return 0.0;
  if (std::isinf(y)) return 1.0;
  const double t = theta.a * (std::log(y) - std::log(theta.b));
  return std::exp(-theta.p * softplus(-t));
}

double dagum_quantile(double q, const DagumParams& theta) {
  validate(theta);
  if (!(q > 0.0 && q < 1.0)) throw DomainError("dagum_quantile: q must lie in (0, 1)");
  // q^{-1/p} - 1 = expm1(-log(q) / p)
  const double w = std::expm1(-std::log(q) / theta.p);
  return theta.b * std::exp(-std::log(w) / theta.a);
}

double dagum_median(const DagumParams& theta) {
  validate(theta);
  return theta.b * std::pow(-1.0 + std::pow(2.0, 1.0 / theta.p), -1.0 / theta.a);
}

double dagum_mean(const DagumParams& theta) {
  validate(theta);
  if (theta.a <= 1.0) return std::numeric_limits<double>::infinity();
  const double inv_a = 1.0 / theta.a;
  return theta.b *
         std::exp(std::lgamma(theta.p + inv_a) + std::lgamma(1.0 - inv_a) - std::lgamma(theta.p));
}

double log_pdf(double y, const MarginalParams& theta) {
  return std::visit(overloaded{[y](const GaussianParams& g) { return gaussian_log_pdf(y, g); },
                               [y](const DagumParams& d) { return dagum_log_pdf(y, d); }},
                    theta);
}

double pdf(double y, const MarginalParams& theta) { return std::exp(log_pdf(y, theta)); }

double cdf(double y, const MarginalParams& theta) {
  return std::visit(overloaded{[y](const GaussianParams& g) { return gaussian_cdf(y, g); },
                               [y](const DagumParams& d) { return dagum_cdf(y, d); }},
                    theta);
}

double quantile(double q, const MarginalParams& theta) {
  return std::visit(overloaded{[q](const GaussianParams& g) { return gaussian_quantile(q, g); },
                               [q](const DagumParams& d) { return dagum_quantile(q, d); }},
                    theta);
}

double marginal_mean(const MarginalParams& theta) {
  return std::visit(overloaded{[](const GaussianParams& g) {
                                 validate(g);
                                 return g.mu;
                               },
                               [](const DagumParams& d) { return dagum_mean(d); }},
                    theta);
}

double support_lower(const MarginalParams& theta) {
  return family_of(theta) == MarginalFamily::Gaussian ? -std::numeric_limits<double>::infinity()
                                                      : 0.0;
}

std::vector<double> sample_marginal(const MarginalParams& theta, std::size_t n, Rng& rng) {
  validate(theta);
  std::vector<double> out;
  out.reserve(n);
  if (const auto* g = std::get_if<GaussianParams>(&theta)) {
    const double sd = std::sqrt(g->sigma2);
    for (std::size_t i = 0; i < n; ++i) out.push_back(g->mu + sd * standard_normal(rng));
  } else {
    const auto& d = std::get<DagumParams>(theta);
    for (std::size_t i = 0; i < n; ++i) out.push_back(dagum_quantile(uniform01(rng), d));
  }
  return out;
}

}  // namespace copreg
