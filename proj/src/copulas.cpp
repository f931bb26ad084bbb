#include "copreg/copulas.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numbers>

#include <boost/math/tools/roots.hpp>

#include "copreg/error.hpp"
#include "copreg/stats.hpp"

namespace copreg {

namespace {

std::atomic<std::uint64_t> g_clamps{0};

// log(exp(a) + exp(b) - 1) for a, b >= 0, the Clayton generator sum.
double clayton_log_sum(double a, double b) {
  const double m = std::max(a, b);
  if (m < 0.5) return std::log1p(std::expm1(a) + std::expm1(b));
  return m + std::log(std::exp(a - m) + std::exp(b - m) - std::exp(-m));
}

double log_add_exp(double a, double b) {
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(std::min(a, b) - m));
}

// Base (unrotated) families. Inputs are interior points of the unit square.

double clayton_log_density(double rho, double u, double v) {
  if (rho == 0.0) return 0.0;
  const double lu = std::log(u);
  const double lv = std::log(v);
  const double lsum = clayton_log_sum(-rho * lu, -rho * lv);
  return std::log1p(rho) - (1.0 + rho) * (lu + lv) - (2.0 + 1.0 / rho) * lsum;
}

double clayton_cdf(double rho, double u, double v) {
  if (rho == 0.0) return u * v;
  const double lsum = clayton_log_sum(-rho * std::log(u), -rho * std::log(v));
  return std::exp(-lsum / rho);
}

double clayton_h(double rho, double u, double v) {
  if (rho == 0.0) return u;
  const double lv = std::log(v);
  const double lsum = clayton_log_sum(-rho * std::log(u), -rho * lv);
  return std::exp(-(rho + 1.0) * lv - (1.0 + 1.0 / rho) * lsum);
}

double clayton_h_inverse(double rho, double w, double v) {
  if (rho == 0.0) return w;
  const double lv = std::log(v);
  const double a = -rho / (1.0 + rho) * std::log(w) - rho * lv;
  // S = (w v^{rho+1})^{-rho/(1+rho)} + 1 - v^{-rho}
  const double log_s = std::log1p(std::expm1(a) - std::expm1(-rho * lv));
  return std::exp(-log_s / rho);
}

struct GumbelTerms {
  double x, y, log_z, big_a;
};

GumbelTerms gumbel_terms(double rho, double u, double v) {
  const double x = -std::log(u);
  const double y = -std::log(v);
  const double log_z = log_add_exp(rho * std::log(x), rho * std::log(y));
  return {x, y, log_z, std::exp(log_z / rho)};
}

double gumbel_log_density(double rho, double u, double v) {
  if (rho == 1.0) return 0.0;
  const auto t = gumbel_terms(rho, u, v);
  return t.x + t.y + (rho - 1.0) * (std::log(t.x) + std::log(t.y)) - t.big_a +
         (1.0 / rho - 2.0) * t.log_z + std::log(t.big_a + rho - 1.0);
}

double gumbel_cdf(double rho, double u, double v) {
  if (rho == 1.0) return u * v;
  return std::exp(-gumbel_terms(rho, u, v).big_a);
}

double gumbel_h(double rho, double u, double v) {
  if (rho == 1.0) return u;
  const auto t = gumbel_terms(rho, u, v);
  return std::exp(-t.big_a + (1.0 / rho - 1.0) * t.log_z + (rho - 1.0) * std::log(t.y) + t.y);
}

double gumbel_h_inverse(double rho, double w, double v) {
  if (rho == 1.0) return w;
  constexpr double lo = kUnitClamp;
  constexpr double hi = 1.0 - kUnitClamp;
  if (w <= gumbel_h(rho, lo, v)) return lo;
  if (w >= gumbel_h(rho, hi, v)) return hi;
  auto f = [&](double u) { return gumbel_h(rho, u, v) - w; };
  std::uintmax_t max_iter = 200;
  const auto [a, b] = boost::math::tools::toms748_solve(
      f, lo, hi,
      [](double l, double r) { return std::abs(r - l) <= 1e-10 * std::max(1e-4, std::abs(l)); },
      max_iter);
  return 0.5 * (a + b);
}

double gaussian_log_density(double rho, double u, double v) {
  if (rho == 0.0) return 0.0;
  const double x = stats::normal_quantile(u);
  const double y = stats::normal_quantile(v);
  const double one_m = (1.0 - rho) * (1.0 + rho);
  return -0.5 * std::log(one_m) - (rho * rho * (x * x + y * y) - 2.0 * rho * x * y) / (2.0 * one_m);
}

double gaussian_cdf(double rho, double u, double v) {
  return stats::bivariate_normal_cdf(stats::normal_quantile(u), stats::normal_quantile(v), rho);
}

double gaussian_h(double rho, double u, double v) {
  const double x = stats::normal_quantile(u);
  const double y = stats::normal_quantile(v);
  return stats::normal_cdf((x - rho * y) / std::sqrt((1.0 - rho) * (1.0 + rho)));
}

double gaussian_h_inverse(double rho, double w, double v) {
  const double y = stats::normal_quantile(v);
  return stats::normal_cdf(stats::normal_quantile(w) * std::sqrt((1.0 - rho) * (1.0 + rho)) +
                           rho * y);
}

double base_log_density(CopulaFamily f, double rho, double u, double v) {
  switch (f) {
    case CopulaFamily::Gaussian: return gaussian_log_density(rho, u, v);
    case CopulaFamily::Clayton: return clayton_log_density(rho, u, v);
    case CopulaFamily::Gumbel: return gumbel_log_density(rho, u, v);
  }
  return 0.0;
}

double base_cdf(CopulaFamily f, double rho, double u, double v) {
  if (u <= 0.0 || v <= 0.0) return 0.0;
  if (u >= 1.0) return std::min(v, 1.0);
  if (v >= 1.0) return u;
  switch (f) {
    case CopulaFamily::Gaussian: return gaussian_cdf(rho, u, v);
    case CopulaFamily::Clayton: return clayton_cdf(rho, u, v);
    case CopulaFamily::Gumbel: return gumbel_cdf(rho, u, v);
  }
  return 0.0;
}

double base_h(CopulaFamily f, double rho, double u, double v) {
  switch (f) {
    case CopulaFamily::Gaussian: return gaussian_h(rho, u, v);
    case CopulaFamily::Clayton: return clayton_h(rho, u, v);
    case CopulaFamily::Gumbel: return gumbel_h(rho, u, v);
  }
  return 0.0;
}

double base_h_inverse(CopulaFamily f, double rho, double w, double v) {
  switch (f) {
    case CopulaFamily::Gaussian: return gaussian_h_inverse(rho, w, v);
    case CopulaFamily::Clayton: return clayton_h_inverse(rho, w, v);
    case CopulaFamily::Gumbel: return gumbel_h_inverse(rho, w, v);
  }
  return w;
}

void require_interior(UnitPair uv, const char* what) {
  if (!(uv.u > 0.0 && uv.u < 1.0 && uv.v > 0.0 && uv.v < 1.0))
    throw DomainError(std::string(what) + ": (u, v) must lie strictly inside the unit square");
}

}  // namespace

std::string_view to_string(CopulaFamily family) {
  switch (family) {
    case CopulaFamily::Gaussian: return "gaussian";
    case CopulaFamily::Clayton: return "clayton";
    case CopulaFamily::Gumbel: return "gumbel";
  }
  return "?";
}

CopulaFamily copula_family_from_string(std::string_view name) {
  if (name == "gaussian" || name == "normal") return CopulaFamily::Gaussian;
  if (name == "clayton") return CopulaFamily::Clayton;
  if (name == "gumbel") return CopulaFamily::Gumbel;
  throw StructuralError("unknown copula family '" + std::string(name) + "'");
}

Rotation rotation_from_degrees(int degrees) {
  switch (degrees) {
    case 0: return Rotation::R0;
    case 90: return Rotation::R90;
    case 180: return Rotation::R180;
    case 270: return Rotation::R270;
    default: throw StructuralError("rotation must be one of 0, 90, 180, 270");
  }
}

std::string copula_name(CopulaFamily family, Rotation rotation) {
  std::string s(to_string(family));
  if (rotation != Rotation::R0) s += "@" + std::to_string(static_cast<int>(rotation));
  return s;
}

void validate(const CopulaSpec& spec) {
  const double r = spec.rho;
  switch (spec.family) {
    case CopulaFamily::Gaussian:
      if (spec.rotation != Rotation::R0)
        throw DomainError("gaussian copula: rotations are expressed through the sign of rho");
      if (!(r > -1.0 && r < 1.0)) throw DomainError("gaussian copula: rho must lie in (-1, 1)");
      break;
    case CopulaFamily::Clayton:
      if (!(r >= 0.0) || !std::isfinite(r)) throw DomainError("clayton copula: rho must lie in (0, inf)");
      break;
    case CopulaFamily::Gumbel:
      if (!(r >= 1.0) || !std::isfinite(r)) throw DomainError("gumbel copula: rho must lie in (1, inf)");
      break;
  }
}

bool is_independence(const CopulaSpec& spec) {
  switch (spec.family) {
    case CopulaFamily::Gaussian:
    case CopulaFamily::Clayton: return spec.rho == 0.0;
    case CopulaFamily::Gumbel: return spec.rho == 1.0;
  }
  return false;
}

std::uint64_t clamp_count() { return g_clamps.load(std::memory_order_relaxed); }
void reset_clamp_count() { g_clamps.store(0, std::memory_order_relaxed); }

namespace detail {

double clamp_unit(double x) {
  if (x < kUnitClamp) {
    g_clamps.fetch_add(1, std::memory_order_relaxed);
    return kUnitClamp;
  }
  if (x > 1.0 - kUnitClamp) {
    g_clamps.fetch_add(1, std::memory_order_relaxed);
    return 1.0 - kUnitClamp;
  }
  return x;
}

double copula_log_density_unchecked(CopulaFamily family, Rotation rotation, double rho, double u,
                                    double v) {
  u = clamp_unit(u);
  v = clamp_unit(v);
  switch (rotation) {
    case Rotation::R0: break;
    case Rotation::R90: u = 1.0 - u; break;
    case Rotation::R180:
      u = 1.0 - u;
      v = 1.0 - v;
      break;
    case Rotation::R270: v = 1.0 - v; break;
  }
  return base_log_density(family, rho, u, v);
}

}  // namespace detail

double copula_log_density(const CopulaSpec& spec, UnitPair uv) {
  validate(spec);
  require_interior(uv, "copula_density");
  return detail::copula_log_density_unchecked(spec.family, spec.rotation, spec.rho, uv.u, uv.v);
}

double copula_density(const CopulaSpec& spec, UnitPair uv) {
  return std::exp(copula_log_density(spec, uv));
}

double copula_cdf(const CopulaSpec& spec, UnitPair uv) {
  validate(spec);
  if (!(uv.u >= 0.0 && uv.u <= 1.0 && uv.v >= 0.0 && uv.v <= 1.0))
    throw DomainError("copula_cdf: (u, v) outside the unit square");
  const auto f = spec.family;
  const double r = spec.rho;
  const double u = uv.u;
  const double v = uv.v;
  double c = 0.0;
  switch (spec.rotation) {
    case Rotation::R0: c = base_cdf(f, r, u, v); break;
    case Rotation::R90: c = v - base_cdf(f, r, 1.0 - u, v); break;
    case Rotation::R180: c = u + v - 1.0 + base_cdf(f, r, 1.0 - u, 1.0 - v); break;
    case Rotation::R270: c = u - base_cdf(f, r, u, 1.0 - v); break;
  }
  return std::clamp(c, 0.0, 1.0);
}

double h_function(const CopulaSpec& spec, UnitPair uv) {
  validate(spec);
  require_interior(uv, "h_function");
  const auto f = spec.family;
  const double r = spec.rho;
  const double u = detail::clamp_unit(uv.u);
  const double v = detail::clamp_unit(uv.v);
  double h = 0.0;
  switch (spec.rotation) {
    case Rotation::R0: h = base_h(f, r, u, v); break;
    case Rotation::R90: h = 1.0 - base_h(f, r, 1.0 - u, v); break;
    case Rotation::R180: h = 1.0 - base_h(f, r, 1.0 - u, 1.0 - v); break;
    case Rotation::R270: h = base_h(f, r, u, 1.0 - v); break;
  }
  return std::clamp(h, 0.0, 1.0);
}

double h_inverse(const CopulaSpec& spec, double w, double v) {
  validate(spec);
  require_interior({w, v}, "h_inverse");
  const auto f = spec.family;
  const double r = spec.rho;
  w = detail::clamp_unit(w);
  v = detail::clamp_unit(v);
  double u = 0.0;
  switch (spec.rotation) {
    case Rotation::R0: u = base_h_inverse(f, r, w, v); break;
    case Rotation::R90: u = 1.0 - base_h_inverse(f, r, 1.0 - w, v); break;
    case Rotation::R180: u = 1.0 - base_h_inverse(f, r, 1.0 - w, 1.0 - v); break;
    case Rotation::R270: u = base_h_inverse(f, r, w, 1.0 - v); break;
  }
  return std::clamp(u, kUnitClamp, 1.0 - kUnitClamp);
}

double kendall_tau(const CopulaSpec& spec) {
  validate(spec);
  double tau = 0.0;
  switch (spec.family) {
    case CopulaFamily::Gaussian: tau = 2.0 / std::numbers::pi * std::asin(spec.rho); break;
    case CopulaFamily::Clayton: tau = spec.rho / (spec.rho + 2.0); break;
    case CopulaFamily::Gumbel: tau = 1.0 - 1.0 / spec.rho; break;
  }
  if (spec.rotation == Rotation::R90 || spec.rotation == Rotation::R270) tau = -tau;
  return tau;
}

namespace {

// (lower, upper) tail dependence of the unrotated family.
std::pair<double, double> base_tails(const CopulaSpec& spec) {
  switch (spec.family) {
    case CopulaFamily::Gaussian: return {0.0, 0.0};
    case CopulaFamily::Clayton:
      return {spec.rho > 0.0 ? std::exp2(-1.0 / spec.rho) : 0.0, 0.0};
    case CopulaFamily::Gumbel: return {0.0, 2.0 - std::exp2(1.0 / spec.rho)};
  }
  return {0.0, 0.0};
}

}  // namespace

double lower_tail_dependence(const CopulaSpec& spec) {
  validate(spec);
  const auto [lower, upper] = base_tails(spec);
  switch (spec.rotation) {
    case Rotation::R0: return lower;
    case Rotation::R180: return upper;
    default: return 0.0;
  }
}

double upper_tail_dependence(const CopulaSpec& spec) {
  validate(spec);
  const auto [lower, upper] = base_tails(spec);
  switch (spec.rotation) {
    case Rotation::R0: return upper;
    case Rotation::R180: return lower;
    default: return 0.0;
  }
}

std::vector<UnitPair> sample_copula(const CopulaSpec& spec, std::size_t n, Rng& rng) {
  validate(spec);
  std::vector<UnitPair> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double v = uniform01(rng);
    const double w = uniform01(rng);
    out.push_back({h_inverse(spec, w, v), v});
  }
  return out;
}

double joint_log_density(const CopulaSpec& spec, double y1, double y2, const MarginalParams& m1,
                         const MarginalParams& m2) {
  validate(spec);
  const double lf1 = log_pdf(y1, m1);
  const double lf2 = log_pdf(y2, m2);
  return detail::copula_log_density_unchecked(spec.family, spec.rotation, spec.rho, cdf(y1, m1),
                                              cdf(y2, m2)) +
         lf1 + lf2;
}

double conditional_log_density(const CopulaSpec& spec, double y1, double y2,
                               const MarginalParams& m1, const MarginalParams& m2) {
  validate(spec);
  const double lf1 = log_pdf(y1, m1);
  (void)log_pdf(y2, m2);
  return detail::copula_log_density_unchecked(spec.family, spec.rotation, spec.rho, cdf(y1, m1),
                                              cdf(y2, m2)) +
         lf1;
}

double conditional_density(const CopulaSpec& spec, double y1, double y2, const MarginalParams& m1,
                           const MarginalParams& m2) {
  return std::exp(conditional_log_density(spec, y1, y2, m1, m2));
}

}  // namespace copreg
