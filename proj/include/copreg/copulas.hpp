#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "copreg/marginals.hpp"
#include "copreg/random.hpp"

namespace copreg {

enum class CopulaFamily { Gaussian, Clayton, Gumbel };

/// Counter-clockwise rotation. The rotated density evaluates the base density
/// at reflected arguments: 90 -> (1-u, v), 180 -> (1-u, 1-v), 270 -> (u, 1-v).
enum class Rotation { R0 = 0, R90 = 90, R180 = 180, R270 = 270 };

std::string_view to_string(CopulaFamily family);
CopulaFamily copula_family_from_string(std::string_view name);
Rotation rotation_from_degrees(int degrees);

/// Family, rotation and dependence parameter rho.
///
/// Legal rho: Gaussian (-1, 1); Clayton [0, inf); Gumbel [1, inf). The closed
/// endpoints 0 (Clayton) and 1 (Gumbel) are the independence limits and are
/// accepted so that "independence parameter" evaluations are exact. Gaussian
/// admits only Rotation::R0; its reflections are covered by the sign of rho.
struct CopulaSpec {
  CopulaFamily family = CopulaFamily::Gaussian;
  Rotation rotation = Rotation::R0;
  double rho = 0.0;
};

/// (u, v) = (F1(y1), F2(y2)), strictly inside the unit square.
struct UnitPair {
  double u = 0.5;
  double v = 0.5;
};

/// Short name such as "clayton" or "gumbel@90".
std::string copula_name(CopulaFamily family, Rotation rotation);

void validate(const CopulaSpec& spec);
bool is_independence(const CopulaSpec& spec);

/// Arguments are clamped to [kUnitClamp, 1 - kUnitClamp] before log/power
/// transforms; every clamp increments a process-wide counter.
inline constexpr double kUnitClamp = 1e-12;
std::uint64_t clamp_count();
void reset_clamp_count();

/// log c_rho(u, v). Throws DomainError if u or v is not strictly inside (0, 1).
double copula_log_density(const CopulaSpec& spec, UnitPair uv);
double copula_density(const CopulaSpec& spec, UnitPair uv);

/// C_rho(u, v). Accepts the closed square so boundary conditions can be probed.
/// The Gaussian family uses the bivariate normal rectangle probability at
/// (Phi^-1(u), Phi^-1(v)) computed by Genz's BVND algorithm.
double copula_cdf(const CopulaSpec& spec, UnitPair uv);

/// h(u | v) = dC(u, v) / dv, the conditional cdf of U given V = v.
double h_function(const CopulaSpec& spec, UnitPair uv);
/// Solves h(u | v) = w for u. Closed form for Gaussian and Clayton; bracketed
/// root finding (tolerance 1e-10) for Gumbel.
double h_inverse(const CopulaSpec& spec, double w, double v);

double kendall_tau(const CopulaSpec& spec);
double lower_tail_dependence(const CopulaSpec& spec);
double upper_tail_dependence(const CopulaSpec& spec);

/// i.i.d. pairs by the conditional-inverse method: v ~ U(0,1), u = h^{-1}(w | v).
std::vector<UnitPair> sample_copula(const CopulaSpec& spec, std::size_t n, Rng& rng);

/// log f(y1, y2) = log c(F1(y1), F2(y2)) + log f1(y1) + log f2(y2).
double joint_log_density(const CopulaSpec& spec, double y1, double y2, const MarginalParams& m1,
                         const MarginalParams& m2);

/// log f_{1|2}(y1 | y2) = log c(F1(y1), F2(y2)) + log f1(y1).
double conditional_log_density(const CopulaSpec& spec, double y1, double y2,
                               const MarginalParams& m1, const MarginalParams& m2);
double conditional_density(const CopulaSpec& spec, double y1, double y2, const MarginalParams& m1,
                           const MarginalParams& m2);

namespace detail {
/// Log density without argument validation; inputs are clamped and counted.
double copula_log_density_unchecked(CopulaFamily family, Rotation rotation, double rho, double u,
                                    double v);
/// Clamp into [kUnitClamp, 1 - kUnitClamp], counting clamps.
double clamp_unit(double x);
}  // namespace detail

}  // namespace copreg
