#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "copreg/diagnostics.hpp"
#include "copreg/inference.hpp"
#include "copreg/model.hpp"
#include "copreg/random.hpp"

namespace copreg {

// Polynomial baseline --------------------------------------------------------

/// y1 = beta_0 + sum_j beta_j x_j + gamma_1 y2 + ... + gamma_d y2^d + eps,
/// eps ~ N(0, sigma2), fitted by least squares on the standardized scale.
struct PolynomialBaseline {
  std::vector<std::string> covariates;
  int degree = 3;
  /// "(Intercept)", covariates..., "y2", "y2^2", "y2^3".
  std::vector<std::string> term_labels;
  /// Coefficients and standard errors on the plain power basis of y2.
  Eigen::VectorXd coefficients;
  Eigen::VectorXd standard_errors;
  /// Fit and prediction use powers of (y2 - y2_center) / y2_scale.
  double y2_center = 0.0;
  double y2_scale = 1.0;
  Eigen::VectorXd centered_coefficients;
  double sigma2 = 1.0;
  std::size_t n = 0;
  Standardization standardization1;
  Standardization standardization2;

  /// Design row on the centered basis.
  Eigen::RowVectorXd design_row(const Dataset& data, std::size_t row) const;
  /// Predicted mean of standardized y1.
  double predict(const Dataset& data, std::size_t row) const;
  /// Predicted mean in raw units of y1 from raw y2.
  double predict_raw(double y2_raw, std::span<const double> covariate_values) const;
  /// Normal log predictive density of standardized y1.
  double log_density(const Dataset& data, std::size_t row) const;
  /// Two-sided t-test p-values.
  std::vector<double> p_values() const;
  std::string coefficient_table() const;
};

/// Least squares with column-pivoted QR. Throws StructuralError naming the
/// collinear columns when the design is rank deficient.
PolynomialBaseline fit_polynomial_baseline(const Dataset& data, const std::vector<std::string>& covariates,
                                           int degree = 3);

/// Refits after dropping, one at a time, the covariate with the largest
/// p-value above alpha. Polynomial terms and the intercept are kept.
PolynomialBaseline prune_polynomial_baseline(const Dataset& data, const std::vector<std::string>& covariates,
                                             double alpha = 0.05, int degree = 3);

nlohmann::json to_json(const PolynomialBaseline& baseline);

// Conditional sampling -------------------------------------------------------

/// Rejection sampler for f(y1 | y2, x) = c(F1(y1), F2(y2)) f1(y1) with a
/// uniform envelope on [lo, hi] (standardized scale).
struct ConditionalSampler {
  ObservationParams params;
  double y2 = 0.0;
  double v = 0.5;
  double lo = 0.0;
  double hi = 1.0;
  /// Envelope constant.
  double envelope = 0.0;
  /// Conditional probability of [lo, hi].
  double mass = 1.0;

  double density(double y1) const;
  double log_density(double y1) const;
  /// Conditional cdf through the copula h-function.
  double cdf(double y1) const;
  /// Conditional mean by adaptive Gauss-Kronrod quadrature over [lo, hi].
  double mean() const;
};

/// [min(y1) - 2 sd(y1), max(y1) + 2 sd(y1)].
std::pair<double, double> default_envelope_range(const Dataset& data);

inline constexpr double kEnvelopeMass = 1.0 - 1e-6;
inline constexpr int kEnvelopeGrid = 1000;
inline constexpr double kEnvelopeSafety = 1.1;

/// Widens the range until it holds at least kEnvelopeMass of the conditional
/// distribution, then sets the envelope to kEnvelopeSafety times the maximum
/// density over kEnvelopeGrid-point grids on the range and on the central
/// 99.8% of the conditional distribution.
ConditionalSampler make_conditional_sampler(const ModelSpec& model, double y2, std::span<const double> x_row,
                                            std::pair<double, double> range);

struct ConditionalDraws {
  std::vector<double> draws;
  double acceptance_rate = 0.0;
  /// Proposals where the density exceeded the envelope.
  std::size_t envelope_violations = 0;
};

inline constexpr double kMinAcceptance = 1e-4;

/// i.i.d. draws of standardized y1; throws NumericalError when the acceptance
/// rate falls below kMinAcceptance.
ConditionalDraws conditional_sample(const ConditionalSampler& sampler, std::size_t n, Rng& rng);

// Density grid ---------------------------------------------------------------

/// Joint density on raw-unit axes at the model's coefficients:
/// f_raw(y1, y2) = f(s1(y1), s2(y2)) / (scale1 scale2). Zero outside the
/// support. Rows follow y1, columns y2.
Eigen::MatrixXd bivariate_density_grid(const ModelSpec& model, std::span<const double> x_row,
                                       const Standardization& s1, const Standardization& s2,
                                       std::span<const double> y1_raw, std::span<const double> y2_raw);

void write_density_grid(const std::filesystem::path& path, std::span<const double> y1_raw,
                        std::span<const double> y2_raw, const Eigen::MatrixXd& density);

// Model comparison -----------------------------------------------------------

struct ComparisonOptions {
  /// Also score the copula model by a kernel density of rejection draws.
  bool sampled_score = false;
  std::size_t kde_draws = 200;
  std::uint64_t seed = 1;
  /// Prune baseline covariates by t-tests at this level (0 disables).
  double baseline_alpha = 0.05;
};

struct ComparisonResidual {
  std::size_t row = 0;
  int fold = 0;
  double y1_raw = 0.0;
  double y2_raw = 0.0;
  double copula_mean_raw = 0.0;
  double baseline_mean_raw = 0.0;
  double copula_log_density = 0.0;
  double baseline_log_density = 0.0;
};

struct ComparisonReport {
  /// Negative mean log conditional density of y1 given y2, raw scale.
  double copula_score = 0.0;
  std::optional<double> copula_sampled_score;
  double baseline_score = 0.0;
  std::vector<ComparisonResidual> residuals;
  /// Baseline fitted to all data (coefficient table for reporting).
  PolynomialBaseline baseline;
};

/// Cross-validated conditional log-scores of a copula regression structure
/// against the cubic baseline on a shared fold assignment.
ComparisonReport compare_models(const ModelStructure& copula_structure,
                                const std::vector<std::string>& baseline_covariates, const Dataset& data,
                                const PriorSpec& prior, const McmcConfig& config, const CvPlan& plan,
                                const ComparisonOptions& options = {});

nlohmann::json to_json(const ComparisonReport& report);
std::string to_text(const ComparisonReport& report);
void write_residuals(const std::filesystem::path& path, const ComparisonReport& report);

}  // namespace copreg
