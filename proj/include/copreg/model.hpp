#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "copreg/copulas.hpp"
#include "copreg/marginals.hpp"

namespace copreg {

// Standardization -------------------------------------------------------------

/// Affine response map  y_std = (sign * y_raw - offset) / scale,  sign = -1 when inverted.
struct Standardization {
  double offset = 0.0;
  double scale = 1.0;
  bool inverted = false;

  double forward(double raw) const;
  double inverse(double standardized) const;
  void validate() const;

  bool operator==(const Standardization&) const = default;

  /// (y - 3500) / 500, birth weight under a Gaussian margin.
  static Standardization birth_weight_gaussian() { return {3500.0, 500.0, false}; }
  /// y / 500, birth weight under a Dagum margin (positive support).
  static Standardization birth_weight_dagum() { return {0.0, 500.0, false}; }
  /// (y - 280) / 14, gestational age under a Gaussian margin.
  static Standardization gestational_age_gaussian() { return {280.0, 14.0, false}; }
  /// (322 - y) / 14, gestational age inverted so the long tail is on the right.
  static Standardization gestational_age_dagum() { return {-322.0, 14.0, true}; }
  static Standardization identity() { return {}; }
};

/// Standardization conventionally paired with a family for response 1 (birth
/// weight like) or response 2 (gestational age like).
Standardization default_standardization(int response, MarginalFamily family);

// Data ----------------------------------------------------------------------

/// n bivariate responses on the standardized scale plus an n x m covariate matrix.
struct Dataset {
  std::vector<double> y1;
  std::vector<double> y2;
  Eigen::MatrixXd x;
  std::vector<std::string> covariate_names;
  Standardization standardization1;
  Standardization standardization2;

  std::size_t size() const { return y1.size(); }
  std::size_t covariate_count() const { return covariate_names.size(); }
  /// Throws StructuralError if a name is unknown.
  std::size_t covariate_index(std::string_view name) const;
  void validate() const;
};

/// Rows selected in the given order.
Dataset subset(const Dataset& data, std::span<const std::size_t> rows);
/// Same raw data under new response standardizations.
Dataset restandardize(const Dataset& data, const Standardization& s1, const Standardization& s2);
std::vector<double> raw_response(const Dataset& data, int response);

// Predictors ----------------------------------------------------------------

enum class Parameter { Mu, Sigma2, P, A, B, Rho };
enum class Link { Identity, Log, GaussianRho, LogShifted };

std::string_view to_string(Parameter p);
Parameter parameter_from_string(std::string_view name);
std::string_view to_string(Link link);
/// Name of the inverse link in the eta -> theta direction, e.g. "ln sigma2".
std::string link_label(Parameter p, Link link);

/// A distribution parameter together with the response it belongs to
/// (1 or 2; 0 for the copula).
struct ParameterSlot {
  int response = 1;
  Parameter parameter = Parameter::Mu;
  bool operator==(const ParameterSlot&) const = default;
};

/// "y1.mu", "y2.b", "copula.rho".
std::string slot_name(ParameterSlot slot);
ParameterSlot slot_from_string(std::string_view name);

struct PredictorSpec {
  ParameterSlot slot;
  /// Indices into the dataset's covariate columns; empty means intercept only.
  std::vector<std::size_t> covariates;
  Link link = Link::Identity;

  std::size_t coefficient_count() const { return covariates.size() + 1; }
};

struct CopulaChoice {
  CopulaFamily family = CopulaFamily::Clayton;
  Rotation rotation = Rotation::R0;
  bool operator==(const CopulaChoice&) const = default;
};

/// Parameters of a marginal family in canonical order: (mu, sigma2) or (p, a, b).
std::vector<Parameter> family_parameters(MarginalFamily family);
Link default_link(Parameter p, std::optional<CopulaFamily> copula = std::nullopt);

/// Link inverse, theta = h^{-1}(eta). eta is clamped to +-700 before exp so
/// the result is always finite and inside the parameter's legal range:
///   mu: identity; sigma2, p, a, b: exp;
///   rho: eta / sqrt(1 + eta^2) (Gaussian), exp (Clayton), exp + 1 (Gumbel).
double apply_link_inverse(Link link, double eta);
double apply_link_inverse(Parameter parameter, std::optional<CopulaFamily> copula, double eta);
/// Inverse of apply_link_inverse (used for initial values).
double apply_link(Link link, double theta);

/// beta_0 + sum_j beta_j x_{row, covariates[j]}.
double eval_predictor(const PredictorSpec& spec, std::span<const double> beta,
                      std::span<const double> x_row);

/// Everything about a regression model except coefficient values. A margin
/// may be absent, which gives a univariate model of the other response; a
/// copula requires both margins.
struct ModelStructure {
  std::optional<MarginalFamily> margin1;
  std::optional<MarginalFamily> margin2;
  std::optional<CopulaChoice> copula;
  /// Canonical order: margin-1 parameters, margin-2 parameters, rho.
  std::vector<PredictorSpec> predictors;
  std::vector<std::string> covariate_names;

  void validate() const;
  std::size_t coefficient_count() const;
  /// Index of a slot in predictors, or throws.
  std::size_t predictor_index(ParameterSlot slot) const;
  /// "y1.mu:(Intercept)", "y1.mu:sex", ... in canonical order.
  std::vector<std::string> coefficient_labels() const;
  std::string describe() const;
};

/// Builds a structure with default links. `covariates` maps slot names
/// ("y1.mu", "copula.rho", ...) to covariate names; slots not listed are
/// intercept-only.
ModelStructure make_structure(std::optional<MarginalFamily> margin1,
                              std::optional<MarginalFamily> margin2,
                              std::optional<CopulaChoice> copula,
                              std::vector<std::string> covariate_names,
                              const std::vector<std::pair<std::string, std::vector<std::string>>>&
                                  covariates = {});

/// Structure plus one coefficient vector per predictor.
struct ModelSpec {
  ModelStructure structure;
  std::vector<std::vector<double>> coefficients;

  void validate() const;
  std::vector<double> flat_coefficients() const;
};

ModelSpec with_coefficients(const ModelStructure& structure, std::span<const double> flat);
/// All slopes zero; intercepts at the given values (one per predictor).
ModelSpec intercept_model(const ModelStructure& structure, std::span<const double> intercepts);

/// Observation-specific distribution parameters after link inversion.
struct ObservationParams {
  std::optional<MarginalParams> margin1;
  std::optional<MarginalParams> margin2;
  std::optional<CopulaSpec> copula;
};

ObservationParams observation_params(const ModelSpec& model, std::span<const double> x_row);
ObservationParams observation_params(const ModelSpec& model, const Dataset& data, std::size_t row);

/// log f(y_i1, y_i2 | x_i) per observation (univariate models: the one margin).
std::vector<double> pointwise_log_likelihood(const ModelSpec& model, const Dataset& data);

/// Sum over observations of log c + log f1 + log f2 with observation-specific
/// parameters. Throws NumericalError naming the first observation and
/// parameter that produced a non-finite term.
double joint_log_likelihood(const ModelSpec& model, const Dataset& data);

/// Gradient with respect to the flat coefficient vector by Richardson-extrapolated
/// central differences.
std::vector<double> log_likelihood_gradient(const ModelSpec& model, const Dataset& data);

// Serialization -----------------------------------------------------------

nlohmann::json to_json(const Standardization& s);
Standardization standardization_from_json(const nlohmann::json& j);

nlohmann::json to_json(const ModelStructure& structure);
ModelStructure structure_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ModelSpec& model);
ModelSpec model_from_json(const nlohmann::json& j);

}  // namespace copreg
