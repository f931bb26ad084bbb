#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "copreg/model.hpp"
#include "copreg/random.hpp"

namespace copreg {

/// Integer-valued bin [lo, hi] drawn with probability `probability`, uniform inside.
struct DiscreteBin {
  int lo = 0;
  int hi = 0;
  double probability = 0.0;
};

struct CovariateGenerator {
  enum class Kind { Binary, Normal, Discrete };

  std::string name;
  Kind kind = Kind::Normal;
  /// Binary: P(x = 1).
  double probability = 0.5;
  /// Normal: mean and standard deviation.
  double mean = 0.0;
  double sd = 1.0;
  /// Discrete: bins with probabilities summing to 1.
  std::vector<DiscreteBin> bins;

  void validate() const;
};

struct SyntheticSpec {
  std::size_t n = 1000;
  std::vector<CovariateGenerator> covariates;
  /// Optional correlation matrix among the Normal covariates (in their order).
  std::optional<Eigen::MatrixXd> normal_correlation;
  /// Generating model; its covariate names must equal the generator names.
  ModelSpec model;
  Standardization standardization1;
  Standardization standardization2;

  void validate() const;
};

/// Draws covariates, then for each row the observation-specific parameters,
/// a copula pair (u, v) and responses y1 = F1^-1(u), y2 = F2^-1(v) on the
/// standardized scale. A missing margin leaves its response at 0.
Dataset generate_synthetic(const SyntheticSpec& spec, Rng& rng);

/// Covariate generators matching the perinatal registry descriptives.
std::vector<CovariateGenerator> perinatal_covariates();

/// Gaussian birth weight, Dagum gestational age and a Clayton copula with the
/// perinatal covariate structure: sectio raises the dependence from about
/// rho = 0.14 to 0.40, and the mean of standardized birth weight is about -0.22.
SyntheticSpec perinatal_preset(std::size_t n = 4451);

nlohmann::json to_json(const SyntheticSpec& spec);
SyntheticSpec synthetic_from_json(const nlohmann::json& j);

}  // namespace copreg
