#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "copreg/inference.hpp"
#include "copreg/model.hpp"
#include "copreg/random.hpp"
#include "copreg/stats.hpp"

namespace copreg {

// Cross-validation plan ------------------------------------------------------

struct CvPlan {
  int n_folds = 4;
  std::uint64_t seed = 1;
  /// Fold id of every observation.
  std::vector<int> assignment;

  /// Folds of equal size +-1 covering exactly `n` observations.
  void validate(std::size_t n) const;
  std::vector<std::size_t> held_out(int fold) const;
  std::vector<std::size_t> training(int fold) const;
};

/// Random permutation dealt round-robin into `n_folds` folds.
CvPlan make_cv_plan(std::size_t n, int n_folds = 4, std::uint64_t seed = 1);

// PIT and quantile residuals -------------------------------------------------

/// F(y_i; theta_i) for response 1 or 2 at the model's coefficients.
std::vector<double> pit_values(const ModelSpec& model, const Dataset& data, int response);

/// PIT for rounded data: U(F(y - h), F(y + h)) per observation, h on the
/// standardized scale.
std::vector<double> randomized_pit_values(const ModelSpec& model, const Dataset& data, int response,
                                          double half_width, Rng& rng);

inline constexpr double kPitClamp = 1e-12;

/// Phi^-1 of PIT values clamped to [kPitClamp, 1 - kPitClamp].
std::vector<double> quantile_residuals(std::span<const double> pit);

/// One-sample KS test of PIT values against U(0, 1).
stats::KsResult pit_uniformity(std::span<const double> pit);

// Log-scores -----------------------------------------------------------------

enum class ScoreScope { Marginal1, Marginal2, Conditional12 };

std::string_view to_string(ScoreScope scope);
ScoreScope score_scope_from_string(std::string_view name);

/// Per-observation log predictive density for the scope at the model's
/// coefficients. With `raw_scale` the density refers to the raw response
/// units (the standardization Jacobian -log scale is added).
std::vector<double> predictive_log_density(const ModelSpec& model, const Dataset& data, ScoreScope scope,
                                           bool raw_scale = true);

/// Negative mean of log densities; lower is better.
double mean_log_score(std::span<const double> log_density);

struct CvOptions {
  /// Average the predictive density over posterior draws instead of
  /// plugging in the posterior mean.
  bool full_mixing = false;
  /// Upper bound on draws used for mixing (evenly thinned).
  std::size_t mixing_draws = 500;
  bool raw_scale = true;
};

struct CvResult {
  /// Negative mean log predictive density over all observations.
  double score = 0.0;
  /// -log predictive density per observation.
  std::vector<double> per_observation;
  std::vector<double> fold_scores;
};

/// Fits on the complement of each fold and scores the held-out observations.
/// The seed of a fold fit derives from the config seed and the fold's first
/// observation, so relabeling folds leaves the result unchanged.
CvResult cv_log_score(const ModelStructure& structure, const Dataset& data, const PriorSpec& prior,
                      const McmcConfig& config, const CvPlan& plan, ScoreScope scope,
                      const CvOptions& options = {});

/// Held-out log predictive density under the fitted posterior.
std::vector<double> posterior_predictive_log_density(const PosteriorSamples& samples, const Dataset& data,
                                                     ScoreScope scope, const CvOptions& options = {});

// Information criteria -------------------------------------------------------

struct InformationCriteria {
  double dic = 0.0;
  double p_dic = 0.0;
  /// Posterior mean deviance and deviance at the posterior mean.
  double mean_deviance = 0.0;
  double plugin_deviance = 0.0;
  double waic = 0.0;
  double p_waic = 0.0;
  /// Sum over observations of log mean_s f(y_i | theta_s).
  double lppd = 0.0;
};

/// DIC and WAIC from pooled draws, deviances on the raw response scale.
InformationCriteria information_criteria(const PosteriorSamples& samples, const Dataset& data);
double dic(const PosteriorSamples& samples, const Dataset& data);
double waic(const PosteriorSamples& samples, const Dataset& data);

// Convergence ----------------------------------------------------------------

struct PsrfResult {
  double point = 1.0;
  /// Upper 97.5% limit.
  double upper = 1.0;
};

/// Potential scale reduction factor with degrees-of-freedom adjustment. Equal
/// constant chains give 1.
PsrfResult psrf(std::span<const std::vector<double>> chains);
double psrf(const PosteriorSamples& samples, std::string_view label);

struct EssResult {
  double value = 0.0;
  /// Set when the draws are constant; the value is then the draw count.
  bool constant = false;
};

/// N / (1 + 2 sum rho_k) with Geyer's initial positive sequence truncation.
EssResult ess(std::span<const double> chain);
/// Mean of the per-chain values.
EssResult ess(const PosteriorSamples& samples, std::string_view label);

struct CoefficientDiagnostics {
  std::string label;
  double mean = 0.0;
  double sd = 0.0;
  double ci_lower = 0.0;
  double ci_upper = 0.0;
  std::optional<double> psrf;
  double ess = 0.0;
  bool constant = false;
};

std::vector<CoefficientDiagnostics> coefficient_diagnostics(const PosteriorSamples& samples, double level = 0.95);

// Subgroup rank correlations -------------------------------------------------

enum class Grouping { Auto, Levels, Ordered };

struct SubgroupOptions {
  Grouping grouping = Grouping::Auto;
  int resamples = 2000;
  std::uint64_t seed = 1;
  std::size_t min_size = 10;
};

struct SubgroupCorrelation {
  std::string group;
  std::size_t n = 0;
  double rho = 0.0;
  std::optional<std::pair<double, double>> ci80;
  std::optional<std::pair<double, double>> ci95;
  /// Too few observations; intervals suppressed.
  bool flagged = false;
};

struct SubgroupTable {
  std::string covariate;
  std::vector<SubgroupCorrelation> rows;
};

/// Spearman rho of (y1, y2) per subgroup with percentile bootstrap intervals.
/// Auto grouping uses levels when the covariate takes at most 10 distinct
/// integer values and n_groups equal-size ordered groups otherwise.
SubgroupTable subgroup_rank_correlations(const Dataset& data, std::string_view covariate, int n_groups,
                                         const SubgroupOptions& options = {});

// Report ---------------------------------------------------------------------

struct ScoreEntry {
  std::string model;
  ScoreScope scope = ScoreScope::Marginal1;
  double score = 0.0;
};

struct CriteriaEntry {
  std::string model;
  InformationCriteria criteria;
};

struct PitEntry {
  std::string model;
  int response = 1;
  std::vector<double> pit;
  std::vector<double> residuals;
  stats::KsResult uniformity{};
};

PitEntry make_pit_entry(std::string model, const ModelSpec& spec, const Dataset& data, int response);

struct DiagnosticsReport {
  std::vector<ScoreEntry> log_scores;
  std::vector<CriteriaEntry> criteria;
  std::vector<CoefficientDiagnostics> coefficients;
  std::vector<PitEntry> pit;
  std::vector<SubgroupTable> subgroups;

  /// Throws NumericalError on any non-finite entry.
  void validate() const;
};

nlohmann::json to_json(const DiagnosticsReport& report);
std::string to_text(const DiagnosticsReport& report);

/// Histogram and QQ coordinates for each PIT entry and one CSV per subgroup table.
void write_plot_data(const DiagnosticsReport& report, const std::filesystem::path& dir, int pit_bins = 20);

}  // namespace copreg
