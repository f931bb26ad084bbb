#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "copreg/diagnostics.hpp"
#include "copreg/inference.hpp"
#include "copreg/ingest.hpp"
#include "copreg/model.hpp"
#include "copreg/prediction.hpp"
#include "copreg/synthetic.hpp"

namespace copreg {

/// Parses "clayton", "gumbel@90", ...
CopulaChoice copula_choice_from_string(std::string_view name);

// Run plan -------------------------------------------------------------------

struct DataSource {
  /// Either a CSV file read through `schema` or a synthetic generator.
  std::optional<std::filesystem::path> csv;
  CsvSchema schema;
  std::optional<SyntheticSpec> synthetic;

  void validate() const;
};

struct SubgroupPlan {
  std::vector<std::string> covariates;
  int groups = 4;
  int resamples = 2000;
};

struct BaselinePlan {
  bool enabled = false;
  /// Empty means every data covariate.
  std::vector<std::string> covariates;
  double alpha = 0.05;
  bool sampled_score = false;
  std::size_t kde_draws = 200;
};

/// Standardization per response and marginal family; unlisted pairs keep the
/// data's own standardization.
using StandardizationTable = std::map<std::pair<int, MarginalFamily>, Standardization>;

struct RunPlan {
  std::uint64_t seed = 0;
  bool has_seed = false;
  DataSource data;
  std::vector<MarginalFamily> margin1;
  std::vector<MarginalFamily> margin2;
  std::vector<CopulaChoice> copulas;
  /// Slot name ("y1.mu", "copula.rho") or response wildcard ("y1.*") to
  /// covariate names eligible for selection.
  std::map<std::string, std::vector<std::string>> eligible;
  StandardizationTable standardizations;
  /// Fixed structure for fit, select and compare. Built from the first
  /// candidates and all eligible covariates when absent.
  std::optional<nlohmann::json> structure;
  McmcConfig mcmc;
  PriorSpec prior;
  int cv_folds = 4;
  bool selection = true;
  double selection_level = 0.95;
  int max_sweeps = 10;
  SubgroupPlan subgroups;
  BaselinePlan baseline;
  /// Fit candidates of a stage on separate threads.
  bool parallel_candidates = true;
  std::filesystem::path output;
  bool plot_data = false;

  /// Throws StructuralError on an empty candidate slot or a missing seed.
  void validate() const;
};

/// Relative CSV paths resolve against `base_dir`. Without `validate` the plan
/// is returned unchecked so that command-line overrides can complete it.
RunPlan run_plan_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {},
                           bool validate = true);
nlohmann::json to_json(const RunPlan& plan);
RunPlan load_run_plan(const std::filesystem::path& path, bool validate = true);

struct LoadedData {
  Dataset data;
  std::size_t rows_read = 0;
  std::size_t removed_missing = 0;
  std::size_t removed_range = 0;
};

/// Reads or generates the plan's data. Synthetic data use a seed derived from
/// the plan seed.
LoadedData load_plan_data(const RunPlan& plan);

/// Standardization of `response` under `family` for this plan and data.
Standardization plan_standardization(const RunPlan& plan, const Dataset& data, int response,
                                     MarginalFamily family);

/// Structure with covariates from the plan's eligible map.
ModelStructure plan_structure(const RunPlan& plan, const Dataset& data, std::optional<MarginalFamily> margin1,
                              std::optional<MarginalFamily> margin2, std::optional<CopulaChoice> copula);

/// The plan's fixed structure (or the first-candidate default) together with
/// the data restandardized for its margins.
std::pair<ModelStructure, Dataset> plan_fixed_structure(const RunPlan& plan, const Dataset& data);

// Results ----------------------------------------------------------------------

struct MarginalCandidate {
  int response = 1;
  MarginalFamily family = MarginalFamily::Gaussian;
  Standardization standardization;
  ModelStructure structure;
  std::vector<std::vector<std::string>> dropped;
  /// Cross-validated marginal log-score (only with competing candidates).
  std::optional<double> cv_score;
  PitEntry pit;
};

struct CopulaCandidate {
  CopulaChoice choice;
  ModelStructure structure;
  std::vector<std::vector<std::string>> dropped;
  std::optional<InformationCriteria> criteria;
};

struct RunResult {
  std::string command;
  LoadedData input;
  /// Data on the standardization of the final model.
  Dataset data;
  std::vector<MarginalCandidate> marginals;
  std::vector<CopulaCandidate> copulas;
  std::optional<std::size_t> winner1;
  std::optional<std::size_t> winner2;
  std::optional<std::size_t> copula_winner;
  std::vector<std::vector<std::string>> dropped;
  std::optional<PosteriorSamples> samples;
  std::optional<ModelSpec> model;
  DiagnosticsReport diagnostics;
  std::optional<ComparisonReport> comparison;
  std::vector<std::string> completed_stages;
};

/// Stepwise model choice: margins are fitted univariately per candidate
/// family with credible-interval selection and ranked by cross-validated
/// log-score; with the winning margins fixed, each candidate copula is fitted
/// with selection on its dependence covariates and ranked by DIC (WAIC
/// reported alongside). When plan.output is set the bundle is written there;
/// a failing stage writes status.json and the partial results and rethrows
/// with the message prefixed by "stage <name>: ".
RunResult run_model_choice(const RunPlan& plan);

/// One MCMC fit of the fixed structure, with or without selection.
RunResult run_fit(const RunPlan& plan, bool select);

/// Copula regression against the polynomial baseline on shared folds.
ComparisonReport run_compare(const RunPlan& plan);

/// Output bundle: model.json, posterior.csv, posterior.json, diagnostics.json,
/// diagnostics.txt, plan.json, status.json, tables/*.txt and (with plot data)
/// plotdata/*.csv.
void write_bundle(const RunResult& result, const RunPlan& plan, const std::filesystem::path& dir);

inline constexpr int kBundleVersion = 1;

/// model.json content: the fitted model with its response standardizations.
nlohmann::json model_document(const ModelSpec& model, const Standardization& s1, const Standardization& s2);
struct LoadedModel {
  ModelSpec model;
  Standardization standardization1;
  Standardization standardization2;
};
LoadedModel load_model_document(const std::filesystem::path& path);

/// Inclusion and sign matrix: covariates by parameter; "+" or "-" when the
/// 95% interval excludes 0, "o" when it covers 0, "." when not included.
std::string sign_table(const PosteriorSamples& samples);
std::string coefficient_table(const PosteriorSamples& samples);
std::string convergence_table(const std::vector<CoefficientDiagnostics>& rows);
std::string model_choice_table(const RunResult& result);

/// Recomputes diagnostics of a written bundle from its plan, model and posterior.
DiagnosticsReport diagnose_bundle(const std::filesystem::path& dir);

}  // namespace copreg
