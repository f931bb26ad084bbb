#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "copreg/model.hpp"

namespace copreg {

/// Independent Gaussian prior on every coefficient.
struct PriorSpec {
  double mean = 0.0;
  double variance = 1e4;
  void validate() const;
};

struct McmcConfig {
  int n_chains = 3;
  int n_iterations = 5000;
  int burn_in = 1000;
  /// 0 means (n_iterations - burn_in) / target_kept.
  int thinning = 0;
  int target_kept = 1000;
  /// Multiplier on the initial proposal covariance 2.38^2/d (D'D)^-1.
  double proposal_scale = 1.0;
  /// Extra joint block over all coefficients of each margin, enabled once the
  /// first empirical covariance is available.
  bool joint_margin_blocks = false;
  /// Start from a Newton fit of the posterior mode; its inverse negative
  /// Hessian tunes the block proposals and drives an independence move.
  bool laplace_start = true;
  /// Joint independence proposal from a multivariate t around the mode.
  bool independence_move = true;
  double independence_df = 10.0;
  /// Chains start at mode + init_dispersion * (Laplace draw).
  double init_dispersion = 1.5;
  /// Without a Laplace start: sd of the per-chain jitter on initial intercepts.
  double init_jitter = 0.1;
  std::uint64_t seed = 1;
  /// Number of worker threads; 0 = one per chain.
  int n_threads = 0;

  int effective_thinning() const;
  int kept_per_chain() const;
  void validate() const;
};

nlohmann::json to_json(const McmcConfig& config);
McmcConfig mcmc_config_from_json(const nlohmann::json& j, McmcConfig defaults = {});

struct PosteriorSamples {
  /// "y1.mu:(Intercept)", ... (see ModelStructure::coefficient_labels).
  std::vector<std::string> labels;
  /// One draws x k matrix per chain.
  std::vector<Eigen::MatrixXd> chains;
  ModelStructure structure;
  McmcConfig config;
  std::vector<std::uint64_t> chain_seeds;
  std::vector<std::string> block_names;
  /// Post-burn-in acceptance rate per chain and block.
  std::vector<std::vector<double>> acceptance;
  /// Whether the Laplace start succeeded (otherwise moment starts were used).
  bool approximation_used = false;

  std::size_t n_chains() const { return chains.size(); }
  std::size_t draws_per_chain() const { return chains.empty() ? 0 : static_cast<std::size_t>(chains[0].rows()); }
  std::size_t index_of(std::string_view label) const;
  /// Draws of one coefficient from one chain.
  std::vector<double> chain_draws(std::size_t chain, std::string_view label) const;
  /// All chains stacked.
  Eigen::MatrixXd pooled() const;
  std::vector<double> pooled_draws(std::string_view label) const;
  std::vector<double> posterior_mean() const;
  std::vector<double> posterior_sd() const;
  ModelSpec posterior_mean_model() const;
  void validate() const;
};

/// Adaptive blockwise random-walk Metropolis; one block per predictor.
PosteriorSamples run_mcmc(const ModelStructure& structure, const Dataset& data, const PriorSpec& prior,
                          const McmcConfig& config);

/// Log posterior (up to a constant) at a flat coefficient vector.
double log_posterior(const ModelStructure& structure, const Dataset& data, const PriorSpec& prior,
                     std::span<const double> beta);

/// Equal-tailed interval from pooled draws.
std::pair<double, double> credible_interval(const PosteriorSamples& samples, std::string_view label,
                                            double level);

struct SelectionResult {
  ModelStructure structure;
  PosteriorSamples samples;
  int sweeps = 0;
  /// Labels dropped in each sweep.
  std::vector<std::vector<std::string>> dropped;
};

/// Repeatedly fits and drops every slope whose credible interval at `level`
/// contains 0, until nothing is dropped or `max_sweeps` fits have been made.
/// Slots listed in `locked` keep their covariates.
SelectionResult select_variables(const ModelStructure& start, const Dataset& data, const PriorSpec& prior,
                                 const McmcConfig& config, double level = 0.95, int max_sweeps = 10,
                                 const std::vector<ParameterSlot>& locked = {});

/// Per-observation log-likelihood (standardized scale) for many coefficient
/// vectors on one dataset, through the sampler's vectorized path.
class PointwiseEvaluator {
 public:
  PointwiseEvaluator(ModelStructure structure, Dataset data);
  ~PointwiseEvaluator();
  PointwiseEvaluator(const PointwiseEvaluator&) = delete;
  PointwiseEvaluator& operator=(const PointwiseEvaluator&) = delete;
  Eigen::VectorXd operator()(std::span<const double> beta) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Persistence ----------------------------------------------------------------

/// posterior.csv (chain, draw, one column per coefficient) plus a JSON sidecar
/// with labels, structure, config and seeds. Numbers use shortest round-trip
/// formatting so a reload is bit-exact.
void write_posterior(const PosteriorSamples& samples, const std::filesystem::path& csv_path,
                     const std::filesystem::path& sidecar_path);
PosteriorSamples read_posterior(const std::filesystem::path& csv_path, const std::filesystem::path& sidecar_path);

/// Shortest decimal representation that parses back to the same double.
std::string format_double(double x);
double parse_double(std::string_view s);

namespace detail {
/// Log-likelihood through the sampler's cached evaluation path.
double sampler_log_likelihood(const ModelStructure& structure, const Dataset& data, std::span<const double> beta);
/// Posterior mode from the Newton search, if it converged.
std::optional<std::vector<double>> posterior_mode(const ModelStructure& structure, const Dataset& data,
                                                  const PriorSpec& prior);
}  // namespace detail

}  // namespace copreg
