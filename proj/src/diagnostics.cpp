#include "copreg/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include <boost/math/distributions/fisher_f.hpp>

#include "copreg/error.hpp"

namespace copreg {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double sample_variance(std::span<const double> x) {
  return x.size() < 2 ? 0.0 : stats::variance(x);
}

double sample_covariance(std::span<const double> x, std::span<const double> y) {
  const double mx = stats::mean(x);
  const double my = stats::mean(y);
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - mx) * (y[i] - my);
  return s / static_cast<double>(x.size() - 1);
}

std::string fmt(double x, const char* spec = "%.4f") {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, x);
  return buf;
}

std::string file_token(std::string_view s) {
  std::string out;
  for (char c : s) out += std::isalnum(static_cast<unsigned char>(c)) ? c : '_';
  return out;
}

bool finite_pair(const std::optional<std::pair<double, double>>& p) {
  return !p || (std::isfinite(p->first) && std::isfinite(p->second));
}

}  // namespace

// Cross-validation plan ------------------------------------------------------

void CvPlan::validate(std::size_t n) const {
  if (n_folds < 2) throw StructuralError("cv plan: at least 2 folds are required");
  if (assignment.size() != n)
    throw StructuralError("cv plan covers " + std::to_string(assignment.size()) + " observations, data has " +
                          std::to_string(n));
  std::vector<std::size_t> sizes(static_cast<std::size_t>(n_folds), 0);
  for (int f : assignment) {
    if (f < 0 || f >= n_folds) throw StructuralError("cv plan: fold id out of range");
    ++sizes[static_cast<std::size_t>(f)];
  }
  const auto [lo, hi] = std::minmax_element(sizes.begin(), sizes.end());
  if (*hi - *lo > 1) throw StructuralError("cv plan: fold sizes differ by more than one");
  if (*lo == 0) throw StructuralError("cv plan: empty fold");
}

std::vector<std::size_t> CvPlan::held_out(int fold) const {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < assignment.size(); ++i)
    if (assignment[i] == fold) rows.push_back(i);
  return rows;
}

std::vector<std::size_t> CvPlan::training(int fold) const {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < assignment.size(); ++i)
    if (assignment[i] != fold) rows.push_back(i);
  return rows;
}

CvPlan make_cv_plan(std::size_t n, int n_folds, std::uint64_t seed) {
  if (n_folds < 2) throw StructuralError("cv plan: at least 2 folds are required");
  if (n < static_cast<std::size_t>(n_folds)) throw StructuralError("cv plan: fewer observations than folds");
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng = make_rng(seed);
  for (std::size_t i = n - 1; i > 0; --i) std::swap(perm[i], perm[uniform_index(rng, i + 1)]);
  CvPlan plan;
  plan.n_folds = n_folds;
  plan.seed = seed;
  plan.assignment.resize(n);
  for (std::size_t i = 0; i < n; ++i) plan.assignment[perm[i]] = static_cast<int>(i % static_cast<std::size_t>(n_folds));
  return plan;
}

// PIT ------------------------------------------------------------------------

namespace {

const MarginalParams& margin_of(const ObservationParams& p, int response) {
  const auto& m = response == 1 ? p.margin1 : p.margin2;
  if (!m) throw StructuralError("model has no margin for response " + std::to_string(response));
  return *m;
}

void check_response(int response) {
  if (response != 1 && response != 2) throw StructuralError("response must be 1 or 2");
}

}  // namespace

std::vector<double> pit_values(const ModelSpec& model, const Dataset& data, int response) {
  check_response(response);
  model.validate();
  data.validate();
  const auto& y = response == 1 ? data.y1 : data.y2;
  std::vector<double> out(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    with_context("observation " + std::to_string(i), [&] {
      out[i] = cdf(y[i], margin_of(observation_params(model, data, i), response));
    });
  }
  return out;
}

std::vector<double> randomized_pit_values(const ModelSpec& model, const Dataset& data, int response,
                                          double half_width, Rng& rng) {
  check_response(response);
  if (!(half_width >= 0.0) || !std::isfinite(half_width))
    throw StructuralError("randomized PIT: half width must be non-negative");
  model.validate();
  data.validate();
  const auto& y = response == 1 ? data.y1 : data.y2;
  std::vector<double> out(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& m = margin_of(observation_params(model, data, i), response);
    const double lo = cdf(y[i] - half_width, m);
    const double hi = cdf(y[i] + half_width, m);
    out[i] = lo + uniform01(rng) * (hi - lo);
  }
  return out;
}

std::vector<double> quantile_residuals(std::span<const double> pit) {
  std::vector<double> out(pit.size());
  for (std::size_t i = 0; i < pit.size(); ++i) {
    if (std::isnan(pit[i])) throw DomainError("quantile residuals: PIT value is NaN");
    out[i] = stats::normal_quantile(std::clamp(pit[i], kPitClamp, 1.0 - kPitClamp));
  }
  return out;
}

stats::KsResult pit_uniformity(std::span<const double> pit) {
  return stats::ks_test(pit, [](double u) { return std::clamp(u, 0.0, 1.0); });
}

// Log-scores -----------------------------------------------------------------

std::string_view to_string(ScoreScope scope) {
  switch (scope) {
    case ScoreScope::Marginal1: return "marginal1";
    case ScoreScope::Marginal2: return "marginal2";
    case ScoreScope::Conditional12: return "conditional12";
  }
  return "?";
}

ScoreScope score_scope_from_string(std::string_view name) {
  if (name == "marginal1") return ScoreScope::Marginal1;
  if (name == "marginal2") return ScoreScope::Marginal2;
  if (name == "conditional12") return ScoreScope::Conditional12;
  throw StructuralError("unknown score scope '" + std::string(name) + "'");
}

namespace {

void check_scope(const ModelStructure& s, ScoreScope scope) {
  const bool ok = scope == ScoreScope::Marginal1   ? s.margin1.has_value()
                  : scope == ScoreScope::Marginal2 ? s.margin2.has_value()
                                                   : s.margin1 && s.margin2;
  if (!ok) throw StructuralError("model has no density for score scope " + std::string(to_string(scope)));
}

double scope_jacobian(const Dataset& data, ScoreScope scope) {
  return -std::log(std::abs(scope == ScoreScope::Marginal2 ? data.standardization2.scale : data.standardization1.scale));
}

}  // namespace

std::vector<double> predictive_log_density(const ModelSpec& model, const Dataset& data, ScoreScope scope,
                                           bool raw_scale) {
  model.validate();
  data.validate();
  check_scope(model.structure, scope);
  const double jac = raw_scale ? scope_jacobian(data, scope) : 0.0;
  std::vector<double> out(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    with_context("observation " + std::to_string(i), [&] {
      const auto p = observation_params(model, data, i);
      double l = 0.0;
      switch (scope) {
        case ScoreScope::Marginal1: l = log_pdf(data.y1[i], *p.margin1); break;
        case ScoreScope::Marginal2: l = log_pdf(data.y2[i], *p.margin2); break;
        case ScoreScope::Conditional12:
          l = log_pdf(data.y1[i], *p.margin1);
          if (p.copula) {
            const auto& c = *p.copula;
            l += detail::copula_log_density_unchecked(c.family, c.rotation, c.rho, cdf(data.y1[i], *p.margin1),
                                                      cdf(data.y2[i], *p.margin2));
          }
          break;
      }
      if (!std::isfinite(l)) throw NumericalError("non-finite predictive density");
      out[i] = l + jac;
    });
  }
  return out;
}

double mean_log_score(std::span<const double> log_density) {
  if (log_density.empty()) throw StructuralError("log-score of an empty set");
  return -stats::mean(log_density);
}

std::vector<double> posterior_predictive_log_density(const PosteriorSamples& samples, const Dataset& data,
                                                     ScoreScope scope, const CvOptions& options) {
  samples.validate();
  if (!options.full_mixing)
    return predictive_log_density(samples.posterior_mean_model(), data, scope, options.raw_scale);

  const Eigen::MatrixXd draws = samples.pooled();
  const auto total = static_cast<std::size_t>(draws.rows());
  const std::size_t used = std::max<std::size_t>(1, std::min(total, options.mixing_draws));
  std::vector<double> max_l(data.size(), -kInf), sum(data.size(), 0.0);
  for (std::size_t s = 0; s < used; ++s) {
    const auto row = static_cast<Eigen::Index>(s * total / used);
    const Eigen::RowVectorXd beta = draws.row(row);
    const auto l = predictive_log_density(
        with_coefficients(samples.structure, {beta.data(), static_cast<std::size_t>(beta.size())}), data, scope,
        options.raw_scale);
    for (std::size_t i = 0; i < l.size(); ++i) {
      if (l[i] > max_l[i]) {
        sum[i] = sum[i] * std::exp(max_l[i] - l[i]) + 1.0;
        max_l[i] = l[i];
      } else {
        sum[i] += std::exp(l[i] - max_l[i]);
      }
    }
  }
  std::vector<double> out(data.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = max_l[i] + std::log(sum[i] / static_cast<double>(used));
  return out;
}

CvResult cv_log_score(const ModelStructure& structure, const Dataset& data, const PriorSpec& prior,
                      const McmcConfig& config, const CvPlan& plan, ScoreScope scope, const CvOptions& options) {
  structure.validate();
  data.validate();
  plan.validate(data.size());
  check_scope(structure, scope);
  CvResult result;
  result.per_observation.assign(data.size(), 0.0);
  for (int f = 0; f < plan.n_folds; ++f) {
    const auto test_rows = plan.held_out(f);
    const auto train_rows = plan.training(f);
    with_context("fold " + std::to_string(f), [&] {
      McmcConfig cfg = config;
      cfg.seed = derive_seed(config.seed, test_rows.front());
      const auto samples = run_mcmc(structure, subset(data, train_rows), prior, cfg);
      const auto l = posterior_predictive_log_density(samples, subset(data, test_rows), scope, options);
      double total = 0.0;
      for (std::size_t k = 0; k < l.size(); ++k) {
        result.per_observation[test_rows[k]] = -l[k];
        total -= l[k];
      }
      result.fold_scores.push_back(total / static_cast<double>(l.size()));
    });
  }
  result.score = stats::mean(result.per_observation);
  return result;
}

// Information criteria -------------------------------------------------------

InformationCriteria information_criteria(const PosteriorSamples& samples, const Dataset& data) {
  samples.validate();
  const Eigen::MatrixXd draws = samples.pooled();
  const auto S = static_cast<std::size_t>(draws.rows());
  if (S < 100) throw StructuralError("information criteria need at least 100 pooled draws");
  const PointwiseEvaluator eval(samples.structure, data);
  double jac = 0.0;
  if (samples.structure.margin1) jac -= std::log(std::abs(data.standardization1.scale));
  if (samples.structure.margin2) jac -= std::log(std::abs(data.standardization2.scale));

  const std::size_t n = data.size();
  auto evaluate = [&](std::span<const double> beta, const std::string& what) {
    Eigen::VectorXd l = eval(beta);
    for (std::size_t i = 0; i < n; ++i)
      if (!std::isfinite(l[static_cast<Eigen::Index>(i)]))
        throw NumericalError(what + ": non-finite log-likelihood at observation " + std::to_string(i));
    return Eigen::VectorXd(l.array() + jac);
  };

  Eigen::VectorXd mean_l = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  Eigen::VectorXd m2 = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  Eigen::VectorXd max_l = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(n), -kInf);
  Eigen::VectorXd sum_e = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  double mean_dev = 0.0;
  for (std::size_t s = 0; s < S; ++s) {
    const Eigen::RowVectorXd beta = draws.row(static_cast<Eigen::Index>(s));
    const Eigen::VectorXd l =
        evaluate({beta.data(), static_cast<std::size_t>(beta.size())}, "draw " + std::to_string(s));
    mean_dev += (-2.0 * l.sum() - mean_dev) / static_cast<double>(s + 1);
    for (Eigen::Index i = 0; i < l.size(); ++i) {
      const double d = l[i] - mean_l[i];
      mean_l[i] += d / static_cast<double>(s + 1);
      m2[i] += d * (l[i] - mean_l[i]);
      if (l[i] > max_l[i]) {
        sum_e[i] = sum_e[i] * std::exp(max_l[i] - l[i]) + 1.0;
        max_l[i] = l[i];
      } else {
        sum_e[i] += std::exp(l[i] - max_l[i]);
      }
    }
  }
  const auto mean_beta = samples.posterior_mean();
  const Eigen::VectorXd l_hat = evaluate(mean_beta, "posterior mean");

  InformationCriteria ic;
  ic.mean_deviance = mean_dev;
  ic.plugin_deviance = -2.0 * l_hat.sum();
  ic.p_dic = ic.mean_deviance - ic.plugin_deviance;
  ic.dic = ic.mean_deviance + ic.p_dic;
  ic.lppd = (max_l.array() + (sum_e.array() / static_cast<double>(S)).log()).sum();
  ic.p_waic = m2.sum() / static_cast<double>(S - 1);
  ic.waic = -2.0 * (ic.lppd - ic.p_waic);
  return ic;
}

double dic(const PosteriorSamples& samples, const Dataset& data) { return information_criteria(samples, data).dic; }

double waic(const PosteriorSamples& samples, const Dataset& data) {
  return information_criteria(samples, data).waic;
}

// Convergence ----------------------------------------------------------------

PsrfResult psrf(std::span<const std::vector<double>> chains) {
  const std::size_t m = chains.size();
  if (m < 2) throw StructuralError("PSRF needs at least 2 chains");
  const std::size_t n = chains[0].size();
  if (n < 2) throw StructuralError("PSRF needs at least 2 draws per chain");
  for (const auto& c : chains)
    if (c.size() != n) throw StructuralError("PSRF: chains differ in length");

  std::vector<double> s2(m), xbar(m), xbar2(m);
  for (std::size_t j = 0; j < m; ++j) {
    xbar[j] = stats::mean(chains[j]);
    s2[j] = sample_variance(chains[j]);
    xbar2[j] = xbar[j] * xbar[j];
  }
  const double N = static_cast<double>(n);
  const double M = static_cast<double>(m);
  const double w = stats::mean(s2);
  const double b = N * sample_variance(xbar);
  if (w == 0.0) return b == 0.0 ? PsrfResult{1.0, 1.0} : PsrfResult{kInf, kInf};

  const double muhat = stats::mean(xbar);
  const double var_w = sample_variance(s2) / M;
  const double var_b = 2.0 * b * b / (M - 1.0);
  const double cov_wb = (N / M) * (sample_covariance(s2, xbar2) - 2.0 * muhat * sample_covariance(s2, xbar));
  const double v = (N - 1.0) * w / N + (1.0 + 1.0 / M) * b / N;
  const double var_v = ((N - 1.0) * (N - 1.0) * var_w + (1.0 + 1.0 / M) * (1.0 + 1.0 / M) * var_b +
                        2.0 * (N - 1.0) * (1.0 + 1.0 / M) * cov_wb) /
                       (N * N);
  const double df_v = var_v > 0.0 ? 2.0 * v * v / var_v : kInf;
  const double df_adj = std::isfinite(df_v) ? (df_v + 3.0) / (df_v + 1.0) : 1.0;
  const double b_df = M - 1.0;
  const double w_df = var_w > 0.0 ? 2.0 * w * w / var_w : 1e10;
  const double r2_fixed = (N - 1.0) / N;
  const double r2_random = (1.0 + 1.0 / M) * (1.0 / N) * (b / w);
  const double q = boost::math::quantile(boost::math::fisher_f_distribution<>(b_df, std::min(w_df, 1e10)), 0.975);
  return {std::sqrt(df_adj * (r2_fixed + r2_random)), std::sqrt(df_adj * (r2_fixed + q * r2_random))};
}

double psrf(const PosteriorSamples& samples, std::string_view label) {
  samples.validate();
  std::vector<std::vector<double>> chains;
  for (std::size_t c = 0; c < samples.n_chains(); ++c) chains.push_back(samples.chain_draws(c, label));
  return psrf(chains).point;
}

EssResult ess(std::span<const double> chain) {
  const std::size_t n = chain.size();
  if (n < 4) throw StructuralError("ESS needs at least 4 draws");
  const auto [lo, hi] = std::minmax_element(chain.begin(), chain.end());
  if (*lo == *hi) return {static_cast<double>(n), true};
  const double mu = stats::mean(chain);
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = chain[i] - mu;
  auto autocov = [&](std::size_t k) {
    double s = 0.0;
    for (std::size_t t = 0; t + k < n; ++t) s += x[t] * x[t + k];
    return s / static_cast<double>(n);
  };
  const double g0 = autocov(0);
  double tau = -1.0;
  for (std::size_t k = 0; k + 1 < n; k += 2) {
    const double pair = (autocov(k) + autocov(k + 1)) / g0;
    if (pair <= 0.0) break;
    tau += 2.0 * pair;
  }
  const double N = static_cast<double>(n);
  tau = std::max(tau, 1.0 / std::log10(N));
  return {N / tau, false};
}

EssResult ess(const PosteriorSamples& samples, std::string_view label) {
  samples.validate();
  EssResult out;
  for (std::size_t c = 0; c < samples.n_chains(); ++c) {
    const auto r = ess(samples.chain_draws(c, label));
    out.value += r.value / static_cast<double>(samples.n_chains());
    out.constant = out.constant || r.constant;
  }
  return out;
}

std::vector<CoefficientDiagnostics> coefficient_diagnostics(const PosteriorSamples& samples, double level) {
  samples.validate();
  const auto mean = samples.posterior_mean();
  const auto sd = samples.posterior_sd();
  std::vector<CoefficientDiagnostics> out;
  for (std::size_t k = 0; k < samples.labels.size(); ++k) {
    CoefficientDiagnostics d;
    d.label = samples.labels[k];
    d.mean = mean[k];
    d.sd = sd[k];
    std::tie(d.ci_lower, d.ci_upper) = credible_interval(samples, d.label, level);
    if (samples.n_chains() >= 2) d.psrf = psrf(samples, d.label);
    const auto e = ess(samples, d.label);
    d.ess = e.value;
    d.constant = e.constant;
    out.push_back(std::move(d));
  }
  return out;
}

// Subgroups ------------------------------------------------------------------

SubgroupTable subgroup_rank_correlations(const Dataset& data, std::string_view covariate, int n_groups,
                                         const SubgroupOptions& options) {
  data.validate();
  const auto col = static_cast<Eigen::Index>(data.covariate_index(covariate));
  if (options.resamples < 1) throw StructuralError("subgroups: resamples must be positive");
  const std::size_t n = data.size();
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = data.x(static_cast<Eigen::Index>(i), col);

  std::set<double> levels(x.begin(), x.end());
  const bool integral = std::all_of(x.begin(), x.end(), [](double v) { return v == std::round(v); });
  const bool by_level = options.grouping == Grouping::Levels ||
                        (options.grouping == Grouping::Auto && integral && levels.size() <= 10);
  if (!by_level && n_groups < 1) throw StructuralError("subgroups: n_groups must be positive");

  std::vector<std::pair<std::string, std::vector<std::size_t>>> groups;
  if (by_level) {
    for (double level : levels) {
      std::vector<std::size_t> rows;
      for (std::size_t i = 0; i < n; ++i)
        if (x[i] == level) rows.push_back(i);
      groups.emplace_back(std::string(covariate) + "=" + format_double(level), std::move(rows));
    }
  } else {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    const auto g = static_cast<std::size_t>(n_groups);
    for (std::size_t k = 0; k < g; ++k) {
      const std::size_t lo = k * n / g, hi = (k + 1) * n / g;
      std::vector<std::size_t> rows(order.begin() + static_cast<std::ptrdiff_t>(lo),
                                    order.begin() + static_cast<std::ptrdiff_t>(hi));
      std::string label = std::string(covariate) + " group " + std::to_string(k + 1);
      if (!rows.empty()) label += " [" + format_double(x[rows.front()]) + ", " + format_double(x[rows.back()]) + "]";
      groups.emplace_back(std::move(label), std::move(rows));
    }
  }

  SubgroupTable table;
  table.covariate = std::string(covariate);
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const auto& rows = groups[g].second;
    SubgroupCorrelation r;
    r.group = groups[g].first;
    r.n = rows.size();
    std::vector<double> a(rows.size()), b(rows.size());
    for (std::size_t k = 0; k < rows.size(); ++k) {
      a[k] = data.y1[rows[k]];
      b[k] = data.y2[rows[k]];
    }
    if (rows.size() < options.min_size) {
      r.flagged = true;
      r.rho = rows.size() >= 2 ? stats::spearman(a, b) : 0.0;
      table.rows.push_back(std::move(r));
      continue;
    }
    r.rho = stats::spearman(a, b);
    Rng rng = make_rng(derive_seed(options.seed, g));
    std::vector<double> boot, ra(rows.size()), rb(rows.size());
    boot.reserve(static_cast<std::size_t>(options.resamples));
    for (int s = 0; s < options.resamples; ++s) {
      for (std::size_t k = 0; k < rows.size(); ++k) {
        const auto j = uniform_index(rng, rows.size());
        ra[k] = a[j];
        rb[k] = b[j];
      }
      const double v = stats::spearman(ra, rb);
      if (std::isfinite(v)) boot.push_back(v);
    }
    std::sort(boot.begin(), boot.end());
    r.ci80 = {stats::quantile_sorted(boot, 0.10), stats::quantile_sorted(boot, 0.90)};
    r.ci95 = {stats::quantile_sorted(boot, 0.025), stats::quantile_sorted(boot, 0.975)};
    table.rows.push_back(std::move(r));
  }
  return table;
}

// Report ---------------------------------------------------------------------

PitEntry make_pit_entry(std::string model, const ModelSpec& spec, const Dataset& data, int response) {
  PitEntry e;
  e.model = std::move(model);
  e.response = response;
  e.pit = pit_values(spec, data, response);
  e.residuals = quantile_residuals(e.pit);
  e.uniformity = pit_uniformity(e.pit);
  return e;
}

void DiagnosticsReport::validate() const {
  auto check = [](bool ok, const std::string& what) {
    if (!ok) throw NumericalError("diagnostics report: non-finite " + what);
  };
  for (const auto& s : log_scores) check(std::isfinite(s.score), "log-score for " + s.model);
  for (const auto& c : criteria) {
    const auto& i = c.criteria;
    check(std::isfinite(i.dic) && std::isfinite(i.waic) && std::isfinite(i.p_dic) && std::isfinite(i.p_waic),
          "criteria for " + c.model);
  }
  for (const auto& c : coefficients)
    check(std::isfinite(c.mean) && std::isfinite(c.sd) && std::isfinite(c.ci_lower) && std::isfinite(c.ci_upper) &&
              std::isfinite(c.ess) && (!c.psrf || std::isfinite(*c.psrf)),
          "diagnostics for " + c.label);
  for (const auto& p : pit) {
    for (double u : p.pit) check(std::isfinite(u), "PIT value for " + p.model);
    for (double r : p.residuals) check(std::isfinite(r), "quantile residual for " + p.model);
  }
  for (const auto& t : subgroups)
    for (const auto& r : t.rows) check(std::isfinite(r.rho) && finite_pair(r.ci80) && finite_pair(r.ci95), r.group);
}

nlohmann::json to_json(const DiagnosticsReport& report) {
  using nlohmann::json;
  auto interval = [](const std::optional<std::pair<double, double>>& p) {
    return p ? json::array({p->first, p->second}) : json(nullptr);
  };
  json j;
  j["log_score_convention"] = "negative mean log predictive density on the raw response scale; lower is better";
  j["log_scores"] = json::array();
  for (const auto& s : report.log_scores)
    j["log_scores"].push_back({{"model", s.model}, {"scope", std::string(to_string(s.scope))}, {"score", s.score}});
  j["criteria"] = json::array();
  for (const auto& c : report.criteria) {
    const auto& i = c.criteria;
    j["criteria"].push_back({{"model", c.model},
                             {"dic", i.dic},
                             {"p_dic", i.p_dic},
                             {"mean_deviance", i.mean_deviance},
                             {"plugin_deviance", i.plugin_deviance},
                             {"waic", i.waic},
                             {"p_waic", i.p_waic},
                             {"lppd", i.lppd}});
  }
  j["coefficients"] = json::array();
  for (const auto& c : report.coefficients)
    j["coefficients"].push_back({{"label", c.label},
                                 {"mean", c.mean},
                                 {"sd", c.sd},
                                 {"ci95", {c.ci_lower, c.ci_upper}},
                                 {"psrf", c.psrf ? json(*c.psrf) : json(nullptr)},
                                 {"ess", c.ess},
                                 {"constant", c.constant}});
  j["pit"] = json::array();
  for (const auto& p : report.pit)
    j["pit"].push_back({{"model", p.model},
                        {"response", p.response},
                        {"ks_statistic", p.uniformity.statistic},
                        {"ks_p_value", p.uniformity.p_value},
                        {"values", p.pit},
                        {"quantile_residuals", p.residuals}});
  j["subgroups"] = json::array();
  for (const auto& t : report.subgroups) {
    json rows = json::array();
    for (const auto& r : t.rows)
      rows.push_back({{"group", r.group},
                      {"n", r.n},
                      {"spearman", r.rho},
                      {"ci80", interval(r.ci80)},
                      {"ci95", interval(r.ci95)},
                      {"flagged", r.flagged}});
    j["subgroups"].push_back({{"covariate", t.covariate}, {"rows", rows}});
  }
  return j;
}

std::string to_text(const DiagnosticsReport& report) {
  std::ostringstream os;
  char line[256];
  if (!report.log_scores.empty()) {
    os << "Log-scores (negative mean log predictive density, raw scale; lower is better)\n";
    for (const auto& s : report.log_scores) {
      std::snprintf(line, sizeof line, "  %-32s %-14s %10.4f\n", s.model.c_str(),
                    std::string(to_string(s.scope)).c_str(), s.score);
      os << line;
    }
    os << '\n';
  }
  if (!report.criteria.empty()) {
    os << "Information criteria (lower is better)\n";
    std::snprintf(line, sizeof line, "  %-32s %12s %9s %12s %9s\n", "model", "DIC", "pD", "WAIC", "pWAIC");
    os << line;
    for (const auto& c : report.criteria) {
      std::snprintf(line, sizeof line, "  %-32s %12.2f %9.2f %12.2f %9.2f\n", c.model.c_str(), c.criteria.dic,
                    c.criteria.p_dic, c.criteria.waic, c.criteria.p_waic);
      os << line;
    }
    os << '\n';
  }
  if (!report.coefficients.empty()) {
    os << "Coefficients\n";
    std::snprintf(line, sizeof line, "  %-28s %10s %9s %21s %8s %8s\n", "label", "mean", "sd", "95% CI", "PSRF",
                  "ESS");
    os << line;
    for (const auto& c : report.coefficients) {
      const std::string ci = "[" + fmt(c.ci_lower) + ", " + fmt(c.ci_upper) + "]";
      std::snprintf(line, sizeof line, "  %-28s %10.4f %9.4f %21s %8s %8.1f%s\n", c.label.c_str(), c.mean, c.sd,
                    ci.c_str(), c.psrf ? fmt(*c.psrf).c_str() : "-", c.ess, c.constant ? " (constant)" : "");
      os << line;
    }
    os << '\n';
  }
  if (!report.pit.empty()) {
    os << "PIT uniformity (Kolmogorov-Smirnov)\n";
    for (const auto& p : report.pit) {
      std::snprintf(line, sizeof line, "  %-32s y%d  D = %.4f  p = %.4g\n", p.model.c_str(), p.response,
                    p.uniformity.statistic, p.uniformity.p_value);
      os << line;
    }
    os << '\n';
  }
  for (const auto& t : report.subgroups) {
    os << "Spearman rank correlation of (y1, y2) by " << t.covariate << '\n';
    for (const auto& r : t.rows) {
      auto iv = [](const std::optional<std::pair<double, double>>& p) {
        return p ? "[" + fmt(p->first, "%.3f") + ", " + fmt(p->second, "%.3f") + "]" : std::string("-");
      };
      std::snprintf(line, sizeof line, "  %-36s n = %5zu  rho = %7.3f  80%% %17s  95%% %17s%s\n", r.group.c_str(),
                    r.n, r.rho, iv(r.ci80).c_str(), iv(r.ci95).c_str(), r.flagged ? "  (too small)" : "");
      os << line;
    }
    os << '\n';
  }
  return os.str();
}

void write_plot_data(const DiagnosticsReport& report, const std::filesystem::path& dir, int pit_bins) {
  if (pit_bins < 1) throw StructuralError("plot data: bins must be positive");
  std::filesystem::create_directories(dir);
  auto open = [&](const std::string& name) {
    std::ofstream f(dir / name, std::ios::binary);
    if (!f) throw StructuralError("cannot open " + (dir / name).string() + " for writing");
    return f;
  };
  for (const auto& p : report.pit) {
    const std::string stem = file_token(p.model) + "_y" + std::to_string(p.response);
    std::vector<std::size_t> counts(static_cast<std::size_t>(pit_bins), 0);
    for (double u : p.pit)
      ++counts[std::min(static_cast<std::size_t>(u * pit_bins), static_cast<std::size_t>(pit_bins - 1))];
    auto hist = open("pit_hist_" + stem + ".csv");
    hist << "bin_lower,bin_upper,count,density\n";
    for (int b = 0; b < pit_bins; ++b) {
      const double dens = p.pit.empty() ? 0.0
                                        : static_cast<double>(counts[static_cast<std::size_t>(b)]) * pit_bins /
                                              static_cast<double>(p.pit.size());
      hist << format_double(static_cast<double>(b) / pit_bins) << ',' << format_double(static_cast<double>(b + 1) / pit_bins)
           << ',' << counts[static_cast<std::size_t>(b)] << ',' << format_double(dens) << '\n';
    }
    auto values = open("pit_values_" + stem + ".csv");
    values << "index,pit,quantile_residual\n";
    for (std::size_t i = 0; i < p.pit.size(); ++i)
      values << i << ',' << format_double(p.pit[i]) << ',' << format_double(p.residuals[i]) << '\n';
    std::vector<double> sorted = p.residuals;
    std::sort(sorted.begin(), sorted.end());
    auto qq = open("qq_" + stem + ".csv");
    qq << "theoretical,sample\n";
    const double n = static_cast<double>(sorted.size());
    for (std::size_t i = 0; i < sorted.size(); ++i)
      qq << format_double(stats::normal_quantile((static_cast<double>(i) + 0.5) / n)) << ','
         << format_double(sorted[i]) << '\n';
  }
  for (const auto& t : report.subgroups) {
    auto f = open("subgroups_" + file_token(t.covariate) + ".csv");
    f << "group,n,spearman,ci80_lower,ci80_upper,ci95_lower,ci95_upper,flagged\n";
    for (const auto& r : t.rows) {
      auto put = [&](const std::optional<std::pair<double, double>>& p) {
        if (p) f << ',' << format_double(p->first) << ',' << format_double(p->second);
        else f << ",,";
      };
      f << '"' << r.group << '"' << ',' << r.n << ',' << format_double(r.rho);
      put(r.ci80);
      put(r.ci95);
      f << ',' << (r.flagged ? 1 : 0) << '\n';
    }
  }
}

}  // namespace copreg
