// Acceptance gate. Usage: copreg_acceptance <criterion 1-8> ...; without
// arguments every criterion runs. One "[PASS]" or "[FAIL]" line per criterion.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include <boost/math/quadrature/exp_sinh.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>

#include "copreg/copulas.hpp"
#include "copreg/diagnostics.hpp"
#include "copreg/inference.hpp"
#include "copreg/marginals.hpp"
#include "copreg/prediction.hpp"
#include "copreg/stats.hpp"
#include "copreg/synthetic.hpp"

using namespace copreg;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, x);
  return buf;
}

void note(const std::string& s) { std::cout << "  " << s << std::endl; }

// 1. Copula correctness -------------------------------------------------------

double tau_closed_form(const CopulaSpec& s) {
  double t = 0.0;
  switch (s.family) {
    case CopulaFamily::Gaussian: t = 2.0 / std::numbers::pi * std::asin(s.rho); break;
    case CopulaFamily::Clayton: t = s.rho / (s.rho + 2.0); break;
    case CopulaFamily::Gumbel: t = 1.0 - 1.0 / s.rho; break;
  }
  return (s.rotation == Rotation::R90 || s.rotation == Rotation::R270) ? -t : t;
}

std::vector<CopulaSpec> copula_grid(bool rotations) {
  std::vector<CopulaSpec> out;
  for (double r : {-0.7, -0.3, 0.1, 0.5, 0.85}) out.push_back({CopulaFamily::Gaussian, Rotation::R0, r});
  std::vector<Rotation> rots{Rotation::R0};
  if (rotations) rots = {Rotation::R0, Rotation::R90, Rotation::R180, Rotation::R270};
  for (Rotation rot : rots) {
    for (double r : {0.14, 0.5, 1.0, 2.0, 4.0}) out.push_back({CopulaFamily::Clayton, rot, r});
    for (double r : {1.2, 1.5, 2.0, 3.0, 5.0}) out.push_back({CopulaFamily::Gumbel, rot, r});
  }
  return out;
}

Outcome criterion1() {
  const auto t0 = Clock::now();
  double worst_mass = 0.0, worst_fd = 0.0, worst_tau = 0.0;
  boost::math::quadrature::tanh_sinh<double> outer(8), inner(8);
  for (const auto& s : copula_grid(false)) {
    const double mass = outer.integrate(
        [&](double u) {
          return inner.integrate([&](double v) { return copula_density(s, {u, v}); }, 0.0, 1.0, 1e-11);
        },
        0.0, 1.0, 1e-10);
    worst_mass = std::max(worst_mass, std::abs(mass - 1.0));
    const double h = 1e-4;
    for (double u : {0.15, 0.4, 0.6, 0.85})
      for (double v : {0.2, 0.5, 0.8}) {
        const double fd = (copula_cdf(s, {u + h, v + h}) - copula_cdf(s, {u + h, v - h}) -
                           copula_cdf(s, {u - h, v + h}) + copula_cdf(s, {u - h, v - h})) /
                          (4.0 * h * h);
        worst_fd = std::max(worst_fd, std::abs(fd - copula_density(s, {u, v})));
      }
  }
  Rng rng = make_rng(2024);
  for (const auto& s : copula_grid(true)) {
    const auto uv = sample_copula(s, 100000, rng);
    std::vector<double> u(uv.size()), v(uv.size());
    for (std::size_t i = 0; i < uv.size(); ++i) {
      u[i] = uv[i].u;
      v[i] = uv[i].v;
    }
    worst_tau = std::max(worst_tau, std::abs(stats::kendall_tau(u, v) - tau_closed_form(s)));
  }
  const double secs = seconds_since(t0);
  const bool pass = worst_mass <= 1e-5 && worst_fd <= 1e-4 && worst_tau <= 0.02 && secs < 120.0;
  return {pass, "max |mass - 1| " + fmt("%.2e", worst_mass) + " (<= 1e-5), max |FD - c| " + fmt("%.2e", worst_fd) +
                    " (<= 1e-4), max |tau_MC - tau| " + fmt("%.4f", worst_tau) + " (<= 0.02), " +
                    fmt("%.1f", secs) + " s (< 120 s)"};
}

// 2. Marginal correctness -----------------------------------------------------

Outcome criterion2() {
  const std::vector<DagumParams> grid{{2.3, 1.7, 0.9}, {0.8, 7.0, 3.1}, {4.0, 0.6, 12.0},
                                      {1.0, 1.0, 1.0}, {0.3, 12.0, 2.0}, {1.2, 6.4, 3.0}};
  double worst_q = 0.0, worst_y = 0.0, worst_mass = 0.0;
  bool median_exact = true;
  boost::math::quadrature::exp_sinh<double> es;
  for (const auto& d : grid) {
    for (int i = 1; i < 1000; ++i) {
      const double q = i / 1000.0;
      const double y = dagum_quantile(q, d);
      worst_q = std::max(worst_q, std::abs(dagum_cdf(y, d) - q));
      worst_y = std::max(worst_y, std::abs(dagum_quantile(dagum_cdf(y, d), d) - y) / y);
    }
    const double closed = d.b * std::pow(-1.0 + std::pow(2.0, 1.0 / d.p), -1.0 / d.a);
    median_exact = median_exact && dagum_median(d) == closed;
    const double mass = es.integrate([&](double y) { return dagum_pdf(y, d); }, 1e-14);
    worst_mass = std::max(worst_mass, std::abs(mass - 1.0));
  }
  const bool pass = worst_q <= 1e-10 && worst_y <= 1e-10 && median_exact && worst_mass <= 1e-6;
  return {pass, "max |F(Q(q)) - q| " + fmt("%.2e", worst_q) + ", max rel |Q(F(y)) - y| " + fmt("%.2e", worst_y) +
                    " (<= 1e-10), median closed form " + (median_exact ? "exact" : "NOT exact") +
                    ", max |mass - 1| " + fmt("%.2e", worst_mass) + " (<= 1e-6)"};
}

// 3. Conditional sampler against the normalized joint density ----------------

struct Probe {
  std::string name;
  ModelSpec model;
  std::vector<double> x;
  double y2;
};

ModelSpec bivariate(MarginalFamily f1, MarginalFamily f2, CopulaChoice c, std::vector<std::string> covs,
                    const std::vector<std::pair<std::string, std::vector<std::string>>>& slots,
                    std::vector<double> beta) {
  return with_coefficients(make_structure(f1, f2, c, std::move(covs), slots), beta);
}

/// c(F1(y1), F2(y2)) f1(y1) tabulated on a fine grid and normalized by the
/// trapezoid rule; returns the interpolated cdf.
std::function<double(double)> numeric_conditional_cdf(const ObservationParams& p, double y2, double lo, double hi) {
  const int points = 400001;
  const double h = (hi - lo) / (points - 1);
  const double v = cdf(y2, *p.margin2);
  auto cum = std::make_shared<std::vector<double>>(points, 0.0);
  double prev = 0.0;
  for (int k = 0; k < points; ++k) {
    const double y = lo + h * k;
    double f = 0.0;
    if (y > support_lower(*p.margin1)) {
      const double u = cdf(y, *p.margin1);
      if (u > 0.0 && u < 1.0) f = copula_density(*p.copula, {u, v}) * pdf(y, *p.margin1);
    }
    if (k > 0) (*cum)[k] = (*cum)[k - 1] + 0.5 * h * (f + prev);
    prev = f;
  }
  const double z = cum->back();
  for (auto& c : *cum) c /= z;
  return [cum, lo, h, points](double y) {
    if (y <= lo) return 0.0;
    const double pos = (y - lo) / h;
    const auto k = static_cast<int>(pos);
    if (k >= points - 1) return 1.0;
    const double t = pos - k;
    return (*cum)[k] + t * ((*cum)[k + 1] - (*cum)[k]);
  };
}

Outcome criterion3() {
  const auto t0 = Clock::now();
  const CopulaChoice clayton{CopulaFamily::Clayton, Rotation::R0};
  std::vector<Probe> probes;
  const auto gd = bivariate(MarginalFamily::Gaussian, MarginalFamily::Dagum, clayton, {}, {},
                            {0.0, 0.0, std::log(0.8), std::log(4.0), std::log(3.0), std::log(2.0)});
  probes.push_back({"clayton gaussian/dagum y2=1.5", gd, {}, 1.5});
  probes.push_back({"clayton gaussian/dagum y2=6", gd, {}, 6.0});
  probes.push_back({"gumbel@90 dagum/gaussian y2=-0.7",
                    bivariate(MarginalFamily::Dagum, MarginalFamily::Gaussian, {CopulaFamily::Gumbel, Rotation::R90},
                              {}, {}, {std::log(1.5), std::log(5.0), std::log(2.0), 0.0, 0.0, std::log(1.0)}),
                    {},
                    -0.7});
  probes.push_back({"gumbel gaussian/gaussian y2=1.8",
                    bivariate(MarginalFamily::Gaussian, MarginalFamily::Gaussian, {CopulaFamily::Gumbel, Rotation::R0},
                              {}, {}, {0.3, std::log(0.5), 0.0, 0.0, std::log(2.0)}),
                    {},
                    1.8});
  probes.push_back({"clayton@180 with covariates, x=(1, 0.4)",
                    bivariate(MarginalFamily::Gaussian, MarginalFamily::Dagum, {CopulaFamily::Clayton, Rotation::R180},
                              {"sectio", "z"}, {{"y1.mu", {"sectio", "z"}}, {"copula.rho", {"sectio"}}},
                              {-0.2, -0.3, 0.5, 0.1, std::log(1.2), std::log(3.0), std::log(2.5), std::log(0.5), 1.0}),
                    {1.0, 0.4},
                    2.2});

  bool pass = true;
  double min_p = 1.0;
  std::uint64_t seed = 300;
  for (const auto& pr : probes) {
    const auto params = observation_params(pr.model, pr.x);
    const auto s = make_conditional_sampler(pr.model, pr.y2, pr.x, {-8.0, 8.0});
    const auto oracle = numeric_conditional_cdf(params, pr.y2, s.lo, s.hi);
    Rng rng = make_rng(++seed);
    const auto d = conditional_sample(s, 20000, rng);
    const double p = stats::ks_test(d.draws, oracle).p_value;
    note(pr.name + ": KS p = " + fmt("%.4f", p) + ", acceptance " + fmt("%.3f", d.acceptance_rate));
    min_p = std::min(min_p, p);
    pass = pass && p > 0.01;
  }

  const double mu1 = 0.4, s1 = 1.5, mu2 = -0.2, s2 = 0.8, r = 0.6, y2 = 0.5;
  const auto gg = bivariate(MarginalFamily::Gaussian, MarginalFamily::Gaussian, {CopulaFamily::Gaussian, Rotation::R0},
                            {}, {}, {mu1, std::log(s1 * s1), mu2, std::log(s2 * s2), r / std::sqrt(1.0 - r * r)});
  const double cmean = mu1 + r * s1 / s2 * (y2 - mu2);
  const double csd = s1 * std::sqrt(1.0 - r * r);
  const auto s = make_conditional_sampler(gg, y2, {}, {-8.0, 8.0});
  Rng rng = make_rng(399);
  const auto d = conditional_sample(s, 100000, rng);
  const double dm = std::abs(stats::mean(d.draws) - cmean);
  const double dsd = std::abs(std::sqrt(stats::variance(d.draws)) - csd);
  pass = pass && dm <= 0.01 && dsd <= 0.01;

  const double secs = seconds_since(t0);
  pass = pass && secs < 300.0;
  return {pass, "5 probes, min KS p " + fmt("%.4f", min_p) + " (> 0.01); conditional normal |dmean| " +
                    fmt("%.4f", dm) + ", |dsd| " + fmt("%.4f", dsd) + " (<= 0.01); " + fmt("%.1f", secs) +
                    " s (< 300 s)"};
}

// 4. Inference recovery ---------------------------------------------------------

Outcome criterion4() {
  const int replicates = 10;
  std::size_t total = 0, covered = 0, ess_ok = 0;
  double max_psrf = 0.0, max_secs = 0.0;
  for (int rep = 0; rep < replicates; ++rep) {
    const auto t0 = Clock::now();
    const auto spec = perinatal_preset(4451);
    Rng rng = make_rng(derive_seed(4000, static_cast<std::uint64_t>(rep)));
    const auto data = generate_synthetic(spec, rng);
    McmcConfig cfg;
    cfg.seed = derive_seed(4100, static_cast<std::uint64_t>(rep));
    const auto samples = run_mcmc(spec.model.structure, data, PriorSpec{}, cfg);
    const auto truth = spec.model.flat_coefficients();
    const auto diag = coefficient_diagnostics(samples);
    std::size_t cov_rep = 0, ess_rep = 0;
    double psrf_rep = 0.0, ess_min = 1e300;
    for (std::size_t k = 0; k < diag.size(); ++k) {
      if (std::abs(diag[k].mean - truth[k]) <= 2.0 * diag[k].sd) ++cov_rep;
      if (diag[k].ess >= 500.0) ++ess_rep;
      psrf_rep = std::max(psrf_rep, diag[k].psrf.value_or(1.0));
      ess_min = std::min(ess_min, diag[k].ess);
    }
    const double secs = seconds_since(t0);
    note("replicate " + std::to_string(rep + 1) + ": within 2 sd " + std::to_string(cov_rep) + "/" +
         std::to_string(diag.size()) + ", max PSRF " + fmt("%.4f", psrf_rep) + ", min ESS " + fmt("%.0f", ess_min) +
         ", " + fmt("%.1f", secs) + " s");
    total += diag.size();
    covered += cov_rep;
    ess_ok += ess_rep;
    max_psrf = std::max(max_psrf, psrf_rep);
    max_secs = std::max(max_secs, secs);
  }
  const double cov_frac = static_cast<double>(covered) / static_cast<double>(total);
  const double ess_frac = static_cast<double>(ess_ok) / static_cast<double>(total);
  const bool pass = cov_frac >= 0.9 && max_psrf < 1.05 && ess_frac >= 0.9 && max_secs < 1800.0;
  return {pass, "within 2 sd " + fmt("%.1f", 100.0 * cov_frac) + "% (>= 90%), max PSRF " + fmt("%.4f", max_psrf) +
                    " (< 1.05), ESS >= 500 for " + fmt("%.1f", 100.0 * ess_frac) + "% (>= 90%), max " +
                    fmt("%.0f", max_secs) + " s per replicate (< 1800 s)"};
}

// 5. Model choice (directional) -------------------------------------------------

Outcome criterion5() {
  const int replicates = 10;
  int wins_score = 0, wins_copula = 0, wins_pit = 0;
  const std::vector<std::string> y2_covs{"prev", "sectio", "induction", "gain", "smoking", "employed"};
  for (int rep = 0; rep < replicates; ++rep) {
    const auto u = static_cast<std::uint64_t>(rep);

    // Skewed second response: Dagum against Gaussian by cross-validated score and PIT.
    const auto spec = perinatal_preset(1000);
    Rng rng = make_rng(derive_seed(5000, u));
    const auto data = generate_synthetic(spec, rng);
    const auto plan = make_cv_plan(data.size(), 4, derive_seed(5100, u));
    McmcConfig cfg;
    cfg.seed = derive_seed(5200, u);
    std::vector<std::pair<std::string, std::vector<std::string>>> gslots{{"y2.mu", y2_covs}, {"y2.sigma2", y2_covs}};
    std::vector<std::pair<std::string, std::vector<std::string>>> dslots{
        {"y2.p", y2_covs}, {"y2.a", y2_covs}, {"y2.b", y2_covs}};
    const auto gs = make_structure(std::nullopt, MarginalFamily::Gaussian, std::nullopt, data.covariate_names, gslots);
    const auto ds = make_structure(std::nullopt, MarginalFamily::Dagum, std::nullopt, data.covariate_names, dslots);
    const auto gdata = restandardize(data, data.standardization1, Standardization::gestational_age_gaussian());
    const auto ddata = restandardize(data, data.standardization1, Standardization::gestational_age_dagum());
    const double g_score = cv_log_score(gs, gdata, PriorSpec{}, cfg, plan, ScoreScope::Marginal2).score;
    const double d_score = cv_log_score(ds, ddata, PriorSpec{}, cfg, plan, ScoreScope::Marginal2).score;
    const auto g_fit = run_mcmc(gs, gdata, PriorSpec{}, cfg).posterior_mean_model();
    const auto d_fit = run_mcmc(ds, ddata, PriorSpec{}, cfg).posterior_mean_model();
    const double g_p = pit_uniformity(pit_values(g_fit, gdata, 2)).p_value;
    const double d_p = pit_uniformity(pit_values(d_fit, ddata, 2)).p_value;
    if (d_score < g_score) ++wins_score;
    if (g_p < 0.05 && d_p >= 0.05) ++wins_pit;

    // Clayton-generated dependence: Clayton against Gumbel and Gaussian by DIC and WAIC.
    SyntheticSpec cs;
    cs.n = 1000;
    CovariateGenerator g;
    g.name = "sectio";
    g.kind = CovariateGenerator::Kind::Binary;
    g.probability = 0.24;
    cs.covariates = {g};
    cs.model = with_coefficients(make_structure(MarginalFamily::Gaussian, MarginalFamily::Gaussian,
                                                CopulaChoice{CopulaFamily::Clayton, Rotation::R0}, {"sectio"},
                                                {{"copula.rho", {"sectio"}}}),
                                 std::vector<double>{0.0, 0.0, 0.0, 0.0, std::log(0.8), 0.8});
    Rng crng = make_rng(derive_seed(5300, u));
    const auto cdata = generate_synthetic(cs, crng);
    std::vector<InformationCriteria> ic;
    for (auto fam : {CopulaFamily::Clayton, CopulaFamily::Gumbel, CopulaFamily::Gaussian}) {
      const auto st = make_structure(MarginalFamily::Gaussian, MarginalFamily::Gaussian, CopulaChoice{fam, Rotation::R0},
                                     {"sectio"}, {{"copula.rho", {"sectio"}}});
      McmcConfig c2;
      c2.seed = derive_seed(5400, u);
      ic.push_back(information_criteria(run_mcmc(st, cdata, PriorSpec{}, c2), cdata));
    }
    const bool copula_win = ic[0].dic < ic[1].dic && ic[0].dic < ic[2].dic && ic[0].waic < ic[1].waic &&
                            ic[0].waic < ic[2].waic;
    if (copula_win) ++wins_copula;
    note("replicate " + std::to_string(rep + 1) + ": CV score dagum " + fmt("%.4f", d_score) + " vs gaussian " +
         fmt("%.4f", g_score) + "; PIT KS p dagum " + fmt("%.3f", d_p) + ", gaussian " + fmt("%.2e", g_p) +
         "; DIC clayton/gumbel/gaussian " + fmt("%.1f", ic[0].dic) + "/" + fmt("%.1f", ic[1].dic) + "/" +
         fmt("%.1f", ic[2].dic) + ", WAIC " + fmt("%.1f", ic[0].waic) + "/" + fmt("%.1f", ic[1].waic) + "/" +
         fmt("%.1f", ic[2].waic));
  }
  const bool pass = wins_score >= 8 && wins_copula >= 8 && wins_pit >= 8;
  return {pass, "dagum wins CV score " + std::to_string(wins_score) + "/10, clayton wins DIC and WAIC " +
                    std::to_string(wins_copula) + "/10, PIT gaussian rejects and dagum passes " +
                    std::to_string(wins_pit) + "/10 (each >= 8)"};
}

// 6. Variable selection ---------------------------------------------------------

Outcome criterion6() {
  const int replicates = 20;
  int kept_active = 0, dropped_all_noise = 0;
  std::vector<std::string> names{"active", "noise1", "noise2", "noise3", "noise4", "noise5"};
  for (int rep = 0; rep < replicates; ++rep) {
    const auto u = static_cast<std::uint64_t>(rep);
    SyntheticSpec spec;
    spec.n = 500;
    for (const auto& n : names) {
      CovariateGenerator g;
      g.name = n;
      spec.covariates.push_back(g);
    }
    spec.model = with_coefficients(
        make_structure(MarginalFamily::Gaussian, std::nullopt, std::nullopt, names, {{"y1.mu", {"active"}}}),
        std::vector<double>{0.0, 0.3, 0.0});
    Rng rng = make_rng(derive_seed(6000, u));
    const auto data = generate_synthetic(spec, rng);
    const auto start =
        make_structure(MarginalFamily::Gaussian, std::nullopt, std::nullopt, names, {{"y1.mu", names}});
    McmcConfig cfg;
    cfg.seed = derive_seed(6100, u);
    const auto sel = select_variables(start, data, PriorSpec{}, cfg, 0.95);
    const auto& mu = sel.structure.predictors[sel.structure.predictor_index({1, Parameter::Mu})];
    const bool active = std::find(mu.covariates.begin(), mu.covariates.end(), 0) != mu.covariates.end();
    const bool clean = mu.covariates.size() == (active ? 1u : 0u);
    kept_active += active;
    dropped_all_noise += clean;
    std::string kept;
    for (std::size_t c : mu.covariates) kept += " " + names[c];
    note("replicate " + std::to_string(rep + 1) + ": kept" + (kept.empty() ? " none" : kept) + " after " +
         std::to_string(sel.sweeps) + " fits");
  }
  const bool pass = kept_active >= 18 && dropped_all_noise >= 14;
  return {pass, "active kept " + std::to_string(kept_active) + "/20 (>= 90%), all noise dropped " +
                    std::to_string(dropped_all_noise) + "/20 (>= 70%)"};
}

// 7. Baseline comparison harness ---------------------------------------------

Dataset cubic_data(std::size_t n, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  Dataset d;
  d.covariate_names = {"x"};
  d.x.resize(static_cast<Eigen::Index>(n), 1);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = standard_normal(rng), y2 = standard_normal(rng);
    d.x(static_cast<Eigen::Index>(i), 0) = x;
    d.y2.push_back(y2);
    d.y1.push_back(0.5 + 0.3 * x + 0.8 * y2 - 0.2 * y2 * y2 + 0.05 * y2 * y2 * y2 + 0.5 * standard_normal(rng));
  }
  return d;
}

Outcome criterion7() {
  int baseline_wins = 0, copula_wins = 0;
  const int replicates = 3;
  for (int rep = 0; rep < replicates; ++rep) {
    const auto u = static_cast<std::uint64_t>(rep);
    McmcConfig cfg;
    cfg.seed = derive_seed(7000, u);
    {
      const auto d = cubic_data(600, derive_seed(7100, u));
      const auto plan = make_cv_plan(d.size(), 4, derive_seed(7200, u));
      const auto s = make_structure(MarginalFamily::Gaussian, MarginalFamily::Gaussian,
                                    CopulaChoice{CopulaFamily::Clayton, Rotation::R0}, d.covariate_names,
                                    {{"y1.mu", {"x"}}});
      const auto r = compare_models(s, {"x"}, d, PriorSpec{}, cfg, plan);
      baseline_wins += r.baseline_score < r.copula_score;
      note("cubic data " + std::to_string(rep + 1) + ": baseline " + fmt("%.4f", r.baseline_score) + " vs copula " +
           fmt("%.4f", r.copula_score));
    }
    {
      SyntheticSpec spec;
      spec.n = 600;
      spec.model = with_coefficients(make_structure(MarginalFamily::Gaussian, MarginalFamily::Gaussian,
                                                    CopulaChoice{CopulaFamily::Clayton, Rotation::R0}, {}),
                                     std::vector<double>{0.0, 0.0, 0.0, 0.0, std::log(8.0)});
      Rng rng = make_rng(derive_seed(7300, u));
      const auto d = generate_synthetic(spec, rng);
      const auto plan = make_cv_plan(d.size(), 4, derive_seed(7200, u));
      const auto r = compare_models(spec.model.structure, {}, d, PriorSpec{}, cfg, plan);
      copula_wins += r.copula_score < r.baseline_score;
      note("clayton rho=8 data " + std::to_string(rep + 1) + ": copula " + fmt("%.4f", r.copula_score) +
           " vs baseline " + fmt("%.4f", r.baseline_score));
    }
  }
  const bool pass = baseline_wins == replicates && copula_wins == replicates;
  return {pass, "baseline wins on cubic data " + std::to_string(baseline_wins) + "/3, copula wins on tail-dependent data " +
                    std::to_string(copula_wins) + "/3"};
}

// 8. Determinism of the full pipeline ------------------------------------------

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome criterion8() {
  const auto dir = fs::temp_directory_path() / "copreg_acceptance_c8";
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::ofstream(dir / "plan.json") << R"({
  "seed": 8,
  "data": {"preset": "perinatal", "n": 1000},
  "candidates": {"margin1": ["gaussian"], "margin2": ["gaussian", "dagum"],
                 "copulas": ["clayton", "gumbel", "gaussian"]},
  "eligible": {"y1.mu": ["sex", "sectio", "bmi"], "y2.*": ["sectio"], "copula.rho": ["sectio"]},
  "standardizations": "perinatal",
  "mcmc": {"n_chains": 3, "n_iterations": 2000, "burn_in": 500, "target_kept": 500},
  "subgroups": {"covariates": ["sectio"], "resamples": 500}
})";
  for (const char* run : {"a", "b"}) {
    const std::string cmd = std::string(COPREG_CLI) + " choose --plan " + (dir / "plan.json").string() + " --out " +
                            (dir / run).string() + " > " + (dir / (std::string(run) + ".log")).string() + " 2>&1";
    if (std::system(cmd.c_str()) != 0) return {false, "choose run " + std::string(run) + " failed: " + cmd};
  }
  const bool model = read_file(dir / "a" / "model.json") == read_file(dir / "b" / "model.json");
  const bool posterior = read_file(dir / "a" / "posterior.csv") == read_file(dir / "b" / "posterior.csv");
  const bool nonempty = fs::file_size(dir / "a" / "posterior.csv") > 0;
  return {model && posterior && nonempty, std::string("model.json ") + (model ? "identical" : "DIFFERS") +
                                              ", posterior.csv " + (posterior ? "identical" : "DIFFERS") + " (" +
                                              std::to_string(fs::file_size(dir / "a" / "posterior.csv")) + " bytes)"};
}

const char* kTitles[] = {"",
                         "copula correctness",
                         "marginal correctness",
                         "conditional sampler consistency",
                         "inference recovery",
                         "model-choice reproduction",
                         "variable selection",
                         "baseline comparison harness",
                         "pipeline determinism"};

}  // namespace

int main(int argc, char** argv) {
  std::vector<int> which;
  for (int i = 1; i < argc; ++i) which.push_back(std::atoi(argv[i]));
  if (which.empty()) which = {1, 2, 3, 4, 5, 6, 7, 8};
  const std::function<Outcome()> runners[] = {nullptr,     criterion1, criterion2, criterion3, criterion4,
                                              criterion5, criterion6, criterion7, criterion8};
  bool all = true;
  for (int c : which) {
    if (c < 1 || c > 8) {
      std::cerr << "unknown criterion " << c << '\n';
      return 2;
    }
    Outcome o;
    try {
      o = runners[c]();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    std::cout << (o.pass ? "[PASS] " : "[FAIL] ") << c << " " << kTitles[c] << ": " << o.detail << std::endl;
    all = all && o.pass;
  }
  return all ? 0 : 1;
}
