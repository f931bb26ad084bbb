#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "copreg/error.hpp"
#include "copreg/inference.hpp"
#include "copreg/pipeline.hpp"
#include "copreg/prediction.hpp"
#include "copreg/stats.hpp"

namespace fs = std::filesystem;
using copreg::RunPlan;
using json = nlohmann::json;

namespace {

enum ExitCode { kOk = 0, kValidation = 2, kNumerical = 3 };

struct PlanOverrides {
  std::string plan_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> chains;
  std::optional<int> iters;
  std::string out;
  bool plot_data = false;
};

void add_plan_options(CLI::App* cmd, PlanOverrides& o, bool plan_required = true) {
  auto* plan = cmd->add_option("--plan", o.plan_path, "Run plan (JSON)");
  if (plan_required) plan->required();
  cmd->add_option("--seed", o.seed, "Override the plan seed");
  cmd->add_option("--chains", o.chains, "Override the number of MCMC chains");
  cmd->add_option("--iters", o.iters, "Override MCMC iterations per chain (burn-in becomes a fifth)");
  cmd->add_option("--out", o.out, "Output directory");
  cmd->add_flag("--plot-data", o.plot_data, "Write plot data CSVs");
}

RunPlan resolve_plan(const PlanOverrides& o) {
  RunPlan p = copreg::load_run_plan(o.plan_path, false);
  if (o.seed) {
    p.seed = *o.seed;
    p.has_seed = true;
  }
  if (o.chains) p.mcmc.n_chains = *o.chains;
  if (o.iters) {
    p.mcmc.n_iterations = *o.iters;
    p.mcmc.burn_in = *o.iters / 5;
  }
  if (!o.out.empty()) p.output = o.out;
  if (o.plot_data) p.plot_data = true;
  p.validate();
  return p;
}

int cmd_run(const PlanOverrides& o, const std::string& command) {
  RunPlan plan = resolve_plan(o);
  if (plan.output.empty()) throw copreg::StructuralError(command + ": an output directory is required (--out)");
  const auto result = command == "choose" ? copreg::run_model_choice(plan) : copreg::run_fit(plan, command == "select");
  std::cout << copreg::model_choice_table(result) << "\nbundle written to " << plan.output.string() << '\n';
  return kOk;
}

int cmd_compare(const PlanOverrides& o) {
  RunPlan plan = resolve_plan(o);
  const auto report = copreg::run_compare(plan);
  std::cout << copreg::to_text(report);
  if (!plan.output.empty()) {
    fs::create_directories(plan.output);
    std::ofstream(plan.output / "comparison.json") << copreg::to_json(report).dump(2) << '\n';
    std::ofstream(plan.output / "comparison.txt") << copreg::to_text(report);
    copreg::write_residuals(plan.output / "residuals.csv", report);
  }
  return kOk;
}

int cmd_simulate(const PlanOverrides& o, const std::string& preset, std::size_t n) {
  RunPlan plan;
  if (!o.plan_path.empty()) {
    plan = copreg::load_run_plan(o.plan_path, false);
  } else {
    if (preset != "perinatal") throw copreg::StructuralError("simulate: unknown preset '" + preset + "'");
    plan.data.synthetic = copreg::perinatal_preset(n);
  }
  if (o.seed) {
    plan.seed = *o.seed;
    plan.has_seed = true;
  }
  if (!plan.has_seed) throw copreg::StructuralError("simulate: a seed is required (--seed)");
  if (o.out.empty()) throw copreg::StructuralError("simulate: an output file is required (--out)");
  const auto loaded = copreg::load_plan_data(plan);
  copreg::write_dataset_csv(o.out, loaded.data);
  std::cout << loaded.data.size() << " rows written to " << o.out << '\n';
  return kOk;
}

int cmd_diagnose(const std::string& bundle, const std::string& out, bool plot_data) {
  const auto report = copreg::diagnose_bundle(bundle);
  std::cout << copreg::to_text(report);
  if (!out.empty()) {
    fs::create_directories(out);
    std::ofstream(fs::path(out) / "diagnostics.json") << copreg::to_json(report).dump(2) << '\n';
    std::ofstream(fs::path(out) / "diagnostics.txt") << copreg::to_text(report);
    if (plot_data) {
      fs::create_directories(fs::path(out) / "plotdata");
      copreg::write_plot_data(report, fs::path(out) / "plotdata");
    }
  }
  return kOk;
}

struct PredictOptions {
  std::string model;
  double y2 = 0.0;
  std::vector<std::string> x;
  std::size_t n = 1000;
  std::uint64_t seed = 1;
  std::size_t grid = 0;
  std::string out;
};

std::vector<double> covariate_row(const copreg::ModelSpec& model, const std::vector<std::string>& assignments) {
  const auto& names = model.structure.covariate_names;
  std::vector<double> row(names.size(), 0.0);
  std::vector<bool> given(names.size(), false);
  for (const auto& a : assignments) {
    const auto eq = a.find('=');
    if (eq == std::string::npos) throw copreg::StructuralError("--x expects name=value, got '" + a + "'");
    const auto name = a.substr(0, eq);
    const auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) throw copreg::StructuralError("--x: model has no covariate '" + name + "'");
    const auto k = static_cast<std::size_t>(it - names.begin());
    row[k] = copreg::parse_double(a.substr(eq + 1));
    given[k] = true;
  }
  for (const auto& p : model.structure.predictors)
    for (std::size_t c : p.covariates)
      if (!given[c]) throw copreg::StructuralError("--x: missing value for covariate '" + names[c] + "'");
  return row;
}

std::vector<double> linspace(double lo, double hi, std::size_t n) {
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i)
    v[i] = n == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
  return v;
}

std::pair<double, double> raw_range(const copreg::MarginalParams& m, const copreg::Standardization& s) {
  const double a = s.inverse(copreg::quantile(1e-4, m));
  const double b = s.inverse(copreg::quantile(1.0 - 1e-4, m));
  return {std::min(a, b), std::max(a, b)};
}

int cmd_predict(const PredictOptions& o) {
  const auto loaded = copreg::load_model_document(o.model);
  const auto& model = loaded.model;
  if (!model.structure.copula) throw copreg::StructuralError("predict: the model has no copula");
  const auto x = covariate_row(model, o.x);
  const auto params = copreg::observation_params(model, x);
  const auto& s1 = loaded.standardization1;
  const auto& s2 = loaded.standardization2;

  const double y2 = s2.forward(o.y2);
  const double q_lo = copreg::quantile(1e-4, *params.margin1);
  const double q_hi = copreg::quantile(1.0 - 1e-4, *params.margin1);
  const auto sampler = copreg::make_conditional_sampler(model, y2, x, {q_lo, q_hi});
  copreg::Rng rng = copreg::make_rng(o.seed);
  const auto draws = copreg::conditional_sample(sampler, o.n, rng);
  std::vector<double> raw(draws.draws.size());
  std::transform(draws.draws.begin(), draws.draws.end(), raw.begin(), [&](double d) { return s1.inverse(d); });

  json j{{"y2", o.y2},
         {"conditional_mean", s1.inverse(sampler.mean())},
         {"draws", raw.size()},
         {"acceptance_rate", draws.acceptance_rate}};
  for (double q : {0.05, 0.25, 0.5, 0.75, 0.95})
    j["quantiles"][copreg::format_double(q)] = copreg::stats::quantile(raw, q);
  std::cout << j.dump(2) << '\n';

  if (!o.out.empty()) {
    fs::create_directories(o.out);
    std::ofstream d(fs::path(o.out) / "draws.csv");
    d << "y1\n";
    for (double v : raw) d << copreg::format_double(v) << '\n';
    if (o.grid > 1) {
      const auto [a1, b1] = raw_range(*params.margin1, s1);
      const auto [a2, b2] = raw_range(*params.margin2, s2);
      const auto g1 = linspace(a1, b1, o.grid);
      const auto g2 = linspace(a2, b2, o.grid);
      copreg::write_density_grid(fs::path(o.out) / "density_grid.csv", g1, g2,
                                 copreg::bivariate_density_grid(model, x, s1, s2, g1, g2));
    }
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian bivariate distributional copula regression"};
  app.require_subcommand(1);

  PlanOverrides fit_o, select_o, choose_o, compare_o, simulate_o;
  auto* fit = app.add_subcommand("fit", "Fit the plan's structure");
  add_plan_options(fit, fit_o);
  auto* select = app.add_subcommand("select", "Fit with credible-interval variable selection");
  add_plan_options(select, select_o);
  auto* choose = app.add_subcommand("choose", "Stepwise choice of margins and copula");
  add_plan_options(choose, choose_o);
  auto* compare = app.add_subcommand("compare", "Cross-validated comparison with the polynomial baseline");
  add_plan_options(compare, compare_o);

  auto* simulate = app.add_subcommand("simulate", "Write synthetic data as CSV");
  add_plan_options(simulate, simulate_o, false);
  std::string preset = "perinatal";
  std::size_t sim_n = 4451;
  simulate->add_option("--preset", preset, "Synthetic preset")->capture_default_str();
  simulate->add_option("--n", sim_n, "Rows for the preset")->capture_default_str();

  PredictOptions po;
  auto* predict = app.add_subcommand("predict", "Conditional prediction of y1 given y2 and covariates");
  predict->add_option("--model", po.model, "model.json of a bundle")->required();
  predict->add_option("--y2", po.y2, "Raw value of the second response")->required();
  predict->add_option("--x", po.x, "Covariate value as name=value (repeatable)");
  predict->add_option("--n", po.n, "Number of draws")->capture_default_str();
  predict->add_option("--seed", po.seed, "Sampler seed")->capture_default_str();
  predict->add_option("--grid", po.grid, "Density grid points per axis (written with --out)");
  predict->add_option("--out", po.out, "Directory for draws.csv and density_grid.csv");

  std::string bundle, diag_out;
  bool diag_plot = false;
  auto* diagnose = app.add_subcommand("diagnose", "Recompute diagnostics of a bundle");
  diagnose->add_option("--bundle", bundle, "Bundle directory")->required();
  diagnose->add_option("--out", diag_out, "Output directory");
  diagnose->add_flag("--plot-data", diag_plot, "Write plot data CSVs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kValidation;
  }

  try {
    if (*fit) return cmd_run(fit_o, "fit");
    if (*select) return cmd_run(select_o, "select");
    if (*choose) return cmd_run(choose_o, "choose");
    if (*compare) return cmd_compare(compare_o);
    if (*simulate) return cmd_simulate(simulate_o, preset, sim_n);
    if (*predict) return cmd_predict(po);
    if (*diagnose) return cmd_diagnose(bundle, diag_out, diag_plot);
  } catch (const copreg::NumericalError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kNumerical;
  } catch (const copreg::StructuralError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kValidation;
  } catch (const copreg::DomainError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kValidation;
  } catch (const json::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kNumerical;
  }
  return kOk;
}
