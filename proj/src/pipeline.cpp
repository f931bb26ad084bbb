#include "copreg/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <functional>
#include <future>
#include <set>
#include <sstream>

#include "copreg/error.hpp"

namespace copreg {

namespace {

using json = nlohmann::json;

// Seed streams derived from the plan seed.
constexpr std::uint64_t kStreamData = 0;
constexpr std::uint64_t kStreamFolds = 1;
constexpr std::uint64_t kStreamSubgroups = 2;
constexpr std::uint64_t kStreamCompare = 3;
constexpr std::uint64_t kStreamFit = 4;

std::uint64_t marginal_stream(int response, MarginalFamily family) {
  return 10 + 10 * static_cast<std::uint64_t>(response) + static_cast<std::uint64_t>(family);
}

std::uint64_t copula_stream(CopulaChoice c) {
  return 100 + 4 * static_cast<std::uint64_t>(c.family) + static_cast<std::uint64_t>(c.rotation) / 90;
}

std::string marginal_name(int response, MarginalFamily family) {
  return "y" + std::to_string(response) + ":" + std::string(to_string(family));
}

std::string choice_name(CopulaChoice c) { return copula_name(c.family, c.rotation); }

std::string fixed(double x, int precision) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, x);
  return buf;
}

template <class T>
T json_get(const json& j, const char* key, const std::string& context) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw StructuralError(context + ": " + e.what());
  }
}

/// Runs tasks in order or on separate threads; results come back in task order
/// and the first failing task (in order) determines the exception.
template <class T>
std::vector<T> run_tasks(std::vector<std::function<T()>> tasks, bool parallel) {
  std::vector<T> out;
  out.reserve(tasks.size());
  if (!parallel || tasks.size() < 2) {
    for (auto& t : tasks) out.push_back(t());
    return out;
  }
  std::vector<std::future<T>> futures;
  for (auto& t : tasks) futures.push_back(std::async(std::launch::async, t));
  std::exception_ptr first;
  for (auto& f : futures) {
    try {
      out.push_back(f.get());
    } catch (...) {
      if (!first) first = std::current_exception();
    }
  }
  if (first) std::rethrow_exception(first);
  return out;
}

McmcConfig seeded(const RunPlan& plan, std::uint64_t stream) {
  McmcConfig c = plan.mcmc;
  c.seed = derive_seed(plan.seed, stream);
  return c;
}

std::vector<std::string> eligible_for(const RunPlan& plan, ParameterSlot slot) {
  std::vector<std::string> out;
  const auto add = [&](const std::string& key) {
    const auto it = plan.eligible.find(key);
    if (it == plan.eligible.end()) return;
    for (const auto& c : it->second)
      if (std::find(out.begin(), out.end(), c) == out.end()) out.push_back(c);
  };
  add(slot_name(slot));
  if (slot.response > 0) add("y" + std::to_string(slot.response) + ".*");
  return out;
}

using CovariateMap = std::vector<std::pair<std::string, std::vector<std::string>>>;

CovariateMap covariate_map(const ModelStructure& s) {
  CovariateMap out;
  for (const auto& p : s.predictors) {
    std::vector<std::string> names;
    for (std::size_t c : p.covariates) names.push_back(s.covariate_names.at(c));
    out.emplace_back(slot_name(p.slot), names);
  }
  return out;
}

std::vector<ParameterSlot> margin_slots(const ModelStructure& s) {
  std::vector<ParameterSlot> out;
  for (const auto& p : s.predictors)
    if (p.slot.response != 0) out.push_back(p.slot);
  return out;
}

Dataset raw_data(const Dataset& d) {
  return restandardize(d, Standardization::identity(), Standardization::identity());
}

std::vector<SubgroupTable> plan_subgroups(const RunPlan& plan, const Dataset& data) {
  std::vector<SubgroupTable> out;
  if (plan.subgroups.covariates.empty()) return out;
  const Dataset raw = raw_data(data);
  SubgroupOptions opt;
  opt.resamples = plan.subgroups.resamples;
  opt.seed = derive_seed(plan.seed, kStreamSubgroups);
  for (const auto& c : plan.subgroups.covariates)
    out.push_back(subgroup_rank_correlations(raw, c, plan.subgroups.groups, opt));
  return out;
}

ComparisonOptions comparison_options(const RunPlan& plan) {
  ComparisonOptions o;
  o.sampled_score = plan.baseline.sampled_score;
  o.kde_draws = plan.baseline.kde_draws;
  o.seed = derive_seed(plan.seed, kStreamCompare);
  o.baseline_alpha = plan.baseline.alpha;
  return o;
}

std::vector<std::string> baseline_covariates(const RunPlan& plan, const Dataset& data) {
  return plan.baseline.covariates.empty() ? data.covariate_names : plan.baseline.covariates;
}

void write_failure(const RunResult& result, const RunPlan& plan, const std::string& stage_name,
                   const std::string& message);

/// Runs one named stage, recording it on success. On failure the partial
/// results are written (when an output directory is set) and the error is
/// rethrown with the stage name.
template <class F>
void stage(RunResult& result, const RunPlan& plan, const std::string& name, F&& f) {
  const std::string prefix = "stage " + name + ": ";
  try {
    f();
  } catch (const DomainError& e) {
    write_failure(result, plan, name, e.what());
    throw DomainError(prefix + e.what());
  } catch (const NumericalError& e) {
    write_failure(result, plan, name, e.what());
    throw NumericalError(prefix + e.what());
  } catch (const StructuralError& e) {
    write_failure(result, plan, name, e.what());
    throw StructuralError(prefix + e.what());
  } catch (const std::exception& e) {
    write_failure(result, plan, name, e.what());
    throw NumericalError(prefix + e.what());
  }
  result.completed_stages.push_back(name);
}

void final_diagnostics(RunResult& r, const RunPlan& plan) {
  const auto& samples = *r.samples;
  r.model = samples.posterior_mean_model();
  r.diagnostics.coefficients = coefficient_diagnostics(samples);
  const auto& s = r.model->structure;
  if (s.margin1) r.diagnostics.pit.push_back(make_pit_entry("final", *r.model, r.data, 1));
  if (s.margin2) r.diagnostics.pit.push_back(make_pit_entry("final", *r.model, r.data, 2));
  r.diagnostics.subgroups = plan_subgroups(plan, r.data);
}

}  // namespace

// Parsing ------------------------------------------------------------------------

CopulaChoice copula_choice_from_string(std::string_view name) {
  const auto at = name.find('@');
  CopulaChoice c;
  c.family = copula_family_from_string(name.substr(0, at));
  if (at != std::string_view::npos) {
    const std::string deg(name.substr(at + 1));
    int d = 0;
    try {
      std::size_t used = 0;
      d = std::stoi(deg, &used);
      if (used != deg.size()) throw std::invalid_argument(deg);
    } catch (const std::exception&) {
      throw StructuralError("copula '" + std::string(name) + "': rotation must be 0, 90, 180 or 270");
    }
    c.rotation = rotation_from_degrees(d);
  }
  if (c.family == CopulaFamily::Gaussian && c.rotation != Rotation::R0)
    throw StructuralError("copula '" + std::string(name) + "': the gaussian copula takes no rotation");
  return c;
}

void DataSource::validate() const {
  if (csv.has_value() == synthetic.has_value())
    throw StructuralError("plan data: give exactly one of csv or synthetic");
  if (csv) schema.validate();
  if (synthetic) synthetic->validate();
}

void RunPlan::validate() const {
  if (!has_seed) throw StructuralError("plan: seed is mandatory");
  data.validate();
  if (margin1.empty()) throw StructuralError("plan: no candidate family for margin1");
  if (margin2.empty()) throw StructuralError("plan: no candidate family for margin2");
  if (copulas.empty()) throw StructuralError("plan: no candidate copula");
  for (const auto& [key, covs] : eligible) {
    if (key != "y1.*" && key != "y2.*") slot_from_string(key);
    std::set<std::string> seen;
    for (const auto& c : covs)
      if (!seen.insert(c).second) throw StructuralError("plan: covariate '" + c + "' repeated in " + key);
  }
  mcmc.validate();
  prior.validate();
  if (cv_folds < 2) throw StructuralError("plan: cv_folds must be at least 2");
  if (!(selection_level > 0.0 && selection_level < 1.0))
    throw StructuralError("plan: selection_level must lie in (0, 1)");
  if (max_sweeps < 1) throw StructuralError("plan: max_sweeps must be positive");
  if (subgroups.groups < 1 || subgroups.resamples < 0) throw StructuralError("plan: invalid subgroup settings");
  if (!(baseline.alpha >= 0.0 && baseline.alpha < 1.0)) throw StructuralError("plan: baseline alpha must lie in [0, 1)");
}

RunPlan run_plan_from_json(const json& j, const std::filesystem::path& base_dir, bool validate) {
  if (!j.is_object()) throw StructuralError("plan: expected a JSON object");
  RunPlan p;
  try {
    if (j.contains("seed")) {
      p.seed = j.at("seed").get<std::uint64_t>();
      p.has_seed = true;
    }

    const json& d = j.at("data");
    if (d.contains("csv")) {
      std::filesystem::path path = d.at("csv").get<std::string>();
      if (path.is_relative() && !base_dir.empty()) path = base_dir / path;
      p.data.csv = path;
      if (d.contains("schema")) p.data.schema = csv_schema_from_json(d.at("schema"));
    } else if (d.contains("synthetic")) {
      p.data.synthetic = synthetic_from_json(d.at("synthetic"));
    } else if (d.contains("preset")) {
      const auto name = d.at("preset").get<std::string>();
      if (name != "perinatal") throw StructuralError("plan data: unknown preset '" + name + "'");
      p.data.synthetic = perinatal_preset(d.value("n", std::size_t{4451}));
    } else {
      throw StructuralError("plan data: expected csv, synthetic or preset");
    }

    const json& c = j.at("candidates");
    for (const auto& f : c.value("margin1", std::vector<std::string>{}))
      p.margin1.push_back(marginal_family_from_string(f));
    for (const auto& f : c.value("margin2", std::vector<std::string>{}))
      p.margin2.push_back(marginal_family_from_string(f));
    for (const auto& f : c.value("copulas", std::vector<std::string>{}))
      p.copulas.push_back(copula_choice_from_string(f));

    if (j.contains("eligible"))
      p.eligible = j.at("eligible").get<std::map<std::string, std::vector<std::string>>>();

    if (j.contains("standardizations")) {
      const json& s = j.at("standardizations");
      if (s.is_string()) {
        if (s.get<std::string>() != "perinatal")
          throw StructuralError("plan: unknown standardization set '" + s.get<std::string>() + "'");
        for (int r : {1, 2})
          for (auto f : {MarginalFamily::Gaussian, MarginalFamily::Dagum})
            p.standardizations[{r, f}] = default_standardization(r, f);
      } else {
        for (const auto& [resp, fams] : s.items()) {
          int r = resp == "y1" ? 1 : resp == "y2" ? 2 : 0;
          if (r == 0) throw StructuralError("plan standardizations: unknown response '" + resp + "'");
          for (const auto& [fam, st] : fams.items())
            p.standardizations[{r, marginal_family_from_string(fam)}] = standardization_from_json(st);
        }
      }
    }

    if (j.contains("structure")) p.structure = j.at("structure");
    if (j.contains("mcmc")) p.mcmc = mcmc_config_from_json(j.at("mcmc"));
    if (j.contains("prior")) {
      p.prior.mean = j.at("prior").value("mean", p.prior.mean);
      p.prior.variance = j.at("prior").value("variance", p.prior.variance);
    }
    p.cv_folds = j.value("cv_folds", p.cv_folds);
    p.selection = j.value("selection", p.selection);
    p.selection_level = j.value("selection_level", p.selection_level);
    p.max_sweeps = j.value("max_sweeps", p.max_sweeps);
    if (j.contains("subgroups")) {
      const json& s = j.at("subgroups");
      p.subgroups.covariates = s.value("covariates", p.subgroups.covariates);
      p.subgroups.groups = s.value("groups", p.subgroups.groups);
      p.subgroups.resamples = s.value("resamples", p.subgroups.resamples);
    }
    if (j.contains("baseline")) {
      const json& b = j.at("baseline");
      p.baseline.enabled = b.value("enabled", true);
      p.baseline.covariates = b.value("covariates", p.baseline.covariates);
      p.baseline.alpha = b.value("alpha", p.baseline.alpha);
      p.baseline.sampled_score = b.value("sampled_score", p.baseline.sampled_score);
      p.baseline.kde_draws = b.value("kde_draws", p.baseline.kde_draws);
    }
    p.parallel_candidates = j.value("parallel_candidates", p.parallel_candidates);
    if (j.contains("output")) p.output = j.at("output").get<std::string>();
    p.plot_data = j.value("plot_data", p.plot_data);
  } catch (const json::exception& e) {
    throw StructuralError(std::string("plan: ") + e.what());
  }
  if (validate) p.validate();
  return p;
}

json to_json(const RunPlan& p) {
  json j;
  j["seed"] = p.seed;
  if (p.data.csv)
    j["data"] = {{"csv", p.data.csv->string()}, {"schema", to_json(p.data.schema)}};
  else
    j["data"] = {{"synthetic", to_json(*p.data.synthetic)}};
  json c;
  c["margin1"] = json::array();
  for (auto f : p.margin1) c["margin1"].push_back(std::string(to_string(f)));
  c["margin2"] = json::array();
  for (auto f : p.margin2) c["margin2"].push_back(std::string(to_string(f)));
  c["copulas"] = json::array();
  for (auto x : p.copulas) c["copulas"].push_back(choice_name(x));
  j["candidates"] = c;
  j["eligible"] = p.eligible;
  json st = json::object();
  for (const auto& [key, s] : p.standardizations)
    st["y" + std::to_string(key.first)][std::string(to_string(key.second))] = to_json(s);
  j["standardizations"] = st;
  if (p.structure) j["structure"] = *p.structure;
  j["mcmc"] = to_json(p.mcmc);
  j["prior"] = {{"mean", p.prior.mean}, {"variance", p.prior.variance}};
  j["cv_folds"] = p.cv_folds;
  j["selection"] = p.selection;
  j["selection_level"] = p.selection_level;
  j["max_sweeps"] = p.max_sweeps;
  j["subgroups"] = {{"covariates", p.subgroups.covariates},
                    {"groups", p.subgroups.groups},
                    {"resamples", p.subgroups.resamples}};
  j["baseline"] = {{"enabled", p.baseline.enabled},
                   {"covariates", p.baseline.covariates},
                   {"alpha", p.baseline.alpha},
                   {"sampled_score", p.baseline.sampled_score},
                   {"kde_draws", p.baseline.kde_draws}};
  j["parallel_candidates"] = p.parallel_candidates;
  j["output"] = p.output.string();
  j["plot_data"] = p.plot_data;
  return j;
}

RunPlan load_run_plan(const std::filesystem::path& path, bool validate) {
  std::ifstream in(path);
  if (!in) throw StructuralError("cannot open plan " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw StructuralError(path.string() + ": " + e.what());
  }
  return run_plan_from_json(j, path.parent_path(), validate);
}

// Data and structures ----------------------------------------------------------

LoadedData load_plan_data(const RunPlan& plan) {
  plan.data.validate();
  LoadedData out;
  if (plan.data.csv) {
    auto r = ingest_csv(*plan.data.csv, plan.data.schema);
    out.data = std::move(r.data);
    out.rows_read = r.rows_read;
    out.removed_missing = r.removed_missing;
    out.removed_range = r.removed_range;
  } else {
    Rng rng = make_rng(derive_seed(plan.seed, kStreamData));
    out.data = generate_synthetic(*plan.data.synthetic, rng);
    out.rows_read = out.data.size();
  }
  return out;
}

Standardization plan_standardization(const RunPlan& plan, const Dataset& data, int response,
                                     MarginalFamily family) {
  const auto it = plan.standardizations.find({response, family});
  if (it != plan.standardizations.end()) return it->second;
  return response == 1 ? data.standardization1 : data.standardization2;
}

ModelStructure plan_structure(const RunPlan& plan, const Dataset& data, std::optional<MarginalFamily> margin1,
                              std::optional<MarginalFamily> margin2, std::optional<CopulaChoice> copula) {
  const auto base = make_structure(margin1, margin2, copula, data.covariate_names);
  CovariateMap covs;
  for (const auto& p : base.predictors) covs.emplace_back(slot_name(p.slot), eligible_for(plan, p.slot));
  return make_structure(margin1, margin2, copula, data.covariate_names, covs);
}

std::pair<ModelStructure, Dataset> plan_fixed_structure(const RunPlan& plan, const Dataset& data) {
  ModelStructure s;
  if (plan.structure) {
    const json& j = *plan.structure;
    std::optional<MarginalFamily> m1, m2;
    std::optional<CopulaChoice> cop;
    try {
      if (j.contains("margin1") && !j.at("margin1").is_null())
        m1 = marginal_family_from_string(j.at("margin1").get<std::string>());
      if (j.contains("margin2") && !j.at("margin2").is_null())
        m2 = marginal_family_from_string(j.at("margin2").get<std::string>());
      if (j.contains("copula") && !j.at("copula").is_null())
        cop = copula_choice_from_string(j.at("copula").get<std::string>());
      CovariateMap covs;
      if (j.contains("covariates"))
        for (const auto& [slot, names] : j.at("covariates").items())
          covs.emplace_back(slot, names.get<std::vector<std::string>>());
      s = make_structure(m1, m2, cop, data.covariate_names, covs);
    } catch (const json::exception& e) {
      throw StructuralError(std::string("plan structure: ") + e.what());
    }
  } else {
    s = plan_structure(plan, data, plan.margin1.front(), plan.margin2.front(), plan.copulas.front());
  }
  s.validate();
  const auto s1 = s.margin1 ? plan_standardization(plan, data, 1, *s.margin1) : data.standardization1;
  const auto s2 = s.margin2 ? plan_standardization(plan, data, 2, *s.margin2) : data.standardization2;
  return {s, restandardize(data, s1, s2)};
}

// Stages -------------------------------------------------------------------------

RunResult run_model_choice(const RunPlan& plan) {
  plan.validate();
  RunResult r;
  r.command = "choose";
  CvPlan folds;

  stage(r, plan, "data", [&] {
    r.input = load_plan_data(plan);
    r.data = r.input.data;
    folds = make_cv_plan(r.data.size(), plan.cv_folds, derive_seed(plan.seed, kStreamFolds));
  });

  stage(r, plan, "marginals", [&] {
    std::vector<std::function<MarginalCandidate()>> tasks;
    for (int resp : {1, 2}) {
      const auto& fams = resp == 1 ? plan.margin1 : plan.margin2;
      const bool compete = fams.size() > 1;
      for (auto fam : fams)
        tasks.push_back([&plan, &r, &folds, resp, fam, compete] {
          return with_context(marginal_name(resp, fam), [&] {
            MarginalCandidate c;
            c.response = resp;
            c.family = fam;
            c.standardization = plan_standardization(plan, r.data, resp, fam);
            const Dataset d = resp == 1 ? restandardize(r.data, c.standardization, r.data.standardization2)
                                        : restandardize(r.data, r.data.standardization1, c.standardization);
            const auto start = resp == 1 ? plan_structure(plan, d, fam, std::nullopt, std::nullopt)
                                         : plan_structure(plan, d, std::nullopt, fam, std::nullopt);
            const auto cfg = seeded(plan, marginal_stream(resp, fam));
            std::optional<PosteriorSamples> samples;
            if (plan.selection) {
              auto sel = select_variables(start, d, plan.prior, cfg, plan.selection_level, plan.max_sweeps);
              c.structure = sel.structure;
              c.dropped = sel.dropped;
              samples = std::move(sel.samples);
            } else {
              c.structure = start;
              samples = run_mcmc(start, d, plan.prior, cfg);
            }
            c.pit = make_pit_entry(marginal_name(resp, fam), samples->posterior_mean_model(), d, resp);
            if (compete) {
              const auto scope = resp == 1 ? ScoreScope::Marginal1 : ScoreScope::Marginal2;
              c.cv_score = cv_log_score(c.structure, d, plan.prior, cfg, folds, scope).score;
            }
            return c;
          });
        });
    }
    r.marginals = run_tasks(std::move(tasks), plan.parallel_candidates);
    for (int resp : {1, 2}) {
      std::optional<std::size_t> best;
      for (std::size_t k = 0; k < r.marginals.size(); ++k) {
        const auto& c = r.marginals[k];
        if (c.response != resp) continue;
        if (!best || (c.cv_score && *c.cv_score < *r.marginals[*best].cv_score)) best = k;
      }
      (resp == 1 ? r.winner1 : r.winner2) = best;
    }
    for (const auto& c : r.marginals) {
      if (c.cv_score)
        r.diagnostics.log_scores.push_back(
            {marginal_name(c.response, c.family),
             c.response == 1 ? ScoreScope::Marginal1 : ScoreScope::Marginal2, *c.cv_score});
      r.diagnostics.pit.push_back(c.pit);
    }
  });

  std::vector<PosteriorSamples> copula_samples;
  stage(r, plan, "copulas", [&] {
    const auto& w1 = r.marginals[*r.winner1];
    const auto& w2 = r.marginals[*r.winner2];
    r.data = restandardize(r.data, w1.standardization, w2.standardization);
    CovariateMap margins = covariate_map(w1.structure);
    for (const auto& e : covariate_map(w2.structure)) margins.push_back(e);

    using Fit = std::pair<CopulaCandidate, PosteriorSamples>;
    std::vector<std::function<Fit()>> tasks;
    for (auto choice : plan.copulas)
      tasks.push_back([&plan, &r, &w1, &w2, margins, choice] {
        return with_context(choice_name(choice), [&] {
          CopulaCandidate c;
          c.choice = choice;
          CovariateMap covs = margins;
          covs.emplace_back("copula.rho", eligible_for(plan, ParameterSlot{0, Parameter::Rho}));
          const auto start = make_structure(w1.family, w2.family, choice, r.data.covariate_names, covs);
          const auto cfg = seeded(plan, copula_stream(choice));
          std::optional<PosteriorSamples> samples;
          if (plan.selection) {
            auto sel = select_variables(start, r.data, plan.prior, cfg, plan.selection_level, plan.max_sweeps,
                                        margin_slots(start));
            c.structure = sel.structure;
            c.dropped = sel.dropped;
            samples = std::move(sel.samples);
          } else {
            c.structure = start;
            samples = run_mcmc(start, r.data, plan.prior, cfg);
          }
          c.criteria = information_criteria(*samples, r.data);
          return Fit{c, std::move(*samples)};
        });
      });
    auto fits = run_tasks(std::move(tasks), plan.parallel_candidates);
    for (auto& [c, s] : fits) {
      r.copulas.push_back(c);
      copula_samples.push_back(std::move(s));
    }
    std::size_t best = 0;
    for (std::size_t k = 1; k < r.copulas.size(); ++k)
      if (r.copulas[k].criteria->dic < r.copulas[best].criteria->dic) best = k;
    r.copula_winner = best;
    for (const auto& c : r.copulas) r.diagnostics.criteria.push_back({choice_name(c.choice), *c.criteria});
  });

  stage(r, plan, "final", [&] {
    const auto w = *r.copula_winner;
    r.samples = std::move(copula_samples[w]);
    r.dropped = r.copulas[w].dropped;
    final_diagnostics(r, plan);
    if (plan.baseline.enabled) {
      auto cfg = seeded(plan, kStreamCompare);
      r.comparison = compare_models(r.samples->structure, baseline_covariates(plan, r.data), r.data, plan.prior,
                                    cfg, folds, comparison_options(plan));
    }
    r.diagnostics.validate();
  });

  if (!plan.output.empty()) stage(r, plan, "output", [&] { write_bundle(r, plan, plan.output); });
  return r;
}

RunResult run_fit(const RunPlan& plan, bool select) {
  plan.validate();
  RunResult r;
  r.command = select ? "select" : "fit";
  ModelStructure start;
  stage(r, plan, "data", [&] {
    r.input = load_plan_data(plan);
    auto [s, d] = plan_fixed_structure(plan, r.input.data);
    start = std::move(s);
    r.data = std::move(d);
  });
  stage(r, plan, select ? "select" : "fit", [&] {
    const auto cfg = seeded(plan, kStreamFit);
    if (select) {
      auto sel = select_variables(start, r.data, plan.prior, cfg, plan.selection_level, plan.max_sweeps);
      r.dropped = sel.dropped;
      r.samples = std::move(sel.samples);
    } else {
      r.samples = run_mcmc(start, r.data, plan.prior, cfg);
    }
  });
  stage(r, plan, "final", [&] {
    final_diagnostics(r, plan);
    r.diagnostics.criteria.push_back({"final", information_criteria(*r.samples, r.data)});
    r.diagnostics.validate();
  });
  if (!plan.output.empty()) stage(r, plan, "output", [&] { write_bundle(r, plan, plan.output); });
  return r;
}

ComparisonReport run_compare(const RunPlan& plan) {
  plan.validate();
  const auto input = load_plan_data(plan);
  const auto [structure, data] = plan_fixed_structure(plan, input.data);
  if (!structure.copula) throw StructuralError("compare: the structure needs a copula");
  const auto folds = make_cv_plan(data.size(), plan.cv_folds, derive_seed(plan.seed, kStreamFolds));
  return compare_models(structure, baseline_covariates(plan, data), data, plan.prior,
                        seeded(plan, kStreamCompare), folds, comparison_options(plan));
}

// Tables -------------------------------------------------------------------------

std::string sign_table(const PosteriorSamples& samples) {
  const auto& s = samples.structure;
  std::vector<std::string> cols;
  for (const auto& p : s.predictors) cols.push_back(slot_name(p.slot));
  std::size_t w = 9;
  for (const auto& c : s.covariate_names) w = std::max(w, c.size());
  std::ostringstream os;
  os << std::string(w, ' ');
  for (const auto& c : cols) os << "  " << c;
  os << '\n';
  for (std::size_t ci = 0; ci < s.covariate_names.size(); ++ci) {
    const auto& name = s.covariate_names[ci];
    os << name << std::string(w - name.size(), ' ');
    for (std::size_t k = 0; k < s.predictors.size(); ++k) {
      const auto& p = s.predictors[k];
      char mark = '.';
      if (std::find(p.covariates.begin(), p.covariates.end(), ci) != p.covariates.end()) {
        const std::string label = cols[k] + ":" + name;
        const auto [lo, hi] = credible_interval(samples, label, 0.95);
        const double mean = samples.posterior_mean()[samples.index_of(label)];
        mark = (lo > 0.0 || hi < 0.0) ? (mean > 0.0 ? '+' : '-') : 'o';
      }
      const std::size_t pad = cols[k].size() + 2;
      os << std::string(pad - 1, ' ') << mark;
    }
    os << '\n';
  }
  return os.str();
}

std::string coefficient_table(const PosteriorSamples& samples) {
  const auto mean = samples.posterior_mean();
  const auto sd = samples.posterior_sd();
  std::size_t w = 5;
  for (const auto& l : samples.labels) w = std::max(w, l.size());
  std::ostringstream os;
  os << "label" << std::string(w - 5, ' ') << "       mean         sd       2.5%      97.5%\n";
  for (std::size_t k = 0; k < samples.labels.size(); ++k) {
    const auto& l = samples.labels[k];
    const auto [lo, hi] = credible_interval(samples, l, 0.95);
    char buf[128];
    std::snprintf(buf, sizeof buf, " %10.4f %10.4f %10.4f %10.4f\n", mean[k], sd[k], lo, hi);
    os << l << std::string(w - l.size(), ' ') << buf;
  }
  return os.str();
}

std::string convergence_table(const std::vector<CoefficientDiagnostics>& rows) {
  std::size_t w = 5;
  for (const auto& r : rows) w = std::max(w, r.label.size());
  std::ostringstream os;
  os << "label" << std::string(w - 5, ' ') << "      psrf        ess\n";
  for (const auto& r : rows) {
    char buf[64];
    if (r.psrf)
      std::snprintf(buf, sizeof buf, " %9.4f %10.1f", *r.psrf, r.ess);
    else
      std::snprintf(buf, sizeof buf, " %9s %10.1f", "NA", r.ess);
    os << r.label << std::string(w - r.label.size(), ' ') << buf << (r.constant ? " constant" : "") << '\n';
  }
  return os.str();
}

std::string model_choice_table(const RunResult& r) {
  std::ostringstream os;
  os << "data: " << r.input.rows_read << " rows read, " << r.input.removed_missing << " removed (missing), "
     << r.input.removed_range << " removed (range), " << r.data.size() << " used\n";
  if (!r.marginals.empty()) {
    os << "\nmarginal candidates (cross-validated log-score, lower is better)\n";
    for (std::size_t k = 0; k < r.marginals.size(); ++k) {
      const auto& c = r.marginals[k];
      const bool won = (c.response == 1 ? r.winner1 : r.winner2) == std::optional<std::size_t>(k);
      os << "  " << marginal_name(c.response, c.family) << "  score "
         << (c.cv_score ? fixed(*c.cv_score, 4) : std::string("-")) << "  PIT KS p "
         << fixed(c.pit.uniformity.p_value, 4) << (won ? "  selected" : "") << '\n';
    }
  }
  if (!r.copulas.empty()) {
    os << "\ncopula candidates (lower is better)\n";
    for (std::size_t k = 0; k < r.copulas.size(); ++k) {
      const auto& c = r.copulas[k];
      os << "  " << choice_name(c.choice) << "  DIC " << fixed(c.criteria->dic, 2) << "  WAIC "
         << fixed(c.criteria->waic, 2) << (r.copula_winner == std::optional<std::size_t>(k) ? "  selected" : "")
         << '\n';
    }
  }
  if (r.model) os << "\nfinal model: " << r.model->structure.describe() << '\n';
  return os.str();
}

// Bundle -------------------------------------------------------------------------

json model_document(const ModelSpec& model, const Standardization& s1, const Standardization& s2) {
  return {{"format", "copreg-model"},
          {"version", kBundleVersion},
          {"model", to_json(model)},
          {"standardization1", to_json(s1)},
          {"standardization2", to_json(s2)}};
}

LoadedModel load_model_document(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw StructuralError("cannot open model " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw StructuralError(path.string() + ": " + e.what());
  }
  const auto ctx = path.string();
  if (json_get<std::string>(j, "format", ctx) != "copreg-model")
    throw StructuralError(ctx + ": not a copreg model document");
  if (json_get<int>(j, "version", ctx) != kBundleVersion)
    throw StructuralError(ctx + ": unsupported model version");
  return with_context(ctx, [&] {
    return LoadedModel{model_from_json(j.at("model")), standardization_from_json(j.at("standardization1")),
                       standardization_from_json(j.at("standardization2"))};
  });
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw StructuralError("cannot open " + path.string() + " for writing");
  out << text;
}

void write_json(const std::filesystem::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

json choice_json(const RunResult& r) {
  json j;
  j["command"] = r.command;
  j["data"] = {{"rows_read", r.input.rows_read},
               {"removed_missing", r.input.removed_missing},
               {"removed_range", r.input.removed_range},
               {"rows_used", r.data.size()}};
  j["marginals"] = json::array();
  for (std::size_t k = 0; k < r.marginals.size(); ++k) {
    const auto& c = r.marginals[k];
    j["marginals"].push_back({{"response", c.response},
                              {"family", std::string(to_string(c.family))},
                              {"standardization", to_json(c.standardization)},
                              {"structure", to_json(c.structure)},
                              {"dropped", c.dropped},
                              {"cv_score", c.cv_score ? json(*c.cv_score) : json(nullptr)},
                              {"pit_ks_p", c.pit.uniformity.p_value},
                              {"selected", (c.response == 1 ? r.winner1 : r.winner2) == std::optional(k)}});
  }
  j["copulas"] = json::array();
  for (std::size_t k = 0; k < r.copulas.size(); ++k) {
    const auto& c = r.copulas[k];
    json e{{"copula", choice_name(c.choice)},
           {"structure", to_json(c.structure)},
           {"dropped", c.dropped},
           {"selected", r.copula_winner == std::optional(k)}};
    if (c.criteria) e["dic"] = c.criteria->dic, e["waic"] = c.criteria->waic;
    j["copulas"].push_back(e);
  }
  j["dropped"] = r.dropped;
  return j;
}

void write_contents(const RunResult& r, const RunPlan& plan, const std::filesystem::path& dir, const json& status) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "tables");
  write_json(dir / "plan.json", to_json(plan));
  if (r.model && r.samples) {
    write_json(dir / "model.json", model_document(*r.model, r.data.standardization1, r.data.standardization2));
    write_posterior(*r.samples, dir / "posterior.csv", dir / "posterior.json");
    write_text(dir / "tables" / "signs.txt", sign_table(*r.samples));
    write_text(dir / "tables" / "coefficients.txt", coefficient_table(*r.samples));
  }
  if (!r.diagnostics.coefficients.empty())
    write_text(dir / "tables" / "psrf_ess.txt", convergence_table(r.diagnostics.coefficients));
  write_text(dir / "tables" / "model_choice.txt", model_choice_table(r));

  json diag = to_json(r.diagnostics);
  diag["model_choice"] = choice_json(r);
  if (r.comparison) diag["baseline_comparison"] = to_json(*r.comparison);
  write_json(dir / "diagnostics.json", diag);
  std::string text = to_text(r.diagnostics);
  if (r.comparison) text += "\n" + to_text(*r.comparison);
  write_text(dir / "diagnostics.txt", text);
  if (r.comparison) write_residuals(dir / "tables" / "baseline_residuals.csv", *r.comparison);

  if (plan.plot_data) {
    fs::create_directories(dir / "plotdata");
    write_plot_data(r.diagnostics, dir / "plotdata");
  }
  write_json(dir / "status.json", status);
}

void write_failure(const RunResult& r, const RunPlan& plan, const std::string& stage_name,
                   const std::string& message) {
  if (plan.output.empty()) return;
  json status{{"format", "copreg-bundle"},
              {"version", kBundleVersion},
              {"command", r.command},
              {"status", "failed"},
              {"failed_stage", stage_name},
              {"error", message},
              {"completed_stages", r.completed_stages}};
  try {
    write_contents(r, plan, plan.output, status);
  } catch (const std::exception&) {
    std::filesystem::create_directories(plan.output);
    write_json(plan.output / "status.json", status);
  }
}

}  // namespace

void write_bundle(const RunResult& r, const RunPlan& plan, const std::filesystem::path& dir) {
  auto stages = r.completed_stages;
  stages.push_back("output");
  json status{{"format", "copreg-bundle"},
              {"version", kBundleVersion},
              {"command", r.command},
              {"status", "complete"},
              {"completed_stages", stages}};
  write_contents(r, plan, dir, status);
}

DiagnosticsReport diagnose_bundle(const std::filesystem::path& dir) {
  const auto plan = load_run_plan(dir / "plan.json");
  const auto m = load_model_document(dir / "model.json");
  const auto samples = read_posterior(dir / "posterior.csv", dir / "posterior.json");
  const auto input = load_plan_data(plan);
  const Dataset data = restandardize(input.data, m.standardization1, m.standardization2);
  DiagnosticsReport rep;
  rep.coefficients = coefficient_diagnostics(samples);
  rep.criteria.push_back({"final", information_criteria(samples, data)});
  if (m.model.structure.margin1) rep.pit.push_back(make_pit_entry("final", m.model, data, 1));
  if (m.model.structure.margin2) rep.pit.push_back(make_pit_entry("final", m.model, data, 2));
  rep.subgroups = plan_subgroups(plan, data);
  rep.validate();
  return rep;
}

}  // namespace copreg
