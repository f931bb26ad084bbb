#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "copreg/error.hpp"
#include "copreg/ingest.hpp"
#include "copreg/pipeline.hpp"

using namespace copreg;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("copreg_test_pipeline_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

fs::path write_file(const fs::path& path, const std::string& text) {
  std::ofstream(path, std::ios::binary) << text;
  return path;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

nlohmann::json small_plan_json(std::uint64_t seed = 11) {
  return {{"seed", seed},
          {"data", {{"preset", "perinatal"}, {"n", 400}}},
          {"candidates", {{"margin1", {"gaussian"}}, {"margin2", {"gaussian", "dagum"}}, {"copulas", {"clayton", "gumbel"}}}},
          {"eligible", {{"y1.mu", {"sectio", "sex"}}, {"copula.rho", {"sectio"}}}},
          {"standardizations", "perinatal"},
          {"mcmc", {{"n_chains", 2}, {"n_iterations", 1200}, {"burn_in", 300}, {"target_kept", 200}}},
          {"max_sweeps", 2},
          {"cv_folds", 3}};
}

}  // namespace

TEST_CASE("ingest removes incomplete rows") {
  const auto dir = scratch("ingest");
  const auto csv = write_file(dir / "d.csv",
                              "bw,ga,sex,unused\n"
                              "3390,277,1,x\n"
                              "3100,NA,0,x\n"
                              "2900,270,0,\n"
                              "3600,285,1,x\n");
  CsvSchema schema;
  schema.response1 = "bw";
  schema.response2 = "ga";
  schema.covariates = {"sex"};
  const auto r = ingest_csv(csv, schema);
  CHECK(r.rows_read == 4);
  CHECK(r.removed_missing == 1);
  CHECK(r.removed_range == 0);
  REQUIRE(r.data.size() == 3);
  CHECK(r.data.y1[1] == 2900.0);
  CHECK(r.data.x(2, 0) == 1.0);
}

TEST_CASE("ingest applies the response standardizations") {
  const auto dir = scratch("standardize");
  const auto csv = write_file(dir / "d.csv", "y1,y2\n3390,277\n");
  CsvSchema schema;
  schema.standardization1 = Standardization::birth_weight_gaussian();
  schema.standardization2 = Standardization::gestational_age_gaussian();
  const auto r = ingest_csv(csv, schema);
  CHECK(std::abs(r.data.y1[0] + 0.22) < 1e-12);
  CHECK(std::abs(r.data.y2[0] + 3.0 / 14.0) < 1e-12);
  CHECK(std::abs(r.data.y2[0] + 0.2143) < 5e-5);

  schema.standardization2 = Standardization::gestational_age_dagum();
  const auto d = ingest_csv(csv, schema);
  CHECK(std::abs(d.data.y2[0] - 45.0 / 14.0) < 1e-12);
  CHECK(std::abs(d.data.y2[0] - 3.2143) < 5e-5);
  CHECK(std::abs(raw_response(d.data, 2)[0] - 277.0) < 1e-12);
}

TEST_CASE("ingest reports schema and parse errors") {
  const auto dir = scratch("errors");
  CsvSchema schema;
  schema.covariates = {"sex", "age"};
  const auto missing = write_file(dir / "m.csv", "y1,y2,sex\n1,2,0\n");
  try {
    ingest_csv(missing, schema);
    FAIL("expected a schema error");
  } catch (const StructuralError& e) {
    CHECK(std::string(e.what()).find("age") != std::string::npos);
  }
  const auto bad = write_file(dir / "b.csv", "y1,y2,sex,age\n1,2,0,30\n1,2,zero,31\n");
  try {
    ingest_csv(bad, schema);
    FAIL("expected a parse error");
  } catch (const StructuralError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("line 3") != std::string::npos);
    CHECK(msg.find("sex") != std::string::npos);
  }
  const auto ragged = write_file(dir / "r.csv", "y1,y2,sex,age\n1,2,0\n");
  CHECK_THROWS_AS(ingest_csv(ragged, schema), StructuralError);
  CHECK_THROWS_AS(ingest_csv(dir / "absent.csv", schema), StructuralError);
}

TEST_CASE("ingest range filters and quoted fields") {
  const auto dir = scratch("ranges");
  const auto csv = write_file(dir / "d.csv",
                              "\"y1\",y2,\"note, text\"\n"
                              "3000,280,\"a, b\"\n"
                              "3000,170,c\n"
                              "3000,330,c\n"
                              "3000,300,c\n");
  CsvSchema schema;
  schema.ranges = {{"y2", 175.0, 322.0}};
  const auto r = ingest_csv(csv, schema);
  CHECK(r.data.size() == 2);
  CHECK(r.removed_range == 2);
  schema.ranges = {{"other", 0.0, 1.0}};
  CHECK_THROWS_AS(ingest_csv(csv, schema), StructuralError);
}

TEST_CASE("dataset csv round trip") {
  const auto dir = scratch("roundtrip");
  auto spec = perinatal_preset(50);
  Rng rng = make_rng(3);
  const auto data = generate_synthetic(spec, rng);
  write_dataset_csv(dir / "d.csv", data);
  CsvSchema schema;
  schema.covariates = data.covariate_names;
  schema.standardization1 = data.standardization1;
  schema.standardization2 = data.standardization2;
  const auto back = ingest_csv(dir / "d.csv", schema);
  REQUIRE(back.data.size() == data.size());
  CHECK(back.data.x == data.x);
  for (std::size_t i = 0; i < data.size(); ++i) {
    CHECK(std::abs(back.data.y1[i] - data.y1[i]) < 1e-12);
    CHECK(std::abs(back.data.y2[i] - data.y2[i]) < 1e-12);
  }
  CHECK(to_json(csv_schema_from_json(to_json(schema))) == to_json(schema));
}

TEST_CASE("copula choice names") {
  CHECK(copula_choice_from_string("clayton") == CopulaChoice{CopulaFamily::Clayton, Rotation::R0});
  CHECK(copula_choice_from_string("gumbel@90") == CopulaChoice{CopulaFamily::Gumbel, Rotation::R90});
  CHECK(copula_choice_from_string("clayton@270") == CopulaChoice{CopulaFamily::Clayton, Rotation::R270});
  CHECK_THROWS(copula_choice_from_string("gumbel@45"));
  CHECK_THROWS(copula_choice_from_string("gumbel@x"));
  CHECK_THROWS(copula_choice_from_string("gaussian@90"));
  CHECK_THROWS(copula_choice_from_string("frank"));
}

TEST_CASE("run plan parsing") {
  const auto j = small_plan_json();
  const auto plan = run_plan_from_json(j);
  CHECK(plan.seed == 11);
  CHECK(plan.margin2.size() == 2);
  CHECK(plan.copulas.size() == 2);
  CHECK(plan.data.synthetic->n == 400);
  CHECK(plan.standardizations.at({2, MarginalFamily::Dagum}) == Standardization::gestational_age_dagum());
  CHECK(plan.mcmc.n_chains == 2);

  const auto again = run_plan_from_json(to_json(plan));
  CHECK(to_json(again) == to_json(plan));

  auto no_seed = j;
  no_seed.erase("seed");
  try {
    run_plan_from_json(no_seed);
    FAIL("expected a missing seed error");
  } catch (const StructuralError& e) {
    CHECK(std::string(e.what()).find("seed") != std::string::npos);
  }
  CHECK_NOTHROW(run_plan_from_json(no_seed, {}, false));

  auto empty = j;
  empty["candidates"]["copulas"] = nlohmann::json::array();
  CHECK_THROWS_AS(run_plan_from_json(empty), StructuralError);
  auto bad_slot = j;
  bad_slot["eligible"]["y1.nu"] = {"sex"};
  CHECK_THROWS_AS(run_plan_from_json(bad_slot), StructuralError);
  auto csv = j;
  csv["data"] = {{"csv", "d.csv"}};
  CHECK(run_plan_from_json(csv, "/data").data.csv == fs::path("/data/d.csv"));
}

TEST_CASE("plan structures follow the eligible map") {
  auto j = small_plan_json();
  j["eligible"]["y2.*"] = {"age"};
  const auto plan = run_plan_from_json(j);
  auto spec = perinatal_preset(20);
  Rng rng = make_rng(1);
  const auto data = generate_synthetic(spec, rng);
  const auto s = plan_structure(plan, data, MarginalFamily::Gaussian, MarginalFamily::Dagum,
                                CopulaChoice{CopulaFamily::Clayton, Rotation::R0});
  const auto labels = s.coefficient_labels();
  const std::vector<std::string> expected{"y1.mu:(Intercept)", "y1.mu:sex",      "y1.mu:sectio",
                                          "y1.sigma2:(Intercept)", "y2.p:(Intercept)", "y2.p:age",
                                          "y2.a:(Intercept)",  "y2.a:age",       "y2.b:(Intercept)",
                                          "y2.b:age",          "copula.rho:(Intercept)", "copula.rho:sectio"};
  CHECK(labels == expected);

  const auto [fixed, restd] = plan_fixed_structure(plan, data);
  CHECK(fixed.margin2 == MarginalFamily::Gaussian);
  CHECK(restd.standardization2 == Standardization::gestational_age_gaussian());
}

TEST_CASE("sign table marks sign and interval") {
  const auto s = make_structure(MarginalFamily::Gaussian, std::nullopt, std::nullopt, {"a", "b", "c"},
                                {{"y1.mu", {"a", "b"}}, {"y1.sigma2", {"c"}}});
  PosteriorSamples p;
  p.structure = s;
  p.labels = s.coefficient_labels();
  Eigen::MatrixXd draws(200, 5);
  for (int r = 0; r < 200; ++r) {
    const double t = (r - 99.5) / 100.0;
    draws.row(r) << 0.1 * t, -2.0 + 0.1 * t, 0.3 + t, 0.0, 1.0 + 0.2 * t;
  }
  p.chains = {draws};
  const auto table = sign_table(p);
  std::istringstream in(table);
  std::string header, a, b, c;
  std::getline(in, header);
  std::getline(in, a);
  std::getline(in, b);
  std::getline(in, c);
  CHECK(a.back() == '.');
  CHECK(a.find('-') != std::string::npos);
  CHECK(b.find('o') != std::string::npos);
  CHECK(c.find('+') != std::string::npos);
  CHECK(c.substr(0, c.find('+')).find_first_not_of("c .") == std::string::npos);
}

TEST_CASE("model document round trip") {
  const auto dir = scratch("model");
  const auto s = make_structure(MarginalFamily::Gaussian, MarginalFamily::Dagum,
                                CopulaChoice{CopulaFamily::Gumbel, Rotation::R90}, {"x"}, {{"copula.rho", {"x"}}});
  std::vector<double> beta(s.coefficient_count());
  for (std::size_t k = 0; k < beta.size(); ++k) beta[k] = 0.1 * static_cast<double>(k) - 0.3;
  const auto m = with_coefficients(s, beta);
  std::ofstream(dir / "model.json") << model_document(m, Standardization::birth_weight_gaussian(),
                                                      Standardization::gestational_age_dagum())
                                           .dump(2);
  const auto back = load_model_document(dir / "model.json");
  CHECK(back.model.flat_coefficients() == beta);
  CHECK(back.standardization2 == Standardization::gestational_age_dagum());
  write_file(dir / "other.json", R"({"format": "something", "version": 1})");
  CHECK_THROWS_AS(load_model_document(dir / "other.json"), StructuralError);
}

TEST_CASE("single-candidate plan is a plain fit") {
  auto j = small_plan_json();
  j["candidates"] = {{"margin1", {"gaussian"}}, {"margin2", {"dagum"}}, {"copulas", {"clayton"}}};
  j["selection"] = false;
  const auto plan = run_plan_from_json(j);
  const auto r = run_model_choice(plan);
  CHECK(r.diagnostics.log_scores.empty());
  CHECK(r.marginals.size() == 2);
  CHECK(r.copulas.size() == 1);
  REQUIRE(r.samples);
  const auto input = load_plan_data(plan);
  const auto [expected, data] = plan_fixed_structure(plan, input.data);
  CHECK(to_json(r.samples->structure) == to_json(expected));
  CHECK(r.data.y2 == data.y2);
  CHECK(r.completed_stages == std::vector<std::string>{"data", "marginals", "copulas", "final"});
}

TEST_CASE("model choice is deterministic and writes the bundle") {
  const auto dir = scratch("choose");
  auto j = small_plan_json(23);
  j["subgroups"] = {{"covariates", {"sectio"}}, {"resamples", 100}};
  j["plot_data"] = true;
  auto plan = run_plan_from_json(j);
  plan.output = dir / "a";
  const auto a = run_model_choice(plan);
  plan.output = dir / "b";
  plan.parallel_candidates = false;
  const auto b = run_model_choice(plan);

  CHECK(read_file(dir / "a" / "model.json") == read_file(dir / "b" / "model.json"));
  CHECK(read_file(dir / "a" / "posterior.csv") == read_file(dir / "b" / "posterior.csv"));
  CHECK(read_file(dir / "a" / "diagnostics.json") == read_file(dir / "b" / "diagnostics.json"));
  for (const char* f : {"tables/signs.txt", "tables/coefficients.txt", "tables/psrf_ess.txt",
                        "tables/model_choice.txt", "status.json", "plan.json", "posterior.json",
                        "plotdata/subgroups_sectio.csv"})
    CHECK_MESSAGE(fs::exists(dir / "a" / f), f);

  REQUIRE(a.winner2);
  CHECK(a.marginals[*a.winner2].family == MarginalFamily::Dagum);
  CHECK(a.diagnostics.log_scores.size() == 2);
  CHECK(a.diagnostics.criteria.size() == 2);
  const auto status = nlohmann::json::parse(read_file(dir / "a" / "status.json"));
  CHECK(status.at("status") == "complete");

  const auto loaded = load_model_document(dir / "a" / "model.json");
  CHECK(loaded.model.flat_coefficients() == a.model->flat_coefficients());
  const auto rediag = diagnose_bundle(dir / "a");
  CHECK(rediag.coefficients.size() == a.diagnostics.coefficients.size());
  CHECK(rediag.criteria.front().criteria.dic == doctest::Approx(a.diagnostics.criteria[*a.copula_winner].criteria.dic));
}

TEST_CASE("a failing stage is named and keeps partial output") {
  const auto dir = scratch("failure");
  auto j = small_plan_json();
  j["candidates"]["margin2"] = {"dagum"};
  j["standardizations"] = {{"y2", {{"dagum", {{"offset", 300.0}, {"scale", 14.0}}}}}};
  auto plan = run_plan_from_json(j);
  plan.output = dir;
  try {
    run_model_choice(plan);
    FAIL("expected a failure");
  } catch (const DomainError& e) {
    CHECK(std::string(e.what()).rfind("stage marginals: ", 0) == 0);
  }
  const auto status = nlohmann::json::parse(read_file(dir / "status.json"));
  CHECK(status.at("status") == "failed");
  CHECK(status.at("failed_stage") == "marginals");
  CHECK(status.at("completed_stages") == nlohmann::json{"data"});
  CHECK(fs::exists(dir / "plan.json"));
  CHECK_FALSE(fs::exists(dir / "model.json"));
}
