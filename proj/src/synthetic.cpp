#include "copreg/synthetic.hpp"

#include <cmath>

#include "copreg/error.hpp"

namespace copreg {

void CovariateGenerator::validate() const {
  if (name.empty()) throw StructuralError("covariate generator needs a name");
  switch (kind) {
    case Kind::Binary:
      if (!(probability >= 0.0 && probability <= 1.0))
        throw StructuralError("covariate " + name + ": probability must lie in [0, 1]");
      break;
    case Kind::Normal:
      if (!std::isfinite(mean) || !(sd > 0.0) || !std::isfinite(sd))
        throw StructuralError("covariate " + name + ": sd must be positive");
      break;
    case Kind::Discrete: {
      double total = 0.0;
      for (const auto& b : bins) {
        if (b.hi < b.lo || !(b.probability >= 0.0 && b.probability <= 1.0))
          throw StructuralError("covariate " + name + ": invalid bin");
        total += b.probability;
      }
      if (bins.empty() || std::abs(total - 1.0) > 1e-9)
        throw StructuralError("covariate " + name + ": bin probabilities must sum to 1");
      break;
    }
  }
}

void SyntheticSpec::validate() const {
  if (n < 1) throw StructuralError("synthetic: n must be positive");
  std::vector<std::string> names;
  std::size_t normals = 0;
  for (const auto& c : covariates) {
    c.validate();
    names.push_back(c.name);
    normals += c.kind == CovariateGenerator::Kind::Normal ? 1 : 0;
  }
  model.validate();
  if (names != model.structure.covariate_names)
    throw StructuralError("synthetic: generator names must match the model's covariate names");
  if (normal_correlation) {
    const auto& r = *normal_correlation;
    if (r.rows() != static_cast<Eigen::Index>(normals) || r.cols() != r.rows())
      throw StructuralError("synthetic: correlation matrix must be square over the normal covariates");
    if (!r.isApprox(r.transpose()) || (r.diagonal().array() - 1.0).abs().maxCoeff() > 1e-12)
      throw StructuralError("synthetic: correlation matrix must be symmetric with unit diagonal");
    if (Eigen::LLT<Eigen::MatrixXd>(r).info() != Eigen::Success)
      throw StructuralError("synthetic: correlation matrix is not positive definite");
  }
  standardization1.validate();
  standardization2.validate();
}

Dataset generate_synthetic(const SyntheticSpec& spec, Rng& rng) {
  spec.validate();
  const auto n = static_cast<Eigen::Index>(spec.n);
  const auto m = static_cast<Eigen::Index>(spec.covariates.size());
  Dataset d;
  d.covariate_names = spec.model.structure.covariate_names;
  d.standardization1 = spec.standardization1;
  d.standardization2 = spec.standardization2;
  d.x.resize(n, m);
  d.y1.resize(spec.n);
  d.y2.resize(spec.n);

  Eigen::MatrixXd chol;
  if (spec.normal_correlation) chol = Eigen::LLT<Eigen::MatrixXd>(*spec.normal_correlation).matrixL();

  std::vector<double> z;
  for (Eigen::Index i = 0; i < n; ++i) {
    z.clear();
    for (const auto& c : spec.covariates)
      if (c.kind == CovariateGenerator::Kind::Normal) z.push_back(standard_normal(rng));
    if (spec.normal_correlation) {
      const Eigen::VectorXd zc = chol * Eigen::Map<Eigen::VectorXd>(z.data(), static_cast<Eigen::Index>(z.size()));
      z.assign(zc.data(), zc.data() + zc.size());
    }
    std::size_t zi = 0;
    for (Eigen::Index j = 0; j < m; ++j) {
      const auto& c = spec.covariates[static_cast<std::size_t>(j)];
      double x = 0.0;
      switch (c.kind) {
        case CovariateGenerator::Kind::Binary: x = uniform01(rng) < c.probability ? 1.0 : 0.0; break;
        case CovariateGenerator::Kind::Normal: x = c.mean + c.sd * z[zi++]; break;
        case CovariateGenerator::Kind::Discrete: {
          const double w = uniform01(rng);
          double acc = 0.0;
          const DiscreteBin* bin = &c.bins.back();
          for (const auto& b : c.bins) {
            acc += b.probability;
            if (w < acc) {
              bin = &b;
              break;
            }
          }
          x = bin->lo + static_cast<double>(uniform_index(rng, static_cast<std::uint64_t>(bin->hi - bin->lo + 1)));
          break;
        }
      }
      d.x(i, j) = x;
    }

    const Eigen::RowVectorXd row = d.x.row(i);
    const auto p = observation_params(spec.model, std::span<const double>(row.data(), static_cast<std::size_t>(m)));
    UnitPair uv{uniform01(rng), uniform01(rng)};
    if (p.copula) uv = sample_copula(*p.copula, 1, rng).front();
    const auto k = static_cast<std::size_t>(i);
    if (p.margin1) d.y1[k] = quantile(uv.u, *p.margin1);
    if (p.margin2) d.y2[k] = quantile(uv.v, *p.margin2);
  }
  d.validate();
  return d;
}

std::vector<CovariateGenerator> perinatal_covariates() {
  using K = CovariateGenerator::Kind;
  auto binary = [](std::string name, double p) {
    CovariateGenerator g;
    g.name = std::move(name);
    g.kind = K::Binary;
    g.probability = p;
    return g;
  };
  auto normal = [](std::string name, double mean, double sd) {
    CovariateGenerator g;
    g.name = std::move(name);
    g.kind = K::Normal;
    g.mean = mean;
    g.sd = sd;
    return g;
  };
  auto discrete = [](std::string name, std::vector<DiscreteBin> bins) {
    CovariateGenerator g;
    g.name = std::move(name);
    g.kind = K::Discrete;
    g.bins = std::move(bins);
    return g;
  };
  return {binary("sex", 0.47),
          discrete("prev", {{0, 0, 0.38}, {1, 1, 0.32}, {2, 2, 0.16}, {3, 6, 0.14}}),
          binary("sectio", 0.24),
          binary("induction", 0.26),
          normal("age", 29.4, 5.5),
          normal("height", 167.0, 6.7),
          normal("bmi", 25.2, 5.3),
          normal("gain", 10.4, 5.7),
          discrete("smoking", {{0, 0, 0.87}, {1, 10, 0.08}, {11, 30, 0.05}}),
          binary("single", 0.07),
          binary("employed", 0.42)};
}

SyntheticSpec perinatal_preset(std::size_t n) {
  SyntheticSpec spec;
  spec.n = n;
  spec.covariates = perinatal_covariates();
  std::vector<std::string> names;
  for (const auto& c : spec.covariates) names.push_back(c.name);
  const auto s = make_structure(
      MarginalFamily::Gaussian, MarginalFamily::Dagum, CopulaChoice{CopulaFamily::Clayton, Rotation::R0}, names,
      {{"y1.mu", {"sex", "prev", "sectio", "induction", "height", "bmi", "gain", "smoking", "single"}},
       {"y1.sigma2", {"sex", "sectio", "bmi", "smoking"}},
       {"y2.p", {"sectio", "induction", "employed"}},
       {"y2.a", {"sectio", "induction", "gain", "smoking"}},
       {"y2.b", {"prev", "sectio", "induction"}},
       {"copula.rho", {"sectio"}}});
  spec.model.structure = s;
  spec.model.coefficients = {
      {-6.07, -0.2896, 0.0484, -0.2907, 0.0870, 0.0290, 0.0368, 0.0249, -0.0416, -0.05},
      {-0.44, -0.10, 0.25, 0.01, 0.01},
      {0.0, -0.30, 0.30, 0.05},
      {1.85, -0.15, -0.10, 0.01, -0.005},
      {std::log(3.1), 0.02, 0.08, -0.05},
      {std::log(0.14), std::log(0.40 / 0.14)},
  };
  spec.standardization1 = Standardization::birth_weight_gaussian();
  spec.standardization2 = Standardization::gestational_age_dagum();
  spec.validate();
  return spec;
}

namespace {

std::string_view kind_name(CovariateGenerator::Kind k) {
  switch (k) {
    case CovariateGenerator::Kind::Binary: return "binary";
    case CovariateGenerator::Kind::Normal: return "normal";
    case CovariateGenerator::Kind::Discrete: return "discrete";
  }
  return "?";
}

}  // namespace

nlohmann::json to_json(const SyntheticSpec& spec) {
  nlohmann::json j;
  j["n"] = spec.n;
  auto covs = nlohmann::json::array();
  for (const auto& c : spec.covariates) {
    nlohmann::json g{{"name", c.name}, {"kind", std::string(kind_name(c.kind))}};
    if (c.kind == CovariateGenerator::Kind::Binary) g["probability"] = c.probability;
    if (c.kind == CovariateGenerator::Kind::Normal) {
      g["mean"] = c.mean;
      g["sd"] = c.sd;
    }
    if (c.kind == CovariateGenerator::Kind::Discrete) {
      auto bins = nlohmann::json::array();
      for (const auto& b : c.bins) bins.push_back({{"lo", b.lo}, {"hi", b.hi}, {"probability", b.probability}});
      g["bins"] = bins;
    }
    covs.push_back(g);
  }
  j["covariates"] = covs;
  if (spec.normal_correlation) {
    const auto& r = *spec.normal_correlation;
    auto rows = nlohmann::json::array();
    for (Eigen::Index i = 0; i < r.rows(); ++i) {
      std::vector<double> row(static_cast<std::size_t>(r.cols()));
      for (Eigen::Index k = 0; k < r.cols(); ++k) row[static_cast<std::size_t>(k)] = r(i, k);
      rows.push_back(row);
    }
    j["normal_correlation"] = rows;
  }
  j["model"] = to_json(spec.model);
  j["standardization1"] = to_json(spec.standardization1);
  j["standardization2"] = to_json(spec.standardization2);
  return j;
}

SyntheticSpec synthetic_from_json(const nlohmann::json& j) {
  SyntheticSpec spec;
  try {
    spec.n = j.at("n").get<std::size_t>();
    for (const auto& g : j.at("covariates")) {
      CovariateGenerator c;
      c.name = g.at("name").get<std::string>();
      const auto kind = g.at("kind").get<std::string>();
      if (kind == "binary") {
        c.kind = CovariateGenerator::Kind::Binary;
        c.probability = g.at("probability").get<double>();
      } else if (kind == "normal") {
        c.kind = CovariateGenerator::Kind::Normal;
        c.mean = g.at("mean").get<double>();
        c.sd = g.at("sd").get<double>();
      } else if (kind == "discrete") {
        c.kind = CovariateGenerator::Kind::Discrete;
        for (const auto& b : g.at("bins"))
          c.bins.push_back({b.at("lo").get<int>(), b.at("hi").get<int>(), b.at("probability").get<double>()});
      } else {
        throw StructuralError("synthetic: unknown covariate kind '" + kind + "'");
      }
      spec.covariates.push_back(std::move(c));
    }
    if (j.contains("normal_correlation")) {
      const auto rows = j.at("normal_correlation").get<std::vector<std::vector<double>>>();
      Eigen::MatrixXd r(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.size()));
      for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != rows.size()) throw StructuralError("synthetic: correlation matrix must be square");
        for (std::size_t k = 0; k < rows.size(); ++k)
          r(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = rows[i][k];
      }
      spec.normal_correlation = r;
    }
    spec.model = model_from_json(j.at("model"));
    spec.standardization1 = standardization_from_json(j.at("standardization1"));
    spec.standardization2 = standardization_from_json(j.at("standardization2"));
  } catch (const nlohmann::json::exception& e) {
    throw StructuralError(std::string("synthetic spec: ") + e.what());
  }
  spec.validate();
  return spec;
}

}  // namespace copreg
