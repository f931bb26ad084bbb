#include "copreg/model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "copreg/error.hpp"

namespace copreg {

// Standardization -------------------------------------------------------------

double Standardization::forward(double raw) const {
  return ((inverted ? -raw : raw) - offset) / scale;
}

double Standardization::inverse(double standardized) const {
  const double v = standardized * scale + offset;
  return inverted ? -v : v;
}

void Standardization::validate() const {
  if (scale == 0.0 || !std::isfinite(scale) || !std::isfinite(offset))
    throw StructuralError("standardization: scale must be finite and non-zero");
}

Standardization default_standardization(int response, MarginalFamily family) {
  if (response == 1)
    return family == MarginalFamily::Gaussian ? Standardization::birth_weight_gaussian()
                                              : Standardization::birth_weight_dagum();
  if (response == 2)
    return family == MarginalFamily::Gaussian ? Standardization::gestational_age_gaussian()
                                              : Standardization::gestational_age_dagum();
  throw StructuralError("response index must be 1 or 2");
}

// Dataset ---------------------------------------------------------------------

std::size_t Dataset::covariate_index(std::string_view name) const {
  const auto it = std::find(covariate_names.begin(), covariate_names.end(), name);
  if (it == covariate_names.end()) throw StructuralError("unknown covariate '" + std::string(name) + "'");
  return static_cast<std::size_t>(it - covariate_names.begin());
}

void Dataset::validate() const {
  if (y1.empty()) throw StructuralError("dataset is empty");
  if (y2.size() != y1.size()) throw StructuralError("dataset: response lengths differ");
  if (static_cast<std::size_t>(x.rows()) != y1.size() && !(x.rows() == 0 && covariate_names.empty()))
    throw StructuralError("dataset: covariate matrix row count does not match responses");
  if (static_cast<std::size_t>(x.cols()) != covariate_names.size())
    throw StructuralError("dataset: covariate column count does not match names");
  for (std::size_t i = 0; i < y1.size(); ++i)
    if (!std::isfinite(y1[i]) || !std::isfinite(y2[i]))
      throw StructuralError("dataset: non-finite response in row " + std::to_string(i));
  if (!x.allFinite()) throw StructuralError("dataset: non-finite covariate value");
  standardization1.validate();
  standardization2.validate();
}

Dataset subset(const Dataset& data, std::span<const std::size_t> rows) {
  Dataset out;
  out.covariate_names = data.covariate_names;
  out.standardization1 = data.standardization1;
  out.standardization2 = data.standardization2;
  out.y1.reserve(rows.size());
  out.y2.reserve(rows.size());
  out.x.resize(static_cast<Eigen::Index>(rows.size()), data.x.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const std::size_t r = rows[k];
    if (r >= data.size()) throw StructuralError("subset: row index out of range");
    out.y1.push_back(data.y1[r]);
    out.y2.push_back(data.y2[r]);
    out.x.row(static_cast<Eigen::Index>(k)) = data.x.row(static_cast<Eigen::Index>(r));
  }
  return out;
}

Dataset restandardize(const Dataset& data, const Standardization& s1, const Standardization& s2) {
  s1.validate();
  s2.validate();
  Dataset out = data;
  for (std::size_t i = 0; i < data.size(); ++i) {
    out.y1[i] = s1.forward(data.standardization1.inverse(data.y1[i]));
    out.y2[i] = s2.forward(data.standardization2.inverse(data.y2[i]));
  }
  out.standardization1 = s1;
  out.standardization2 = s2;
  return out;
}

std::vector<double> raw_response(const Dataset& data, int response) {
  const auto& y = response == 1 ? data.y1 : data.y2;
  const auto& s = response == 1 ? data.standardization1 : data.standardization2;
  std::vector<double> out(y.size());
  std::transform(y.begin(), y.end(), out.begin(), [&](double v) { return s.inverse(v); });
  return out;
}

// Parameters and links --------------------------------------------------------

std::string_view to_string(Parameter p) {
  switch (p) {
    case Parameter::Mu: return "mu";
    case Parameter::Sigma2: return "sigma2";
    case Parameter::P: return "p";
    case Parameter::A: return "a";
    case Parameter::B: return "b";
    case Parameter::Rho: return "rho";
  }
  return "?";
}

Parameter parameter_from_string(std::string_view name) {
  for (Parameter p : {Parameter::Mu, Parameter::Sigma2, Parameter::P, Parameter::A, Parameter::B,
                      Parameter::Rho})
    if (to_string(p) == name) return p;
  throw StructuralError("unknown parameter '" + std::string(name) + "'");
}

std::string_view to_string(Link link) {
  switch (link) {
    case Link::Identity: return "identity";
    case Link::Log: return "log";
    case Link::GaussianRho: return "rho/sqrt(1-rho^2)";
    case Link::LogShifted: return "log(rho-1)";
  }
  return "?";
}

namespace {

Link link_from_string(std::string_view name) {
  for (Link l : {Link::Identity, Link::Log, Link::GaussianRho, Link::LogShifted})
    if (to_string(l) == name) return l;
  throw StructuralError("unknown link '" + std::string(name) + "'");
}

constexpr double kEtaClamp = 700.0;

}  // namespace

std::string link_label(Parameter p, Link link) {
  switch (link) {
    case Link::Identity: return std::string(to_string(p));
    case Link::Log: return "ln " + std::string(to_string(p));
    case Link::GaussianRho: return "rho/sqrt(1-rho^2)";
    case Link::LogShifted: return "ln(rho-1)";
  }
  return "?";
}

std::string slot_name(ParameterSlot slot) {
  if (slot.response == 0) return "copula." + std::string(to_string(slot.parameter));
  return "y" + std::to_string(slot.response) + "." + std::string(to_string(slot.parameter));
}

ParameterSlot slot_from_string(std::string_view name) {
  const auto dot = name.find('.');
  if (dot == std::string_view::npos) throw StructuralError("bad parameter slot '" + std::string(name) + "'");
  const auto head = name.substr(0, dot);
  const Parameter p = parameter_from_string(name.substr(dot + 1));
  if (head == "copula") {
    if (p != Parameter::Rho) throw StructuralError("copula slot must be 'copula.rho'");
    return {0, p};
  }
  if (head == "y1") return {1, p};
  if (head == "y2") return {2, p};
  throw StructuralError("bad parameter slot '" + std::string(name) + "'");
}

std::vector<Parameter> family_parameters(MarginalFamily family) {
  if (family == MarginalFamily::Gaussian) return {Parameter::Mu, Parameter::Sigma2};
  return {Parameter::P, Parameter::A, Parameter::B};
}

Link default_link(Parameter p, std::optional<CopulaFamily> copula) {
  switch (p) {
    case Parameter::Mu: return Link::Identity;
    case Parameter::Sigma2:
    case Parameter::P:
    case Parameter::A:
    case Parameter::B: return Link::Log;
    case Parameter::Rho:
      if (!copula) throw StructuralError("rho link requires a copula family");
      switch (*copula) {
        case CopulaFamily::Gaussian: return Link::GaussianRho;
        case CopulaFamily::Clayton: return Link::Log;
        case CopulaFamily::Gumbel: return Link::LogShifted;
      }
  }
  return Link::Identity;
}

double apply_link_inverse(Link link, double eta) {
  if (std::isnan(eta)) throw DomainError("link inverse: eta is NaN");
  eta = std::clamp(eta, -kEtaClamp, kEtaClamp);
  switch (link) {
    case Link::Identity: return eta;
    case Link::Log: return std::exp(eta);
    case Link::GaussianRho: return eta / std::sqrt(1.0 + eta * eta);
    case Link::LogShifted: return std::exp(eta) + 1.0;
  }
  return eta;
}

double apply_link_inverse(Parameter parameter, std::optional<CopulaFamily> copula, double eta) {
  return apply_link_inverse(default_link(parameter, copula), eta);
}

double apply_link(Link link, double theta) {
  switch (link) {
    case Link::Identity: return theta;
    case Link::Log:
      if (!(theta > 0.0)) throw DomainError("log link: parameter must be positive");
      return std::log(theta);
    case Link::GaussianRho:
      if (!(std::abs(theta) < 1.0)) throw DomainError("gaussian rho link: |rho| must be < 1");
      return theta / std::sqrt(1.0 - theta * theta);
    case Link::LogShifted:
      if (!(theta > 1.0)) throw DomainError("gumbel rho link: rho must exceed 1");
      return std::log(theta - 1.0);
  }
  return theta;
}

double eval_predictor(const PredictorSpec& spec, std::span<const double> beta,
                      std::span<const double> x_row) {
  if (beta.size() != spec.coefficient_count())
    throw StructuralError("predictor " + slot_name(spec.slot) + ": expected " +
                          std::to_string(spec.coefficient_count()) + " coefficients, got " +
                          std::to_string(beta.size()));
  double eta = beta[0];
  for (std::size_t j = 0; j < spec.covariates.size(); ++j) {
    const std::size_t c = spec.covariates[j];
    if (c >= x_row.size())
      throw StructuralError("predictor " + slot_name(spec.slot) + ": covariate index out of range");
    eta += beta[j + 1] * x_row[c];
  }
  return eta;
}

// Structure -------------------------------------------------------------------

namespace {

std::vector<ParameterSlot> expected_slots(const ModelStructure& s) {
  std::vector<ParameterSlot> slots;
  if (s.margin1)
    for (Parameter p : family_parameters(*s.margin1)) slots.push_back({1, p});
  if (s.margin2)
    for (Parameter p : family_parameters(*s.margin2)) slots.push_back({2, p});
  if (s.copula) slots.push_back({0, Parameter::Rho});
  return slots;
}

std::optional<CopulaFamily> copula_family(const ModelStructure& s) {
  if (s.copula) return s.copula->family;
  return std::nullopt;
}

}  // namespace

void ModelStructure::validate() const {
  if (!margin1 && !margin2) throw StructuralError("model needs at least one margin");
  if (copula && !(margin1 && margin2)) throw StructuralError("a copula needs both margins");
  if (copula && copula->family == CopulaFamily::Gaussian && copula->rotation != Rotation::R0)
    throw StructuralError("gaussian copula does not take rotations");
  const auto slots = expected_slots(*this);
  if (predictors.size() != slots.size())
    throw StructuralError("model has " + std::to_string(predictors.size()) + " predictors, expected " +
                          std::to_string(slots.size()));
  for (std::size_t k = 0; k < slots.size(); ++k) {
    const auto& pr = predictors[k];
    if (!(pr.slot == slots[k]))
      throw StructuralError("predictor " + std::to_string(k) + " is " + slot_name(pr.slot) +
                            ", expected " + slot_name(slots[k]));
    if (pr.link != default_link(pr.slot.parameter, copula_family(*this)))
      throw StructuralError("predictor " + slot_name(pr.slot) + ": link does not match the parameter range");
    for (std::size_t c : pr.covariates)
      if (c >= covariate_names.size())
        throw StructuralError("predictor " + slot_name(pr.slot) + ": covariate index out of range");
  }
}

std::size_t ModelStructure::coefficient_count() const {
  std::size_t k = 0;
  for (const auto& p : predictors) k += p.coefficient_count();
  return k;
}

std::size_t ModelStructure::predictor_index(ParameterSlot slot) const {
  for (std::size_t k = 0; k < predictors.size(); ++k)
    if (predictors[k].slot == slot) return k;
  throw StructuralError("model has no predictor " + slot_name(slot));
}

std::vector<std::string> ModelStructure::coefficient_labels() const {
  std::vector<std::string> labels;
  for (const auto& p : predictors) {
    const std::string base = slot_name(p.slot);
    labels.push_back(base + ":(Intercept)");
    for (std::size_t c : p.covariates) labels.push_back(base + ":" + covariate_names.at(c));
  }
  return labels;
}

std::string ModelStructure::describe() const {
  std::ostringstream os;
  os << "y1~" << (margin1 ? to_string(*margin1) : "none") << " y2~"
     << (margin2 ? to_string(*margin2) : "none");
  if (copula) os << " copula=" << copula_name(copula->family, copula->rotation);
  return os.str();
}

ModelStructure make_structure(std::optional<MarginalFamily> margin1,
                              std::optional<MarginalFamily> margin2,
                              std::optional<CopulaChoice> copula,
                              std::vector<std::string> covariate_names,
                              const std::vector<std::pair<std::string, std::vector<std::string>>>&
                                  covariates) {
  ModelStructure s;
  s.margin1 = margin1;
  s.margin2 = margin2;
  s.copula = copula;
  s.covariate_names = std::move(covariate_names);
  const auto cf = copula_family(s);
  for (ParameterSlot slot : expected_slots(s)) s.predictors.push_back({slot, {}, default_link(slot.parameter, cf)});
  for (const auto& [name, covs] : covariates) {
    auto& pr = s.predictors.at(s.predictor_index(slot_from_string(name)));
    for (const auto& c : covs) {
      const auto it = std::find(s.covariate_names.begin(), s.covariate_names.end(), c);
      if (it == s.covariate_names.end()) throw StructuralError("unknown covariate '" + c + "'");
      pr.covariates.push_back(static_cast<std::size_t>(it - s.covariate_names.begin()));
    }
    std::sort(pr.covariates.begin(), pr.covariates.end());
    pr.covariates.erase(std::unique(pr.covariates.begin(), pr.covariates.end()), pr.covariates.end());
  }
  s.validate();
  return s;
}

void ModelSpec::validate() const {
  structure.validate();
  if (coefficients.size() != structure.predictors.size())
    throw StructuralError("model: one coefficient vector per predictor required");
  for (std::size_t k = 0; k < coefficients.size(); ++k) {
    if (coefficients[k].size() != structure.predictors[k].coefficient_count())
      throw StructuralError("model: coefficient length mismatch for " +
                            slot_name(structure.predictors[k].slot));
    for (double b : coefficients[k])
      if (!std::isfinite(b))
        throw StructuralError("model: non-finite coefficient for " + slot_name(structure.predictors[k].slot));
  }
}

std::vector<double> ModelSpec::flat_coefficients() const {
  std::vector<double> flat;
  for (const auto& c : coefficients) flat.insert(flat.end(), c.begin(), c.end());
  return flat;
}

ModelSpec with_coefficients(const ModelStructure& structure, std::span<const double> flat) {
  if (flat.size() != structure.coefficient_count())
    throw StructuralError("coefficient vector has length " + std::to_string(flat.size()) + ", expected " +
                          std::to_string(structure.coefficient_count()));
  ModelSpec m{structure, {}};
  std::size_t pos = 0;
  for (const auto& p : structure.predictors) {
    m.coefficients.emplace_back(flat.begin() + static_cast<std::ptrdiff_t>(pos),
                                flat.begin() + static_cast<std::ptrdiff_t>(pos + p.coefficient_count()));
    pos += p.coefficient_count();
  }
  return m;
}

ModelSpec intercept_model(const ModelStructure& structure, std::span<const double> intercepts) {
  if (intercepts.size() != structure.predictors.size())
    throw StructuralError("intercept_model: one intercept per predictor required");
  ModelSpec m{structure, {}};
  for (std::size_t k = 0; k < structure.predictors.size(); ++k) {
    std::vector<double> beta(structure.predictors[k].coefficient_count(), 0.0);
    beta[0] = intercepts[k];
    m.coefficients.push_back(std::move(beta));
  }
  return m;
}

// Evaluation ------------------------------------------------------------------

ObservationParams observation_params(const ModelSpec& model, std::span<const double> x_row) {
  const auto& s = model.structure;
  std::vector<double> theta(s.predictors.size());
  for (std::size_t k = 0; k < s.predictors.size(); ++k)
    theta[k] = apply_link_inverse(s.predictors[k].link,
                                  eval_predictor(s.predictors[k], model.coefficients.at(k), x_row));
  ObservationParams out;
  std::size_t k = 0;
  auto take_margin = [&](MarginalFamily f) -> MarginalParams {
    if (f == MarginalFamily::Gaussian) {
      GaussianParams g{theta[k], theta[k + 1]};
      k += 2;
      return g;
    }
    DagumParams d{theta[k], theta[k + 1], theta[k + 2]};
    k += 3;
    return d;
  };
  if (s.margin1) out.margin1 = take_margin(*s.margin1);
  if (s.margin2) out.margin2 = take_margin(*s.margin2);
  if (s.copula) out.copula = CopulaSpec{s.copula->family, s.copula->rotation, theta[k]};
  return out;
}

ObservationParams observation_params(const ModelSpec& model, const Dataset& data, std::size_t row) {
  if (data.x.cols() == 0) return observation_params(model, std::span<const double>{});
  const Eigen::RowVectorXd r = data.x.row(static_cast<Eigen::Index>(row));
  return observation_params(model, std::span<const double>(r.data(), static_cast<std::size_t>(r.size())));
}

namespace {

[[noreturn]] void non_finite(std::size_t i, const std::string& what) {
  throw NumericalError("observation " + std::to_string(i) + ": non-finite " + what);
}

std::string margin_label(int response, const MarginalParams& m) {
  std::ostringstream os;
  os << "log f" << response << " (y" << response << ".";
  if (const auto* g = std::get_if<GaussianParams>(&m)) {
    os << "mu=" << g->mu << ", sigma2=" << g->sigma2;
  } else {
    const auto& d = std::get<DagumParams>(m);
    os << "p=" << d.p << ", a=" << d.a << ", b=" << d.b;
  }
  os << ")";
  return os.str();
}

}  // namespace

std::vector<double> pointwise_log_likelihood(const ModelSpec& model, const Dataset& data) {
  model.validate();
  data.validate();
  if (data.covariate_count() != model.structure.covariate_names.size())
    throw StructuralError("model and dataset disagree on the covariate count");
  std::vector<double> out(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) try {
    const auto p = observation_params(model, data, i);
    double ll = 0.0;
    double u = 0.5, v = 0.5;
    if (p.margin1) {
      const double lf = log_pdf(data.y1[i], *p.margin1);
      if (!std::isfinite(lf)) non_finite(i, margin_label(1, *p.margin1));
      ll += lf;
      u = cdf(data.y1[i], *p.margin1);
    }
    if (p.margin2) {
      const double lf = log_pdf(data.y2[i], *p.margin2);
      if (!std::isfinite(lf)) non_finite(i, margin_label(2, *p.margin2));
      ll += lf;
      v = cdf(data.y2[i], *p.margin2);
    }
    if (p.copula) {
      const double lc =
          detail::copula_log_density_unchecked(p.copula->family, p.copula->rotation, p.copula->rho, u, v);
      if (!std::isfinite(lc))
        non_finite(i, "log copula density (copula.rho=" + std::to_string(p.copula->rho) + ")");
      ll += lc;
    }
    out[i] = ll;
  } catch (const DomainError& e) {
    throw DomainError("observation " + std::to_string(i) + ": " + e.what());
  }
  return out;
}

double joint_log_likelihood(const ModelSpec& model, const Dataset& data) {
  const auto ll = pointwise_log_likelihood(model, data);
  double total = 0.0;
  for (double v : ll) total += v;
  return total;
}

std::vector<double> log_likelihood_gradient(const ModelSpec& model, const Dataset& data) {
  const auto base = model.flat_coefficients();
  std::vector<double> grad(base.size());
  auto eval = [&](std::size_t k, double delta) {
    auto b = base;
    b[k] += delta;
    return joint_log_likelihood(with_coefficients(model.structure, b), data);
  };
  for (std::size_t k = 0; k < base.size(); ++k) {
    const double h = 1e-3 * std::max(1.0, std::abs(base[k]));
    const double d1 = (eval(k, h) - eval(k, -h)) / (2.0 * h);
    const double d2 = (eval(k, h / 2) - eval(k, -h / 2)) / h;
    grad[k] = (4.0 * d2 - d1) / 3.0;
  }
  return grad;
}

// Serialization ---------------------------------------------------------------

nlohmann::json to_json(const Standardization& s) {
  return {{"offset", s.offset}, {"scale", s.scale}, {"inverted", s.inverted}};
}

Standardization standardization_from_json(const nlohmann::json& j) {
  Standardization s{j.at("offset").get<double>(), j.at("scale").get<double>(), j.value("inverted", false)};
  s.validate();
  return s;
}

nlohmann::json to_json(const ModelStructure& s) {
  nlohmann::json j;
  j["margin1"] = s.margin1 ? nlohmann::json(std::string(to_string(*s.margin1))) : nlohmann::json(nullptr);
  j["margin2"] = s.margin2 ? nlohmann::json(std::string(to_string(*s.margin2))) : nlohmann::json(nullptr);
  if (s.copula) {
    j["copula"] = {{"family", std::string(to_string(s.copula->family))},
                   {"rotation", static_cast<int>(s.copula->rotation)}};
  } else {
    j["copula"] = nullptr;
  }
  j["covariates"] = s.covariate_names;
  auto preds = nlohmann::json::array();
  for (const auto& p : s.predictors) {
    std::vector<std::string> names;
    for (std::size_t c : p.covariates) names.push_back(s.covariate_names.at(c));
    preds.push_back({{"parameter", slot_name(p.slot)},
                     {"link", std::string(to_string(p.link))},
                     {"covariates", names}});
  }
  j["predictors"] = preds;
  return j;
}

ModelStructure structure_from_json(const nlohmann::json& j) {
  try {
    std::optional<MarginalFamily> m1, m2;
    std::optional<CopulaChoice> cop;
    if (!j.at("margin1").is_null()) m1 = marginal_family_from_string(j.at("margin1").get<std::string>());
    if (!j.at("margin2").is_null()) m2 = marginal_family_from_string(j.at("margin2").get<std::string>());
    if (j.contains("copula") && !j.at("copula").is_null()) {
      const auto& c = j.at("copula");
      cop = CopulaChoice{copula_family_from_string(c.at("family").get<std::string>()),
                         rotation_from_degrees(c.value("rotation", 0))};
    }
    std::vector<std::pair<std::string, std::vector<std::string>>> covs;
    for (const auto& p : j.at("predictors"))
      covs.emplace_back(p.at("parameter").get<std::string>(), p.at("covariates").get<std::vector<std::string>>());
    auto s = make_structure(m1, m2, cop, j.at("covariates").get<std::vector<std::string>>(), covs);
    for (std::size_t k = 0; k < s.predictors.size(); ++k) {
      const auto& p = j.at("predictors").at(k);
      if (p.contains("link") && link_from_string(p.at("link").get<std::string>()) != s.predictors[k].link)
        throw StructuralError("model json: link mismatch for " + slot_name(s.predictors[k].slot));
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw StructuralError(std::string("model json: ") + e.what());
  }
}

nlohmann::json to_json(const ModelSpec& model) {
  auto j = to_json(model.structure);
  for (std::size_t k = 0; k < model.coefficients.size(); ++k)
    j["predictors"][k]["coefficients"] = model.coefficients[k];
  return j;
}

ModelSpec model_from_json(const nlohmann::json& j) {
  ModelSpec m{structure_from_json(j), {}};
  try {
    for (const auto& p : j.at("predictors")) m.coefficients.push_back(p.at("coefficients").get<std::vector<double>>());
  } catch (const nlohmann::json::exception& e) {
    throw StructuralError(std::string("model json: ") + e.what());
  }
  m.validate();
  return m;
}

}  // namespace copreg
