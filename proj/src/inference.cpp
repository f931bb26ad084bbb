#include "copreg/inference.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <exception>
#include <optional>
#include <thread>

#include "copreg/error.hpp"
#include "copreg/random.hpp"
#include "copreg/stats.hpp"

namespace copreg {

// Configuration ---------------------------------------------------------------

void PriorSpec::validate() const {
  if (!std::isfinite(mean)) throw StructuralError("prior: mean must be finite");
  if (!(variance > 0.0) || !std::isfinite(variance)) throw StructuralError("prior: variance must be positive");
}

int McmcConfig::effective_thinning() const {
  if (thinning > 0) return thinning;
  return std::max(1, (n_iterations - burn_in) / std::max(1, target_kept));
}

int McmcConfig::kept_per_chain() const { return (n_iterations - burn_in) / effective_thinning(); }

void McmcConfig::validate() const {
  if (n_chains < 1) throw StructuralError("mcmc: n_chains must be at least 1");
  if (burn_in < 0 || burn_in >= n_iterations) throw StructuralError("mcmc: burn_in must lie in [0, n_iterations)");
  if (thinning < 0) throw StructuralError("mcmc: thinning must be non-negative");
  if (thinning == 0 && target_kept < 1) throw StructuralError("mcmc: target_kept must be positive");
  if (kept_per_chain() < 100)
    throw StructuralError("mcmc: fewer than 100 kept draws per chain (" + std::to_string(kept_per_chain()) + ")");
  if (!(proposal_scale > 0.0)) throw StructuralError("mcmc: proposal_scale must be positive");
  if (!(init_jitter >= 0.0)) throw StructuralError("mcmc: init_jitter must be non-negative");
  if (!(init_dispersion >= 0.0)) throw StructuralError("mcmc: init_dispersion must be non-negative");
  if (!(independence_df >= 1.0)) throw StructuralError("mcmc: independence_df must be at least 1");
  if (n_threads < 0) throw StructuralError("mcmc: n_threads must be non-negative");
}

nlohmann::json to_json(const McmcConfig& c) {
  return {{"n_chains", c.n_chains},
          {"n_iterations", c.n_iterations},
          {"burn_in", c.burn_in},
          {"thinning", c.thinning},
          {"target_kept", c.target_kept},
          {"proposal_scale", c.proposal_scale},
          {"joint_margin_blocks", c.joint_margin_blocks},
          {"laplace_start", c.laplace_start},
          {"independence_move", c.independence_move},
          {"independence_df", c.independence_df},
          {"init_dispersion", c.init_dispersion},
          {"init_jitter", c.init_jitter},
          {"seed", c.seed}};
}

McmcConfig mcmc_config_from_json(const nlohmann::json& j, McmcConfig c) {
  try {
    c.n_chains = j.value("n_chains", c.n_chains);
    c.n_iterations = j.value("n_iterations", c.n_iterations);
    c.burn_in = j.value("burn_in", c.burn_in);
    c.thinning = j.value("thinning", c.thinning);
    c.target_kept = j.value("target_kept", c.target_kept);
    c.proposal_scale = j.value("proposal_scale", c.proposal_scale);
    c.joint_margin_blocks = j.value("joint_margin_blocks", c.joint_margin_blocks);
    c.laplace_start = j.value("laplace_start", c.laplace_start);
    c.independence_move = j.value("independence_move", c.independence_move);
    c.independence_df = j.value("independence_df", c.independence_df);
    c.init_dispersion = j.value("init_dispersion", c.init_dispersion);
    c.init_jitter = j.value("init_jitter", c.init_jitter);
    c.seed = j.value("seed", c.seed);
    c.n_threads = j.value("n_threads", c.n_threads);
  } catch (const nlohmann::json::exception& e) {
    throw StructuralError(std::string("mcmc config: ") + e.what());
  }
  return c;
}

// Posterior samples -----------------------------------------------------------

std::size_t PosteriorSamples::index_of(std::string_view label) const {
  const auto it = std::find(labels.begin(), labels.end(), label);
  if (it == labels.end()) throw StructuralError("unknown coefficient '" + std::string(label) + "'");
  return static_cast<std::size_t>(it - labels.begin());
}

std::vector<double> PosteriorSamples::chain_draws(std::size_t chain, std::string_view label) const {
  const auto k = static_cast<Eigen::Index>(index_of(label));
  const auto& m = chains.at(chain);
  std::vector<double> out(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) out[static_cast<std::size_t>(r)] = m(r, k);
  return out;
}

Eigen::MatrixXd PosteriorSamples::pooled() const {
  Eigen::Index rows = 0;
  for (const auto& c : chains) rows += c.rows();
  Eigen::MatrixXd out(rows, static_cast<Eigen::Index>(labels.size()));
  Eigen::Index r = 0;
  for (const auto& c : chains) {
    out.middleRows(r, c.rows()) = c;
    r += c.rows();
  }
  return out;
}

std::vector<double> PosteriorSamples::pooled_draws(std::string_view label) const {
  std::vector<double> out;
  for (std::size_t c = 0; c < chains.size(); ++c) {
    const auto d = chain_draws(c, label);
    out.insert(out.end(), d.begin(), d.end());
  }
  return out;
}

std::vector<double> PosteriorSamples::posterior_mean() const {
  const Eigen::MatrixXd p = pooled();
  const Eigen::RowVectorXd first = p.row(0);
  const Eigen::RowVectorXd m = first + (p.rowwise() - first).colwise().mean();
  return {m.data(), m.data() + m.size()};
}

std::vector<double> PosteriorSamples::posterior_sd() const {
  const Eigen::MatrixXd p = pooled();
  std::vector<double> out(labels.size());
  for (Eigen::Index k = 0; k < p.cols(); ++k) {
    const Eigen::VectorXd col = p.col(k);
    out[static_cast<std::size_t>(k)] = std::sqrt(stats::variance({col.data(), static_cast<std::size_t>(col.size())}));
  }
  return out;
}

ModelSpec PosteriorSamples::posterior_mean_model() const { return with_coefficients(structure, posterior_mean()); }

void PosteriorSamples::validate() const {
  if (chains.empty()) throw StructuralError("posterior: no chains");
  if (labels != structure.coefficient_labels()) throw StructuralError("posterior: labels do not match the structure");
  for (const auto& c : chains) {
    if (c.cols() != static_cast<Eigen::Index>(labels.size()) || c.rows() != chains[0].rows())
      throw StructuralError("posterior: chains differ in shape");
    if (!c.allFinite()) throw StructuralError("posterior: non-finite draw");
  }
}

std::pair<double, double> credible_interval(const PosteriorSamples& samples, std::string_view label,
                                            double level) {
  if (!(level > 0.0 && level < 1.0)) throw DomainError("credible_interval: level must lie in (0, 1)");
  auto d = samples.pooled_draws(label);
  if (d.empty()) throw StructuralError("credible_interval: no draws");
  std::sort(d.begin(), d.end());
  return {stats::quantile_sorted(d, (1.0 - level) / 2.0), stats::quantile_sorted(d, (1.0 + level) / 2.0)};
}

double log_posterior(const ModelStructure& structure, const Dataset& data, const PriorSpec& prior,
                     std::span<const double> beta) {
  double lp = joint_log_likelihood(with_coefficients(structure, beta), data);
  for (double b : beta) lp -= 0.5 * (b - prior.mean) * (b - prior.mean) / prior.variance;
  return lp;
}

// Sampler ---------------------------------------------------------------------

namespace {

constexpr double kEtaClamp = 700.0;

double softplus_neg(double t) {
  // log(1 + exp(-t))
  return t > 0.0 ? std::log1p(std::exp(-t)) : -t + std::log1p(std::exp(t));
}

// Read-only problem description shared by all chains.
struct Problem {
  const ModelStructure& s;
  const Dataset& data;
  PriorSpec prior;
  std::size_t n = 0;
  std::vector<Eigen::MatrixXd> design;
  std::vector<Eigen::Index> offset;
  std::vector<int> response;
  int first1 = -1, first2 = -1, rho_index = -1;
  Eigen::VectorXd y1, y2, log_y1, log_y2;
  Eigen::Index k = 0;

  Problem(const ModelStructure& structure, const Dataset& d, const PriorSpec& pr)
      : s(structure), data(d), prior(pr), n(d.size()) {
    Eigen::Index pos = 0;
    for (std::size_t p = 0; p < s.predictors.size(); ++p) {
      const auto& pred = s.predictors[p];
      Eigen::MatrixXd D(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(pred.coefficient_count()));
      D.col(0).setOnes();
      for (std::size_t j = 0; j < pred.covariates.size(); ++j)
        D.col(static_cast<Eigen::Index>(j + 1)) = data.x.col(static_cast<Eigen::Index>(pred.covariates[j]));
      design.push_back(std::move(D));
      offset.push_back(pos);
      pos += static_cast<Eigen::Index>(pred.coefficient_count());
      response.push_back(pred.slot.response);
      if (pred.slot.response == 1 && first1 < 0) first1 = static_cast<int>(p);
      if (pred.slot.response == 2 && first2 < 0) first2 = static_cast<int>(p);
      if (pred.slot.response == 0) rho_index = static_cast<int>(p);
    }
    k = pos;
    y1 = Eigen::Map<const Eigen::VectorXd>(data.y1.data(), static_cast<Eigen::Index>(n));
    y2 = Eigen::Map<const Eigen::VectorXd>(data.y2.data(), static_cast<Eigen::Index>(n));
    log_y1 = check_support(1, y1);
    log_y2 = check_support(2, y2);
  }

  Eigen::VectorXd check_support(int r, const Eigen::VectorXd& y) const {
    const auto& fam = r == 1 ? s.margin1 : s.margin2;
    if (!fam || *fam != MarginalFamily::Dagum) return {};
    for (Eigen::Index i = 0; i < y.size(); ++i)
      if (!(y[i] > 0.0))
        throw DomainError("observation " + std::to_string(i) + ": y" + std::to_string(r) +
                          " must be positive under a Dagum margin (check the standardization)");
    return y.array().log();
  }

  std::size_t predictors() const { return design.size(); }
  Eigen::Index size(std::size_t p) const { return design[p].cols(); }

  double log_prior(const Eigen::VectorXd& beta) const {
    return -0.5 * (beta.array() - prior.mean).square().sum() / prior.variance;
  }

  void compute_eta(std::size_t p, const Eigen::VectorXd& beta, Eigen::VectorXd& eta) const {
    eta.noalias() = design[p] * beta.segment(offset[p], size(p));
    eta = eta.cwiseMax(-kEtaClamp).cwiseMin(kEtaClamp);
  }

  void compute_theta(std::size_t p, const Eigen::VectorXd& eta, Eigen::VectorXd& theta) const {
    switch (s.predictors[p].link) {
      case Link::Identity: theta = eta; break;
      case Link::Log: theta = eta.array().exp(); break;
      case Link::GaussianRho: theta = eta.array() / (1.0 + eta.array().square()).sqrt(); break;
      case Link::LogShifted: theta = eta.array().exp() + 1.0; break;
    }
  }

  // Per-observation margin terms log f_r and F_r from predictor values.
  void margin_terms(int r, const std::vector<const Eigen::VectorXd*>& eta,
                    const std::vector<const Eigen::VectorXd*>& theta, Eigen::VectorXd& lf,
                    Eigen::VectorXd& cdf) const {
    const auto k0 = static_cast<std::size_t>(r == 1 ? first1 : first2);
    const auto fam = r == 1 ? *s.margin1 : *s.margin2;
    const Eigen::VectorXd& y = r == 1 ? y1 : y2;
    const auto m = static_cast<Eigen::Index>(n);
    if (fam == MarginalFamily::Gaussian) {
      const auto& mu = *theta[k0];
      const auto& s2 = *theta[k0 + 1];
      const auto& ls2 = *eta[k0 + 1];
      for (Eigen::Index i = 0; i < m; ++i) {
        const double z = (y[i] - mu[i]) / std::sqrt(s2[i]);
        lf[i] = -stats::kLogSqrt2Pi - 0.5 * ls2[i] - 0.5 * z * z;
        cdf[i] = stats::normal_cdf(z);
      }
      return;
    }
    const Eigen::VectorXd& log_y = r == 1 ? log_y1 : log_y2;
    const auto& p = *theta[k0];
    const auto& a = *theta[k0 + 1];
    const auto& lp = *eta[k0];
    const auto& la = *eta[k0 + 1];
    const auto& lb = *eta[k0 + 2];
    for (Eigen::Index i = 0; i < m; ++i) {
      const double t = a[i] * (log_y[i] - lb[i]);
      const double sp = softplus_neg(t);
      lf[i] = lp[i] + la[i] - log_y[i] - t - (p[i] + 1.0) * sp;
      cdf[i] = std::exp(-p[i] * sp);
    }
  }

  void copula_terms(const Eigen::VectorXd& rho, const Eigen::VectorXd& u, const Eigen::VectorXd& v,
                    Eigen::VectorXd& lc) const {
    const auto& cop = *s.copula;
    for (Eigen::Index i = 0; i < lc.size(); ++i)
      lc[i] = detail::copula_log_density_unchecked(cop.family, cop.rotation, rho[i], u[i], v[i]);
  }

  // Per-observation log-likelihood at given (clamped) predictor values.
  Eigen::VectorXd pointwise(const std::vector<Eigen::VectorXd>& eta) const {
    const auto m = static_cast<Eigen::Index>(n);
    std::vector<Eigen::VectorXd> theta(predictors());
    std::vector<const Eigen::VectorXd*> ep, tp;
    for (std::size_t p = 0; p < predictors(); ++p) {
      compute_theta(p, eta[p], theta[p]);
      ep.push_back(&eta[p]);
      tp.push_back(&theta[p]);
    }
    Eigen::VectorXd total = Eigen::VectorXd::Zero(m), lf(m), u = Eigen::VectorXd::Constant(m, 0.5),
                    v = Eigen::VectorXd::Constant(m, 0.5);
    if (first1 >= 0) {
      margin_terms(1, ep, tp, lf, u);
      total += lf;
    }
    if (first2 >= 0) {
      margin_terms(2, ep, tp, lf, v);
      total += lf;
    }
    if (rho_index >= 0) {
      copula_terms(theta[static_cast<std::size_t>(rho_index)], u, v, lf);
      total += lf;
    }
    return total;
  }

  std::vector<Eigen::VectorXd> all_eta(const Eigen::VectorXd& beta) const {
    std::vector<Eigen::VectorXd> eta(predictors());
    for (std::size_t p = 0; p < predictors(); ++p) compute_eta(p, beta, eta[p]);
    return eta;
  }

  double log_posterior(const Eigen::VectorXd& beta) const { return pointwise(all_eta(beta)).sum() + log_prior(beta); }
};

struct Block {
  enum class Kind { RandomWalk, Independence };
  std::string name;
  Kind kind = Kind::RandomWalk;
  std::vector<std::size_t> predictors;
  std::vector<Eigen::Index> coef;
  Eigen::MatrixXd chol;
  double log_scale = 0.0;
  double target = 0.25;
  bool active = true;
  long adapt_steps = 0;
  long proposed = 0;
  long accepted = 0;
};

// Multivariate t approximation to the posterior used by the independence move.
struct Approximation {
  Eigen::VectorXd mode;
  Eigen::MatrixXd cov;
  Eigen::MatrixXd chol;
  Eigen::MatrixXd precision;
  double df = 10.0;

  double log_density(const Eigen::VectorXd& beta) const {
    const Eigen::VectorXd z = chol.triangularView<Eigen::Lower>().solve(beta - mode);
    return -0.5 * (df + static_cast<double>(mode.size())) * std::log1p(z.squaredNorm() / df);
  }

  Eigen::VectorXd draw(Rng& rng) const {
    Eigen::VectorXd z(mode.size());
    for (Eigen::Index j = 0; j < z.size(); ++j) z[j] = standard_normal(rng);
    double chi2 = 0.0;
    for (int j = 0; j < static_cast<int>(df); ++j) {
      const double g = standard_normal(rng);
      chi2 += g * g;
    }
    return mode + chol * z * std::sqrt(df / chi2);
  }
};

// Per-chain cached evaluation state.
class Chain {
 public:
  Chain(const Problem& pb, Eigen::VectorXd beta) : pb_(pb), beta_(std::move(beta)) {
    const auto P = pb.predictors();
    const auto n = static_cast<Eigen::Index>(pb.n);
    eta_.resize(P);
    theta_.resize(P);
    eta_p_.resize(P);
    theta_p_.resize(P);
    for (std::size_t p = 0; p < P; ++p) {
      pb.compute_eta(p, beta_, eta_[p]);
      pb.compute_theta(p, eta_[p], theta_[p]);
      eta_p_[p].resize(n);
      theta_p_[p].resize(n);
      cur_eta_.push_back(&eta_[p]);
      cur_theta_.push_back(&theta_[p]);
    }
    lf1_.setZero(n);
    lf2_.setZero(n);
    u_.setConstant(n, 0.5);
    v_.setConstant(n, 0.5);
    lc_.setZero(n);
    lf1_p_ = lf1_;
    lf2_p_ = lf2_;
    u_p_ = u_;
    v_p_ = v_;
    lc_p_ = lc_;
    if (pb.first1 >= 0) pb.margin_terms(1, cur_eta_, cur_theta_, lf1_, u_);
    if (pb.first2 >= 0) pb.margin_terms(2, cur_eta_, cur_theta_, lf2_, v_);
    if (pb.rho_index >= 0) pb.copula_terms(theta_[static_cast<std::size_t>(pb.rho_index)], u_, v_, lc_);
    ll_ = lf1_.sum() + lf2_.sum() + lc_.sum();
  }

  double log_likelihood() const { return ll_; }
  const Eigen::VectorXd& beta() const { return beta_; }

  /// One Metropolis-Hastings step on a block; returns whether it was accepted.
  bool step(const Block& b, const Approximation* approx, Rng& rng) {
    Eigen::VectorXd prop = beta_;
    double log_q = 0.0;
    if (b.kind == Block::Kind::Independence) {
      prop = approx->draw(rng);
      log_q = approx->log_density(beta_) - approx->log_density(prop);
    } else {
      Eigen::VectorXd z(static_cast<Eigen::Index>(b.coef.size()));
      for (Eigen::Index j = 0; j < z.size(); ++j) z[j] = standard_normal(rng);
      const Eigen::VectorXd delta = std::exp(b.log_scale) * (b.chol * z);
      for (std::size_t j = 0; j < b.coef.size(); ++j) prop[b.coef[j]] += delta[static_cast<Eigen::Index>(j)];
    }

    auto eta = cur_eta_;
    auto theta = cur_theta_;
    bool t1 = false, t2 = false, tc = false;
    for (std::size_t p : b.predictors) {
      pb_.compute_eta(p, prop, eta_p_[p]);
      pb_.compute_theta(p, eta_p_[p], theta_p_[p]);
      eta[p] = &eta_p_[p];
      theta[p] = &theta_p_[p];
      t1 |= pb_.response[p] == 1;
      t2 |= pb_.response[p] == 2;
      tc |= pb_.response[p] == 0;
    }
    double ll = 0.0;
    if (t1) {
      pb_.margin_terms(1, eta, theta, lf1_p_, u_p_);
      ll += lf1_p_.sum();
    } else {
      ll += lf1_.sum();
    }
    if (t2) {
      pb_.margin_terms(2, eta, theta, lf2_p_, v_p_);
      ll += lf2_p_.sum();
    } else {
      ll += lf2_.sum();
    }
    const bool redo_copula = pb_.rho_index >= 0 && (t1 || t2 || tc);
    if (redo_copula) {
      pb_.copula_terms(*theta[static_cast<std::size_t>(pb_.rho_index)], t1 ? u_p_ : u_, t2 ? v_p_ : v_, lc_p_);
      ll += lc_p_.sum();
    } else {
      ll += lc_.sum();
    }

    double log_prior_diff = 0.0;
    for (Eigen::Index c : b.coef) {
      const double a = prop[c] - pb_.prior.mean;
      const double o = beta_[c] - pb_.prior.mean;
      log_prior_diff -= 0.5 * (a * a - o * o) / pb_.prior.variance;
    }
    const double log_ratio = ll - ll_ + log_prior_diff + log_q;
    const bool accept = std::isfinite(ll) && std::log(uniform01(rng)) < log_ratio;
    if (accept) {
      beta_ = std::move(prop);
      ll_ = ll;
      for (std::size_t p : b.predictors) {
        eta_[p].swap(eta_p_[p]);
        theta_[p].swap(theta_p_[p]);
      }
      if (t1) {
        lf1_.swap(lf1_p_);
        u_.swap(u_p_);
      }
      if (t2) {
        lf2_.swap(lf2_p_);
        v_.swap(v_p_);
      }
      if (redo_copula) lc_.swap(lc_p_);
    }
    return accept;
  }

 private:
  const Problem& pb_;
  Eigen::VectorXd beta_;
  std::vector<Eigen::VectorXd> eta_, theta_, eta_p_, theta_p_;
  std::vector<const Eigen::VectorXd*> cur_eta_, cur_theta_;
  Eigen::VectorXd lf1_, lf2_, u_, v_, lc_;
  Eigen::VectorXd lf1_p_, lf2_p_, u_p_, v_p_, lc_p_;
  double ll_ = 0.0;
};

// Starting values: moments for Gaussian margins (OLS for the mean), quantile
// matching with p = 1 for Dagum margins, eta = 0 for the copula.
Eigen::VectorXd moment_start(const Problem& pb, std::vector<double>& init_scale) {
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(pb.k);
  init_scale.assign(pb.predictors(), 1.0);
  auto margin = [&](int r) {
    const int k0 = r == 1 ? pb.first1 : pb.first2;
    if (k0 < 0) return;
    const auto p0 = static_cast<std::size_t>(k0);
    const Eigen::VectorXd& y = r == 1 ? pb.y1 : pb.y2;
    std::vector<double> yv(y.data(), y.data() + y.size());
    const auto fam = r == 1 ? *pb.s.margin1 : *pb.s.margin2;
    if (fam == MarginalFamily::Gaussian) {
      Eigen::VectorXd coef = pb.design[p0].colPivHouseholderQr().solve(y);
      double resid_var = (y - pb.design[p0] * coef).squaredNorm() / static_cast<double>(y.size());
      if (!coef.allFinite() || !(resid_var > 0.0)) {
        coef.setZero();
        coef[0] = stats::mean(yv);
        resid_var = std::max(stats::variance(yv), 1e-8);
      }
      beta.segment(pb.offset[p0], coef.size()) = coef;
      beta[pb.offset[p0 + 1]] = std::log(resid_var);
      init_scale[p0] = resid_var;
      init_scale[p0 + 1] = 2.0;
    } else {
      const double q25 = stats::quantile(yv, 0.25);
      const double med = stats::quantile(yv, 0.5);
      const double q75 = stats::quantile(yv, 0.75);
      const double a = q75 > q25 ? 2.0 * std::log(3.0) / std::log(q75 / q25) : 1.0;
      beta[pb.offset[p0]] = 0.0;
      beta[pb.offset[p0 + 1]] = std::log(a);
      beta[pb.offset[p0 + 2]] = std::log(med);
    }
  };
  margin(1);
  margin(2);
  if (pb.rho_index >= 0) init_scale[static_cast<std::size_t>(pb.rho_index)] = 4.0;
  return beta;
}

// Gradient and Hessian of the log posterior. Per-observation derivatives with
// respect to the predictors come from central differences and are chained
// through the design matrices.
bool log_posterior_derivatives(const Problem& pb, const Eigen::VectorXd& beta, Eigen::VectorXd& grad,
                               Eigen::MatrixXd& hess) {
  constexpr double h = 1e-4;
  const std::size_t P = pb.predictors();
  const auto eta = pb.all_eta(beta);
  const Eigen::VectorXd l0 = pb.pointwise(eta);
  if (!l0.allFinite()) return false;
  auto shifted = [&](std::size_t a, double da, std::size_t b, double db) {
    auto e = eta;
    e[a].array() += da;
    e[b].array() += db;
    return pb.pointwise(e);
  };
  std::vector<Eigen::VectorXd> g(P);
  std::vector<std::vector<Eigen::VectorXd>> H(P, std::vector<Eigen::VectorXd>(P));
  for (std::size_t a = 0; a < P; ++a) {
    const Eigen::VectorXd up = shifted(a, h, a, 0.0);
    const Eigen::VectorXd dn = shifted(a, -h, a, 0.0);
    g[a] = (up - dn) / (2.0 * h);
    H[a][a] = (up - 2.0 * l0 + dn) / (h * h);
    for (std::size_t b = 0; b < a; ++b) {
      const bool linked = pb.rho_index >= 0 || pb.response[a] == pb.response[b];
      if (!linked) {
        H[a][b] = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(pb.n));
      } else {
        H[a][b] = (shifted(a, h, b, h) - shifted(a, h, b, -h) - shifted(a, -h, b, h) + shifted(a, -h, b, -h)) /
                  (4.0 * h * h);
      }
    }
  }
  grad.resize(pb.k);
  hess.resize(pb.k, pb.k);
  for (std::size_t a = 0; a < P; ++a) {
    if (!g[a].allFinite() || !H[a][a].allFinite()) return false;
    grad.segment(pb.offset[a], pb.size(a)) = pb.design[a].transpose() * g[a];
    for (std::size_t b = 0; b <= a; ++b) {
      const Eigen::VectorXd& w = H[a][b];
      if (!w.allFinite()) return false;
      const Eigen::MatrixXd blk = pb.design[a].transpose() * w.asDiagonal() * pb.design[b];
      hess.block(pb.offset[a], pb.offset[b], pb.size(a), pb.size(b)) = blk;
      if (a != b) hess.block(pb.offset[b], pb.offset[a], pb.size(b), pb.size(a)) = blk.transpose();
    }
  }
  grad.array() -= (beta.array() - pb.prior.mean) / pb.prior.variance;
  hess.diagonal().array() -= 1.0 / pb.prior.variance;
  return grad.allFinite() && hess.allFinite();
}

// Damped Newton ascent to the posterior mode; the approximation's covariance is
// the inverse negative Hessian there.
std::optional<Approximation> laplace_approximation(const Problem& pb, Eigen::VectorXd beta, double df) {
  double lp = pb.log_posterior(beta);
  if (!std::isfinite(lp)) return std::nullopt;
  Eigen::VectorXd grad;
  Eigen::MatrixXd hess;
  bool converged = false;
  for (int it = 0; it < 100 && !converged; ++it) {
    if (!log_posterior_derivatives(pb, beta, grad, hess)) return std::nullopt;
    const Eigen::MatrixXd neg = -hess;
    const Eigen::VectorXd diag = neg.diagonal().cwiseAbs().cwiseMax(1e-12);
    Eigen::VectorXd step;
    double damping = 0.0;
    for (int tries = 0; tries < 30; ++tries) {
      Eigen::MatrixXd m = neg;
      m.diagonal() += damping * diag;
      Eigen::LLT<Eigen::MatrixXd> llt(m);
      if (llt.info() == Eigen::Success) {
        step = llt.solve(grad);
        if (step.allFinite()) break;
      }
      step.resize(0);
      damping = damping == 0.0 ? 1e-4 : damping * 10.0;
    }
    if (step.size() == 0) return std::nullopt;
    const double decrement = grad.dot(step);
    double t = 1.0;
    bool improved = false;
    for (int ls = 0; ls < 40; ++ls, t *= 0.5) {
      const Eigen::VectorXd cand = beta + t * step;
      const double lc = pb.log_posterior(cand);
      if (std::isfinite(lc) && lc >= lp - 1e-10) {
        beta = cand;
        lp = lc;
        improved = true;
        break;
      }
    }
    if (!improved) return std::nullopt;
    converged = damping == 0.0 && t == 1.0 && decrement < 1e-8;
  }
  if (!converged) return std::nullopt;
  if (!log_posterior_derivatives(pb, beta, grad, hess)) return std::nullopt;
  Approximation a;
  a.mode = beta;
  a.precision = -hess;
  Eigen::LLT<Eigen::MatrixXd> llt(a.precision);
  if (llt.info() != Eigen::Success) return std::nullopt;
  a.cov = llt.solve(Eigen::MatrixXd::Identity(pb.k, pb.k));
  a.cov = 0.5 * (a.cov + a.cov.transpose());
  Eigen::LLT<Eigen::MatrixXd> cl(a.cov);
  if (cl.info() != Eigen::Success) return std::nullopt;
  a.chol = cl.matrixL();
  a.df = df;
  return a;
}

// Covariance of block b conditional on all other coefficients.
Eigen::MatrixXd conditional_cov(const Eigen::MatrixXd& precision, const std::vector<Eigen::Index>& coef) {
  const auto d = static_cast<Eigen::Index>(coef.size());
  Eigen::MatrixXd sub(d, d);
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = 0; j < d; ++j)
      sub(i, j) = precision(coef[static_cast<std::size_t>(i)], coef[static_cast<std::size_t>(j)]);
  return sub.llt().solve(Eigen::MatrixXd::Identity(d, d));
}

bool set_proposal(Block& b, const Eigen::MatrixXd& cov) {
  const auto d = static_cast<double>(b.coef.size());
  Eigen::LLT<Eigen::MatrixXd> llt((2.38 * 2.38 / d) * cov);
  if (llt.info() != Eigen::Success || !cov.allFinite()) return false;
  b.chol = llt.matrixL();
  return true;
}

std::vector<Block> make_blocks(const Problem& pb, const std::vector<double>& init_scale, const McmcConfig& cfg,
                               const Approximation* approx) {
  std::vector<Block> blocks;
  for (std::size_t p = 0; p < pb.predictors(); ++p) {
    Block b;
    b.name = slot_name(pb.s.predictors[p].slot);
    b.predictors = {p};
    const Eigen::Index d = pb.size(p);
    for (Eigen::Index j = 0; j < d; ++j) b.coef.push_back(pb.offset[p] + j);
    const Eigen::MatrixXd dtd = pb.design[p].transpose() * pb.design[p];
    Eigen::LDLT<Eigen::MatrixXd> ldlt(dtd);
    if (ldlt.info() != Eigen::Success || !(ldlt.vectorD().minCoeff() > 1e-12 * ldlt.vectorD().maxCoeff()))
      throw StructuralError("predictor " + b.name + ": design matrix is rank deficient (collinear covariates)");
    Eigen::MatrixXd cov = approx ? conditional_cov(approx->precision, b.coef)
                                 : Eigen::MatrixXd(init_scale[p] * ldlt.solve(Eigen::MatrixXd::Identity(d, d)));
    if (!set_proposal(b, cfg.proposal_scale * cov))
      throw NumericalError("predictor " + b.name + ": initial proposal covariance is not positive definite");
    b.target = d == 1 ? 0.40 : 0.25;
    blocks.push_back(std::move(b));
  }
  if (cfg.joint_margin_blocks) {
    for (int r : {1, 2}) {
      Block b;
      for (std::size_t p = 0; p < pb.predictors(); ++p) {
        if (pb.response[p] != r) continue;
        b.predictors.push_back(p);
        for (Eigen::Index j = 0; j < pb.size(p); ++j) b.coef.push_back(pb.offset[p] + j);
      }
      if (b.predictors.size() < 2) continue;
      b.name = "y" + std::to_string(r) + ".joint";
      b.active = approx != nullptr;
      if (approx) set_proposal(b, cfg.proposal_scale * conditional_cov(approx->precision, b.coef));
      blocks.push_back(std::move(b));
    }
  }
  if (approx && cfg.independence_move) {
    Block b;
    b.name = "independence";
    b.kind = Block::Kind::Independence;
    for (std::size_t p = 0; p < pb.predictors(); ++p) b.predictors.push_back(p);
    for (Eigen::Index j = 0; j < pb.k; ++j) b.coef.push_back(j);
    blocks.push_back(std::move(b));
  }
  return blocks;
}

// Re-estimates the random-walk proposals from burn-in draws in rows [from, to).
// The empirical covariance is pooled with the starting approximation (worth
// `prior_weight` draws) and each block gets its conditional covariance.
void update_proposals(std::vector<Block>& blocks, const Eigen::MatrixXd& history, Eigen::Index from, Eigen::Index to,
                      const Approximation* approx, double proposal_scale) {
  if (to - from < 20) return;
  Eigen::MatrixXd w = history.middleRows(from, to - from);
  const Eigen::RowVectorXd mean = w.colwise().mean();
  w.rowwise() -= mean;
  const double m = static_cast<double>(w.rows());
  Eigen::MatrixXd cov = (w.transpose() * w) / (m - 1.0);
  if (approx) {
    constexpr double prior_weight = 200.0;
    cov = (prior_weight * approx->cov + m * cov) / (prior_weight + m);
  }
  cov.diagonal().array() += 1e-10 * cov.diagonal().maxCoeff();
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success) return;
  const Eigen::MatrixXd precision = llt.solve(Eigen::MatrixXd::Identity(cov.rows(), cov.cols()));
  for (auto& b : blocks) {
    if (b.kind != Block::Kind::RandomWalk) continue;
    if (!set_proposal(b, proposal_scale * conditional_cov(precision, b.coef))) continue;
    b.log_scale = 0.0;
    b.adapt_steps = 0;
    b.active = true;
  }
}

struct ChainResult {
  Eigen::MatrixXd draws;
  std::vector<double> acceptance;
};

ChainResult run_chain(const Problem& pb, std::vector<Block> blocks, const Approximation* approx,
                      Eigen::VectorXd init, const McmcConfig& cfg, std::uint64_t seed, int chain_id) {
  Rng rng = make_rng(seed);
  if (approx) {
    Eigen::VectorXd z(pb.k);
    for (Eigen::Index j = 0; j < z.size(); ++j) z[j] = standard_normal(rng);
    init = approx->mode + cfg.init_dispersion * (approx->chol * z);
  } else if (chain_id > 0 && cfg.init_jitter > 0.0) {
    for (Eigen::Index off : pb.offset) init[off] += cfg.init_jitter * standard_normal(rng);
  }
  Chain chain(pb, init);
  if (!std::isfinite(chain.log_likelihood()))
    throw NumericalError("chain " + std::to_string(chain_id) +
                         ": initial values give a non-finite log-likelihood; shrink the coefficients towards "
                         "the prior mean or check the response standardization");

  const int burn = cfg.burn_in;
  const int thin = cfg.effective_thinning();
  const int kept = cfg.kept_per_chain();
  Eigen::MatrixXd history(burn, pb.k);
  ChainResult out;
  out.draws.resize(kept, pb.k);
  const std::array<int, 3> checkpoints{burn / 4, burn / 2, 3 * burn / 4};

  int row = 0;
  for (int it = 0; row < kept; ++it) {
    const bool adapting = it < burn;
    for (auto& b : blocks) {
      if (!b.active) continue;
      const bool acc = chain.step(b, approx, rng);
      if (adapting) {
        if (b.kind == Block::Kind::RandomWalk) {
          const double gamma = 0.5 / std::pow(1.0 + static_cast<double>(b.adapt_steps) / 10.0, 0.6);
          b.log_scale = std::clamp(b.log_scale + gamma * ((acc ? 1.0 : 0.0) - b.target), -15.0, 5.0);
          ++b.adapt_steps;
        }
      } else {
        ++b.proposed;
        b.accepted += acc ? 1 : 0;
      }
    }
    if (adapting) {
      history.row(it) = chain.beta().transpose();
      for (int cp : checkpoints)
        if (it + 1 == cp && cp > 0) update_proposals(blocks, history, cp / 2, cp, approx, cfg.proposal_scale);
    } else if ((it - burn + 1) % thin == 0) {
      out.draws.row(row++) = chain.beta().transpose();
    }
  }
  for (const auto& b : blocks)
    out.acceptance.push_back(b.proposed > 0 ? static_cast<double>(b.accepted) / static_cast<double>(b.proposed)
                                            : 0.0);
  return out;
}

}  // namespace

PosteriorSamples run_mcmc(const ModelStructure& structure, const Dataset& data, const PriorSpec& prior,
                          const McmcConfig& config) {
  structure.validate();
  data.validate();
  prior.validate();
  config.validate();
  if (data.covariate_names != structure.covariate_names)
    throw StructuralError("run_mcmc: dataset covariates do not match the model structure");

  const Problem pb(structure, data, prior);
  std::vector<double> init_scale;
  const Eigen::VectorXd init = moment_start(pb, init_scale);
  std::optional<Approximation> approx;
  if (config.laplace_start) approx = laplace_approximation(pb, init, config.independence_df);
  const Approximation* ap = approx ? &*approx : nullptr;
  const auto blocks = make_blocks(pb, init_scale, config, ap);

  PosteriorSamples out;
  out.labels = structure.coefficient_labels();
  out.structure = structure;
  out.config = config;
  out.approximation_used = ap != nullptr;
  for (const auto& b : blocks) out.block_names.push_back(b.name);
  for (int c = 0; c < config.n_chains; ++c)
    out.chain_seeds.push_back(derive_seed(config.seed, static_cast<std::uint64_t>(c)));

  std::vector<ChainResult> results(static_cast<std::size_t>(config.n_chains));
  std::vector<std::exception_ptr> errors(results.size());
  std::atomic<int> next{0};
  auto worker = [&] {
    for (int c = next++; c < config.n_chains; c = next++) {
      try {
        results[static_cast<std::size_t>(c)] =
            run_chain(pb, blocks, ap, init, config, out.chain_seeds[static_cast<std::size_t>(c)], c);
      } catch (...) {
        errors[static_cast<std::size_t>(c)] = std::current_exception();
      }
    }
  };
  const int n_threads = std::min(config.n_threads > 0 ? config.n_threads : config.n_chains, config.n_chains);
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  for (auto& r : results) {
    out.chains.push_back(std::move(r.draws));
    out.acceptance.push_back(std::move(r.acceptance));
  }
  out.validate();
  return out;
}

namespace detail {

double sampler_log_likelihood(const ModelStructure& structure, const Dataset& data, std::span<const double> beta) {
  const Problem pb(structure, data, PriorSpec{});
  Eigen::VectorXd b = Eigen::Map<const Eigen::VectorXd>(beta.data(), static_cast<Eigen::Index>(beta.size()));
  return Chain(pb, b).log_likelihood();
}

std::optional<std::vector<double>> posterior_mode(const ModelStructure& structure, const Dataset& data,
                                                  const PriorSpec& prior) {
  const Problem pb(structure, data, prior);
  std::vector<double> scale;
  const auto a = laplace_approximation(pb, moment_start(pb, scale), 10.0);
  if (!a) return std::nullopt;
  return std::vector<double>(a->mode.data(), a->mode.data() + a->mode.size());
}

}  // namespace detail

struct PointwiseEvaluator::Impl {
  ModelStructure structure;
  Dataset data;
  Problem pb;
  Impl(ModelStructure s, Dataset d) : structure(std::move(s)), data(std::move(d)), pb(structure, data, PriorSpec{}) {}
};

PointwiseEvaluator::PointwiseEvaluator(ModelStructure structure, Dataset data) {
  structure.validate();
  data.validate();
  impl_ = std::make_unique<Impl>(std::move(structure), std::move(data));
}

PointwiseEvaluator::~PointwiseEvaluator() = default;

Eigen::VectorXd PointwiseEvaluator::operator()(std::span<const double> beta) const {
  if (static_cast<Eigen::Index>(beta.size()) != impl_->pb.k)
    throw StructuralError("pointwise evaluator: coefficient vector has the wrong length");
  const Eigen::VectorXd b = Eigen::Map<const Eigen::VectorXd>(beta.data(), static_cast<Eigen::Index>(beta.size()));
  return impl_->pb.pointwise(impl_->pb.all_eta(b));
}

// Variable selection ----------------------------------------------------------

SelectionResult select_variables(const ModelStructure& start, const Dataset& data, const PriorSpec& prior,
                                 const McmcConfig& config, double level, int max_sweeps,
                                 const std::vector<ParameterSlot>& locked) {
  if (max_sweeps < 1) throw StructuralError("select_variables: max_sweeps must be at least 1");
  SelectionResult res;
  res.structure = start;
  for (int sweep = 1;; ++sweep) {
    McmcConfig cfg = config;
    cfg.seed = derive_seed(config.seed, 1000 + static_cast<std::uint64_t>(sweep));
    try {
      res.samples = run_mcmc(res.structure, data, prior, cfg);
    } catch (const NumericalError& e) {
      throw NumericalError("selection sweep " + std::to_string(sweep) + ": " + e.what());
    } catch (const DomainError& e) {
      throw DomainError("selection sweep " + std::to_string(sweep) + ": " + e.what());
    } catch (const StructuralError& e) {
      throw StructuralError("selection sweep " + std::to_string(sweep) + ": " + e.what());
    }
    res.sweeps = sweep;

    ModelStructure next = res.structure;
    std::vector<std::string> dropped;
    for (auto& pred : next.predictors) {
      if (std::find(locked.begin(), locked.end(), pred.slot) != locked.end()) continue;
      std::vector<std::size_t> keep;
      for (std::size_t c : pred.covariates) {
        const std::string label = slot_name(pred.slot) + ":" + next.covariate_names[c];
        const auto [lo, hi] = credible_interval(res.samples, label, level);
        if (lo <= 0.0 && hi >= 0.0) {
          dropped.push_back(label);
        } else {
          keep.push_back(c);
        }
      }
      pred.covariates = std::move(keep);
    }
    if (dropped.empty() || sweep >= max_sweeps) return res;
    res.dropped.push_back(std::move(dropped));
    res.structure = std::move(next);
  }
}

}  // namespace copreg
