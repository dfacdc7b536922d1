#include "biasmech/nuisance.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

#include "biasmech/errors.hpp"

namespace biasmech {

namespace {

CellIndex cell_of(std::span<const double> x) {
  CellIndex cell = 0;
  for (std::size_t j = 0; j < x.size(); ++j) {
    if (x[j] != 0.0) cell |= CellIndex{1} << j;
  }
  return cell;
}

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

void check_population(const Cohort& cohort, const ConditioningSpec& cond) {
  cond.validate();
  if (cohort.population() != cond.population) {
    throw ConfigError("estimator conditioned on " + std::string(to_string(cond.population)) +
                      " but cohort is " + std::string(to_string(cohort.population())));
  }
}

}  // namespace

std::string_view to_string(ModelKind k) {
  return k == ModelKind::FrequencyTable ? "freq" : "logistic";
}

ModelKind parse_model_kind(std::string_view name) {
  if (name == "freq" || name == "frequency" || name == "frequency_table" ||
      name == "FrequencyTable")
    return ModelKind::FrequencyTable;
  if (name == "logistic" || name == "Logistic") return ModelKind::Logistic;
  throw ConfigError("unknown model kind '" + std::string(name) + "'");
}

ConditioningSpec ConditioningSpec::for_target(Channel target, Population population) {
  return {target, population, target != Channel::S, target == Channel::Y};
}

void ConditioningSpec::validate() const {
  const ConditioningSpec want = for_target(target, population);
  if (filter_s != want.filter_s || filter_a != want.filter_a) {
    throw ConfigError("conditioning filters do not match the target " +
                      std::string(to_string(target)));
  }
}

bool ConditioningSpec::admits(const Cohort& c, std::size_t i) const {
  if (filter_s && c.s(i) != 1) return false;
  if (filter_a && c.a(i) != 1) return false;
  return true;
}

int ConditioningSpec::label(const Cohort& c, std::size_t i) const {
  switch (target) {
    case Channel::S: return c.s(i);
    case Channel::A: return *c.a(i);
    case Channel::Y: return *c.y(i);
  }
  return 0;
}

FittedEstimator fit_frequency(const Cohort& cohort, const ConditioningSpec& cond, double smoothing,
                              RowAudit* audit) {
  check_population(cohort, cond);
  if (cohort.covariate_type() != CovariateType::Binary) {
    throw ConfigError("frequency estimator needs binary covariates; use the logistic model");
  }
  if (smoothing < 0) throw ConfigError("smoothing must be non-negative");
  const std::size_t cells = std::size_t{1} << cohort.dim();
  std::vector<double> k(cells, 0.0), m(cells, 0.0);
  double k_all = 0, m_all = 0;
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    if (!cond.admits(cohort, i)) continue;
    if (audit) audit->rows.push_back(i);
    const CellIndex x = cohort.cell(i);
    const int t = cond.label(cohort, i);
    k[x] += t;
    m[x] += 1;
    k_all += t;
    m_all += 1;
  }
  if (m_all == 0) throw EstimationError("no rows left after filtering for the estimator");

  FittedEstimator est;
  est.kind_ = ModelKind::FrequencyTable;
  est.cond_ = cond;
  est.d_ = cohort.dim();
  est.n_train_ = static_cast<std::size_t>(m_all);
  est.smoothing_ = smoothing;
  est.fallback_ = k_all / m_all;
  est.cell_mean_.resize(cells);
  est.empty_.resize(cells);
  for (std::size_t x = 0; x < cells; ++x) {
    if (m[x] == 0) {
      est.cell_mean_[x] = est.fallback_;
      est.empty_[x] = 1;
    } else {
      est.cell_mean_[x] = (k[x] + smoothing) / (m[x] + 2.0 * smoothing);
    }
  }
  return est;
}

FittedEstimator fit_logistic(const Cohort& cohort, const ConditioningSpec& cond, double l2,
                             int max_iters, double tol, RowAudit* audit) {
  check_population(cohort, cond);
  if (l2 < 0) throw ConfigError("l2 must be non-negative");
  if (max_iters < 1) throw ConfigError("max_iters must be positive");
  const std::size_t d = cohort.dim();
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    if (cond.admits(cohort, i)) rows.push_back(i);
  }
  const auto n = static_cast<Eigen::Index>(rows.size());
  Eigen::MatrixXd X(n, static_cast<Eigen::Index>(d) + 1);
  Eigen::VectorXd y(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const std::size_t i = rows[static_cast<std::size_t>(r)];
    if (audit) audit->rows.push_back(i);
    X(r, 0) = 1.0;
    const auto xi = cohort.x(i);
    for (std::size_t j = 0; j < d; ++j) X(r, static_cast<Eigen::Index>(j) + 1) = xi[j];
    y(r) = cond.label(cohort, i);
  }
  if (n == 0) throw EstimationError("no rows left after filtering for the estimator");
  const double pos = y.sum();
  if (pos == 0 || pos == static_cast<double>(n)) {
    throw EstimationError("logistic fit needs both positive and negative examples");
  }

  const Eigen::Index k = X.cols();
  Eigen::VectorXd penalty = Eigen::VectorXd::Constant(k, l2);
  penalty(0) = 0.0;
  auto objective = [&](const Eigen::VectorXd& beta) {
    const Eigen::VectorXd z = X * beta;
    double nll = 0;
    for (Eigen::Index r = 0; r < n; ++r) {
      // log(1 + e^z) - y z, computed stably
      const double zr = z(r);
      nll += (zr > 0 ? zr + std::log1p(std::exp(-zr)) : std::log1p(std::exp(zr))) - y(r) * zr;
    }
    return nll + 0.5 * beta.cwiseProduct(penalty).dot(beta);
  };

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(k);
  beta(0) = std::log(pos / (static_cast<double>(n) - pos));
  double f = objective(beta);
  bool converged = false;
  int it = 0;
  double gnorm = 0;
  for (; it < max_iters; ++it) {
    const Eigen::VectorXd z = X * beta;
    Eigen::VectorXd p(n), w(n);
    for (Eigen::Index r = 0; r < n; ++r) {
      p(r) = sigmoid(z(r));
      w(r) = std::max(p(r) * (1.0 - p(r)), 1e-12);
    }
    const Eigen::VectorXd grad = X.transpose() * (p - y) + penalty.cwiseProduct(beta);
    gnorm = grad.lpNorm<Eigen::Infinity>() / static_cast<double>(n);
    if (gnorm < tol) {
      converged = true;
      break;
    }
    Eigen::MatrixXd H = X.transpose() * w.asDiagonal() * X;
    H.diagonal() += penalty;
    H.diagonal().array() += 1e-10;
    const Eigen::VectorXd step = H.ldlt().solve(grad);
    double t = 1.0;
    Eigen::VectorXd next = beta - step;
    double f_next = objective(next);
    while (f_next > f && t > 1e-8) {
      t *= 0.5;
      next = beta - t * step;
      f_next = objective(next);
    }
    if (f_next > f) break;
    beta = next;
    f = f_next;
  }

  FittedEstimator est;
  est.kind_ = ModelKind::Logistic;
  est.cond_ = cond;
  est.d_ = d;
  est.n_train_ = rows.size();
  est.intercept_ = beta(0);
  est.weights_.assign(beta.data() + 1, beta.data() + k);
  est.converged_ = converged;
  est.iterations_ = it;
  est.grad_norm_ = gnorm;
  return est;
}

FittedEstimator fit_nuisance(const Cohort& cohort, const ConditioningSpec& cond, ModelKind kind,
                             const FitOptions& opt) {
  if (kind == ModelKind::FrequencyTable) return fit_frequency(cohort, cond, opt.smoothing, opt.audit);
  return fit_logistic(cohort, cond, opt.l2, opt.max_iters, opt.tol, opt.audit);
}

double FittedEstimator::predict_cell(CellIndex x) const {
  if (kind_ != ModelKind::FrequencyTable) {
    std::vector<double> v(d_);
    for (std::size_t j = 0; j < d_; ++j) v[j] = (x >> j) & 1U ? 1.0 : 0.0;
    return predict(v);
  }
  return cell_mean_.at(x);
}

double FittedEstimator::predict(std::span<const double> x) const {
  if (x.size() != d_) throw DataError("covariate dimension does not match the estimator");
  if (kind_ == ModelKind::FrequencyTable) return cell_mean_[cell_of(x)];
  double z = intercept_;
  for (std::size_t j = 0; j < d_; ++j) z += weights_[j] * x[j];
  return sigmoid(z);
}

double FittedEstimator::predict(const Cohort& c, std::size_t i) const {
  if (kind_ == ModelKind::FrequencyTable && c.covariate_type() == CovariateType::Binary &&
      c.dim() == d_)
    return cell_mean_[c.cell(i)];
  return predict(c.x(i));
}

bool FittedEstimator::cell_unsupported(CellIndex x) const {
  return kind_ == ModelKind::FrequencyTable && empty_.at(x) != 0;
}

std::vector<CellIndex> FittedEstimator::unsupported_cells() const {
  std::vector<CellIndex> out;
  for (std::size_t x = 0; x < empty_.size(); ++x) {
    if (empty_[x]) out.push_back(static_cast<CellIndex>(x));
  }
  return out;
}

bool FittedEstimator::unsupported(const Cohort& c, std::size_t i) const {
  if (kind_ != ModelKind::FrequencyTable) return false;
  return empty_[c.covariate_type() == CovariateType::Binary ? c.cell(i) : cell_of(c.x(i))] != 0;
}

nlohmann::json FittedEstimator::to_json() const {
  nlohmann::json j;
  j["model_kind"] = to_string(kind_);
  j["target"] = to_string(cond_.target);
  j["population"] = to_string(cond_.population);
  j["filters"] = {{"S", cond_.filter_s}, {"A", cond_.filter_a}};
  j["d"] = d_;
  j["n_train"] = n_train_;
  if (kind_ == ModelKind::FrequencyTable) {
    j["smoothing"] = smoothing_;
    j["fallback"] = fallback_;
    j["cell_mean"] = cell_mean_;
    j["unsupported_cells"] = unsupported_cells();
  } else {
    j["intercept"] = intercept_;
    j["weights"] = weights_;
    j["converged"] = converged_;
    j["iterations"] = iterations_;
    j["gradient_norm"] = grad_norm_;
  }
  return j;
}

FittedEstimator FittedEstimator::from_json(const nlohmann::json& j) {
  try {
    FittedEstimator est;
    est.kind_ = parse_model_kind(j.at("model_kind").get<std::string>());
    const std::string target = j.at("target").get<std::string>();
    est.cond_.target = target == "S" ? Channel::S : (target == "A" ? Channel::A : Channel::Y);
    est.cond_.population = j.at("population").get<std::string>() == "RCT" ? Population::RCT
                                                                           : Population::OS;
    est.cond_.filter_s = j.at("filters").at("S").get<bool>();
    est.cond_.filter_a = j.at("filters").at("A").get<bool>();
    est.cond_.validate();
    est.d_ = j.at("d").get<std::size_t>();
    est.n_train_ = j.at("n_train").get<std::size_t>();
    if (est.kind_ == ModelKind::FrequencyTable) {
      est.smoothing_ = j.at("smoothing").get<double>();
      est.fallback_ = j.at("fallback").get<double>();
      est.cell_mean_ = j.at("cell_mean").get<std::vector<double>>();
      if (est.cell_mean_.size() != (std::size_t{1} << est.d_)) {
        throw DataError("cell_mean has the wrong length");
      }
      est.empty_.assign(est.cell_mean_.size(), 0);
      for (auto x : j.at("unsupported_cells").get<std::vector<CellIndex>>()) est.empty_.at(x) = 1;
    } else {
      est.intercept_ = j.at("intercept").get<double>();
      est.weights_ = j.at("weights").get<std::vector<double>>();
      if (est.weights_.size() != est.d_) throw DataError("weights have the wrong length");
      est.converged_ = j.at("converged").get<bool>();
      est.iterations_ = j.at("iterations").get<int>();
      est.grad_norm_ = j.at("gradient_norm").get<double>();
    }
    return est;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed estimator record: ") + e.what());
  }
}

BiasEstimate estimate_bias(const Cohort& rct, const Cohort& os, ModelKind kind,
                           const FitOptions& opt) {
  if (rct.dim() != os.dim()) throw DataError("RCT and OS cohorts differ in covariate dimension");
  return {fit_nuisance(rct, ConditioningSpec::for_target(Channel::Y, Population::RCT), kind, opt),
          fit_nuisance(os, ConditioningSpec::for_target(Channel::Y, Population::OS), kind, opt)};
}

double log_loss(const FittedEstimator& est, const Cohort& cohort) {
  double total = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    if (!est.conditioning().admits(cohort, i)) continue;
    const double p = std::clamp(est.predict(cohort, i), 1e-15, 1.0 - 1e-15);
    total -= est.conditioning().label(cohort, i) == 1 ? std::log(p) : std::log1p(-p);
    ++n;
  }
  if (n == 0) throw EstimationError("no admitted rows to score");
  return total / static_cast<double>(n);
}

}  // namespace biasmech
