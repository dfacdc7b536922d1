#pragma once

// Nuisance estimators eta_S, eta_A, eta_Y on the OS, g1 on the RCT, and the
// resulting bias estimate b1_hat = g1_hat - f1_hat.

#include <cstddef>
#include <optional>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "biasmech/analytic.hpp"
#include "biasmech/synthgen.hpp"

namespace biasmech {

enum class ModelKind { FrequencyTable, Logistic };
std::string_view to_string(ModelKind k);
// "freq", "frequency", "frequency_table", "logistic"
ModelKind parse_model_kind(std::string_view name);

struct ConditioningSpec {
  Channel target = Channel::Y;
  Population population = Population::OS;
  bool filter_s = false;  // keep rows with S = 1
  bool filter_a = false;  // keep rows with A = 1

  // The conditioning of the three estimators: S unfiltered, A on S=1, Y on S=1, A=1.
  static ConditioningSpec for_target(Channel target, Population population);
  void validate() const;
  bool admits(const Cohort& c, std::size_t i) const;
  // Target value of an admitted row.
  int label(const Cohort& c, std::size_t i) const;
  bool operator==(const ConditioningSpec&) const = default;
};

// Counts the rows whose target value an estimator consumed.
struct RowAudit {
  std::vector<std::size_t> rows;
};

struct FitOptions {
  double smoothing = 0.5;
  double l2 = 1.0;
  int max_iters = 100;
  double tol = 1e-8;
  RowAudit* audit = nullptr;
};

class FittedEstimator {
 public:
  ModelKind kind() const { return kind_; }
  const ConditioningSpec& conditioning() const { return cond_; }
  std::size_t dim() const { return d_; }
  std::size_t n_train() const { return n_train_; }

  double predict(std::span<const double> x) const;
  double predict(const Cohort& c, std::size_t i) const;
  // Frequency tables only.
  double predict_cell(CellIndex x) const;
  bool cell_unsupported(CellIndex x) const;
  std::vector<CellIndex> unsupported_cells() const;
  // Whether a row falls outside this estimator's training support.
  bool unsupported(const Cohort& c, std::size_t i) const;

  // Logistic only.
  const std::vector<double>& weights() const { return weights_; }
  double intercept() const { return intercept_; }
  bool converged() const { return converged_; }
  int iterations() const { return iterations_; }
  double gradient_norm() const { return grad_norm_; }

  nlohmann::json to_json() const;
  static FittedEstimator from_json(const nlohmann::json& j);
  bool operator==(const FittedEstimator&) const = default;

 private:
  friend FittedEstimator fit_frequency(const Cohort&, const ConditioningSpec&, double, RowAudit*);
  friend FittedEstimator fit_logistic(const Cohort&, const ConditioningSpec&, double, int, double,
                                      RowAudit*);

  ModelKind kind_ = ModelKind::FrequencyTable;
  ConditioningSpec cond_;
  std::size_t d_ = 0;
  std::size_t n_train_ = 0;
  double smoothing_ = 0;
  // frequency table
  std::vector<double> cell_mean_;
  std::vector<std::uint8_t> empty_;
  double fallback_ = 0;
  // logistic
  std::vector<double> weights_;
  double intercept_ = 0;
  bool converged_ = true;
  int iterations_ = 0;
  double grad_norm_ = 0;
};

// Per cell (k + smoothing) / (m + 2 smoothing); empty cells predict the raw
// global filtered mean and are flagged.
FittedEstimator fit_frequency(const Cohort& cohort, const ConditioningSpec& cond,
                              double smoothing = 0.5, RowAudit* audit = nullptr);

// L2-penalized logistic regression (intercept unpenalized), damped Newton.
// Converges when the mean-gradient max-norm drops below tol; otherwise the
// last iterate is returned with converged() == false.
FittedEstimator fit_logistic(const Cohort& cohort, const ConditioningSpec& cond, double l2 = 1.0,
                             int max_iters = 100, double tol = 1e-8, RowAudit* audit = nullptr);

FittedEstimator fit_nuisance(const Cohort& cohort, const ConditioningSpec& cond, ModelKind kind,
                             const FitOptions& opt = {});

struct BiasEstimate {
  FittedEstimator g1_hat;  // RCT, Y | S=1, A=1
  FittedEstimator f1_hat;  // OS,  Y | S=1, A=1

  double b1(std::span<const double> x) const { return g1_hat.predict(x) - f1_hat.predict(x); }
  double b1(const Cohort& c, std::size_t i) const { return b1(c.x(i)); }
  // The RCT fit has no support for this row's cell.
  bool positivity_flag(const Cohort& c, std::size_t i) const { return g1_hat.unsupported(c, i); }
};

BiasEstimate estimate_bias(const Cohort& rct, const Cohort& os, ModelKind kind,
                           const FitOptions& opt = {});

// Mean Bernoulli log-loss of an estimator on the admitted rows of a cohort.
double log_loss(const FittedEstimator& est, const Cohort& cohort);

}  // namespace biasmech
