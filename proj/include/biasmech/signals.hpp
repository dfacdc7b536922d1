#pragma once

// Sample covariance signals between |b1_hat| and the squared residuals of the
// nuisance estimators, their Pearson significance, and the mechanism verdict.

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "biasmech/analytic.hpp"
#include "biasmech/errors.hpp"
#include "biasmech/nuisance.hpp"
#include "biasmech/parallel.hpp"

namespace biasmech {

inline constexpr double kPValueFloor = 1e-5;

// Correlation of a constant vector was requested.
class UndefinedCorrelation : public EstimationError {
 public:
  using EstimationError::EstimationError;
};

// n/(n-1) [ (1/n) sum_i |b_i| (T_i - eta_i)^2 - (1/n^2) sum_i sum_j |b_i| (T_j - eta_i)^2 ],
// with the inner sum expanded so the cost is O(n).
double covariance_estimate(std::span<const double> bias_abs, std::span<const double> targets,
                           std::span<const double> preds, Execution exec = Execution::Serial);
// Literal double sum; O(n^2) reference for the expansion above.
double covariance_estimate_naive(std::span<const double> bias_abs,
                                 std::span<const double> targets, std::span<const double> preds);

struct PearsonResult {
  double r = 0;
  double p_value = 1;
};

struct PearsonOptions {
  std::size_t permutations = 0;  // 0: t-test; otherwise a permutation p-value
  std::uint64_t seed = 0;
};

// Two-sided test of r against Student t with n-2 degrees of freedom, p
// clipped below at 1e-5. Throws UndefinedCorrelation on constant input.
PearsonResult pearson_signal(std::span<const double> bias_abs, std::span<const double> sq_errors,
                             const PearsonOptions& opt = {});
// Two-sided t-test p-value of a correlation r over n pairs (unclipped).
double pearson_p_value(double r, std::size_t n);

struct SignalChannel {
  Channel target = Channel::S;
  std::size_t n_used = 0;
  double cov_hat = 0;
  double pearson_r = 0;
  double p_value = 1;
  bool defined = true;

  SignalSign sign(double alpha) const;
};

enum class Verdict {
  NoBias,
  Transportability,
  Confounding,
  SelectionType1,
  SelectionType2,
  Indeterminate
};
std::string_view to_string(Verdict v);
Verdict parse_verdict(std::string_view name);
// The verdict a correct diagnosis of a pure mechanism returns.
Verdict expected_verdict(MechanismKind kind);

// Table-1 decision list over (S, A, Y) significance and signs. An undefined
// channel makes the verdict Indeterminate.
Verdict classify(const std::array<SignalChannel, 3>& channels, double alpha);

struct SignalReport {
  std::array<SignalChannel, 3> channels{};
  double alpha = 0.01;
  Verdict verdict = Verdict::Indeterminate;
  std::vector<std::string> flags;

  const SignalChannel& at(Channel c) const { return channels[static_cast<std::size_t>(c)]; }
  SignalSign sign(Channel c) const { return at(c).sign(alpha); }
  nlohmann::json to_json() const;
  bool operator==(const SignalReport& o) const;
};

struct Nuisances {
  FittedEstimator eta_s, eta_a, eta_y;

  const FittedEstimator& at(Channel c) const {
    return c == Channel::S ? eta_s : (c == Channel::A ? eta_a : eta_y);
  }
};

Nuisances fit_nuisances(const Cohort& os_train, ModelKind kind, const FitOptions& opt = {});

struct ScoreOptions {
  double alpha = 0.01;
  PearsonOptions pearson;
  Execution exec = Execution::Serial;
};

// Scores the OS validation rows: channel S on every row, A on S=1, Y on S=1, A=1.
SignalReport score_signals(const BiasEstimate& bias, const Nuisances& eta, const Cohort& os_val,
                           const ScoreOptions& opt = {});

}  // namespace biasmech
