#pragma once

// Closed-form bias functions and conditional moments, the exact-enumeration
// oracles that check them, and Monte-Carlo evaluation of the theoretical
// covariance signals Cov(|b1(X)|, V(T | X, .)).

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "biasmech/parallel.hpp"
#include "biasmech/synthgen.hpp"

namespace biasmech {

// The three downstream channels of the covariance signals.
enum class Channel : int { S = 0, A = 1, Y = 2 };
inline constexpr std::array<Channel, 3> kChannels = {Channel::S, Channel::A, Channel::Y};
std::string_view to_string(Channel c);

// --- Lemma-level bias expressions -------------------------------------------

// (pu_r1 - pu_r0)(py_u1 - py_u0).
double bias_transportability(double pu_r1, double pu_r0, double py_u1, double py_u0);
// (py_u1 - py_u0)(pa_u1 - pa_u0) / (2 (pa_u1 + pa_u0)); this orientation equals
// f1 - g1 at P(U=1|R) = 1/2.
double bias_confounding(double py_u1, double py_u0, double pa_u1, double pa_u0);
// Same algebra with the selection parameters in place of the treatment ones.
double bias_selection1(double py_u1, double py_u0, double ps_u1, double ps_u0);
// py1 (1 - ps_11 / (ps_11 py1 + ps_01 (1 - py1))), where ps_ya = P(S=1|Y=y,A=a).
double bias_selection2(double py1, double ps_11, double ps_01);

// All generative parameters that matter for a single covariate cell.
struct CellLaw {
  std::array<std::array<double, 2>, 4> p{};  // endpoints per Target
  double pu_rct = 0.5;
  double pu_os = 0.5;
  UModel u_model = UModel::Binary;

  const std::array<double, 2>& at(Target t) const { return p[static_cast<std::size_t>(t)]; }
};

CellLaw cell_law(const MechanismSpec& spec, const ProbabilityTables& tables, CellIndex x);

struct MomentEntry {
  double pS = 0, pA = 0, pY = 0;  // P(S=1|x), P(A=1|x,S=1), P(Y=1|x,S=1,A=1), all in the OS
  double vS = 0, vA = 0, vY = 0;  // Bernoulli variances p (1 - p)

  double probability(Channel c) const;
  double variance(Channel c) const;
};
MomentEntry make_moments(double pS, double pA, double pY);

struct BiasEntry {
  double g1 = 0;  // E[Y | x, R=1, S=1, A=1]
  double f1 = 0;  // E[Y | x, R=0, S=1, A=1]
  double b1 = 0;  // g1 - f1
};

struct BiasProfile {
  std::vector<BiasEntry> cells;
};

// Mechanism-specific closed forms. Combinations fall back to enumeration.
MomentEntry conditional_moments(const MechanismSpec& spec, const CellLaw& law);
MomentEntry conditional_moments(const MechanismSpec& spec, const ProbabilityTables& tables,
                                CellIndex x);
// Exact probability propagation over (u, a, y); ContinuousU integrates u on a
// 1025-point trapezoidal grid.
MomentEntry brute_force_moments(const MechanismSpec& spec, const CellLaw& law);
MomentEntry brute_force_moments(const MechanismSpec& spec, const ProbabilityTables& tables,
                                CellIndex x);

BiasEntry analytic_bias(const MechanismSpec& spec, const CellLaw& law);
BiasEntry brute_force_bias(const MechanismSpec& spec, const CellLaw& law);
BiasProfile analytic_bias_profile(const MechanismSpec& spec, const ProbabilityTables& tables);
BiasProfile brute_force_bias_profile(const MechanismSpec& spec, const ProbabilityTables& tables);

// Distribution of X in the OS restricted to the rows a channel is scored on
// (S: all rows, A: S=1, Y: S=1 and A=1).
std::vector<double> channel_cell_weights(const MechanismSpec& spec,
                                         const ProbabilityTables& tables, Channel channel);

// Cov(|b1(X)|, V(T | X, .)) under the OS covariate law of the channel.
double population_covariance(const MechanismSpec& spec, const ProbabilityTables& tables,
                             Channel channel);

// --- Monte-Carlo covariance signals ------------------------------------------

enum class SignalSign { Zero, Positive, Negative };
std::string_view to_string(SignalSign s);

struct TheoreticalSignals {
  std::array<double, 3> rho{};          // Pearson-normalized covariance per channel
  std::array<double, 3> se{};           // MC standard error of rho
  std::array<double, 3> covariance{};   // unnormalized covariance
  std::array<bool, 3> defined{};        // false when |b1| or V(T) is constant
  std::size_t mc_samples = 0;
  std::size_t shards = 0;

  double at(Channel c) const { return rho[static_cast<std::size_t>(c)]; }
  // Zero unless |rho| exceeds `k` MC standard errors. Undefined channels are zero.
  SignalSign sign(Channel c, double k = 3.0) const;
};

struct SignalQuery {
  std::vector<MechanismKind> components;
  std::optional<SelectionTable> selection_table;
};

// Every cell parameter is an independent F(p) draw (U-biased targets draw both
// endpoints, transportability draws both P(U=1|R=r)); the signals are the
// correlations of |b1| with the three conditional variances. Draws are split
// into `shards` independent sub-streams whose per-shard correlations give the
// standard error; the merged result does not depend on the execution mode.
TheoreticalSignals theoretical_signals(const SignalQuery& query, double p, std::size_t n_mc,
                                       std::uint64_t seed, Execution exec = Execution::Parallel,
                                       std::size_t shards = 64);

// Streaming co-moments for one |b| series against the three variance series.
struct CoMoments {
  double n = 0;
  double mean_b = 0, m2_b = 0;
  std::array<double, 3> mean_v{}, m2_v{}, c{};

  void add(double b, const std::array<double, 3>& v);
  void merge(const CoMoments& other);
  std::optional<double> correlation(std::size_t channel) const;
  double covariance(std::size_t channel) const;
};

}  // namespace biasmech
