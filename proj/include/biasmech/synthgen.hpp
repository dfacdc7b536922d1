#pragma once

// Synthetic RCT / OS cohort generation under the four bias mechanisms.
//
// A run draws one F(p) parameter, fills a ProbabilityTables object with
// per-cell Bernoulli parameters for S, A, Y^0 and Y^1, and then samples
// cohorts from it. Covariate cells are bit-vectors X in {0,1}^d encoded as
// integers (bit j holds X(j)).

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "biasmech/rng.hpp"

namespace biasmech {

using CellIndex = std::uint32_t;

inline constexpr std::size_t kMaxEnumerableDim = 20;

enum class Target : int { S = 0, A = 1, Y0 = 2, Y1 = 3 };
inline constexpr std::array<Target, 4> kAllTargets = {Target::S, Target::A, Target::Y0,
                                                       Target::Y1};

enum class MechanismKind { NoBias, Transportability, Confounding, SelectionType1, SelectionType2 };
inline constexpr std::array<MechanismKind, 5> kPureKinds = {
    MechanismKind::NoBias, MechanismKind::Transportability, MechanismKind::Confounding,
    MechanismKind::SelectionType1, MechanismKind::SelectionType2};

enum class UModel { Binary, Continuous };
enum class Population { RCT, OS };

std::string_view to_string(MechanismKind kind);
std::string_view to_string(Target t);
std::string_view to_string(UModel m);
std::string_view to_string(Population p);
// Accepts "confounding", "SelectionType1", "selection-1", "no_bias", ...
MechanismKind parse_mechanism_kind(std::string_view name);
UModel parse_u_model(std::string_view name);

// Uniform([0.1, p] U [1-p, 0.9]); p in (0.1, 0.5].
class FDistribution {
 public:
  explicit FDistribution(double p);

  double p() const { return p_; }
  double sample(Rng& rng) const;
  bool in_support(double v) const;

 private:
  double p_;
};

double sample_from_f(const FDistribution& dist, Rng& rng);

// P(S=1 | Y=y, A=a) for type-2 selection, stored in (y, a) order 00, 01, 10, 11.
struct SelectionTable {
  std::array<double, 4> p{};

  double at(int y, int a) const { return p[static_cast<std::size_t>(2 * y + a)]; }
  bool operator==(const SelectionTable&) const = default;

  // P(S=1|Y=1,A=1) = 0.9, all other combinations 0.1.
  static SelectionTable collider_default() { return {{0.1, 0.1, 0.1, 0.9}}; }
  static SelectionTable uniform(double v) { return {{v, v, v, v}}; }
};

struct UBiasFlags {
  std::array<bool, 4> flag{};

  bool operator[](Target t) const { return flag[static_cast<std::size_t>(t)]; }
  bool& operator[](Target t) { return flag[static_cast<std::size_t>(t)]; }
  bool any() const { return flag[0] || flag[1] || flag[2] || flag[3]; }
  bool operator==(const UBiasFlags&) const = default;
};

// Flags a pure mechanism sets on the downstream variables. Y^0 mirrors Y^1.
UBiasFlags flags_for(MechanismKind kind);

struct MechanismSpec {
  // One entry for a pure mechanism, several for a combination.
  std::vector<MechanismKind> components;
  UBiasFlags u_bias_flags;
  UModel u_model = UModel::Binary;
  // P(U=1 | X=x, R=r) per covariate cell (for ContinuousU: P(U >= 1/2 | x, r)).
  std::vector<double> p_u_rct;
  std::vector<double> p_u_os;
  std::optional<SelectionTable> selection_table;
  double f_param = 0.5;

  bool has(MechanismKind k) const;
  bool is_pure() const;
  // The single generating kind; throws ConfigError for combinations.
  MechanismKind kind() const;
  std::string label() const;
  // Checks the per-kind invariants against a d-dimensional cell space.
  void validate(std::size_t d) const;
};

// Builds a spec for the given mechanism(s). Transportability draws per-cell
// P(U=1|x,R) ~ F(f_param) independently for RCT and OS; every other
// mechanism keeps both at 1/2.
MechanismSpec make_mechanism(std::vector<MechanismKind> components, std::size_t d, UModel model,
                             double f_param, std::optional<SelectionTable> table, Rng& rng);

// Bernoulli parameters p^T_{x,u}. Each entry keeps the endpoint pair
// (value at u=0, value at u=1); for ContinuousU the realized parameter at
// U=u is the convex combination u*p1 + (1-u)*p0.
class ProbabilityTables {
 public:
  ProbabilityTables(std::size_t d, UModel model);

  std::size_t dim() const { return d_; }
  std::size_t cells() const { return std::size_t{1} << d_; }
  UModel u_model() const { return model_; }

  const std::array<double, 2>& endpoints(Target t, CellIndex x) const {
    return entries_[static_cast<std::size_t>(t)][x];
  }
  std::array<double, 2>& endpoints(Target t, CellIndex x) {
    return entries_[static_cast<std::size_t>(t)][x];
  }
  double at(Target t, CellIndex x, double u) const {
    const auto& e = endpoints(t, x);
    return e[0] + u * (e[1] - e[0]);
  }

 private:
  std::size_t d_;
  UModel model_;
  std::array<std::vector<std::array<double, 2>>, 4> entries_;
};

ProbabilityTables build_tables_binary(const MechanismSpec& spec, std::size_t d, Rng& rng);
ProbabilityTables build_tables_continuous(const MechanismSpec& spec, std::size_t d, Rng& rng);
ProbabilityTables build_tables(const MechanismSpec& spec, std::size_t d, Rng& rng);

// Raw moments E[U], E[U^2], E[U^3] of the latent law given P(U=1|x,R) = m.
// Binary: U ~ Bernoulli(m). Continuous: U ~ Uniform[1/2, 1) with
// probability m and Uniform[0, 1/2) otherwise, which is Uniform(0, 1) at m = 1/2.
struct ULaw {
  double m1, m2, m3;
};
ULaw u_law(UModel model, double p_u);
double sample_u(UModel model, double p_u, Rng& rng);

// Each coordinate is Bernoulli(0.4) in the RCT and Bernoulli(0.6) in the OS.
std::vector<CellIndex> sample_covariates(std::size_t n, Population population, std::size_t d,
                                         Rng& rng);

// Columns hidden from estimators: U and the unmasked A / Y of unselected rows.
struct LatentColumns {
  std::vector<double> u;
  std::vector<std::uint8_t> a;
  std::vector<std::uint8_t> y;
};

enum class CovariateType { Binary, Continuous };

// Row store of (r, x, s, a, y). A and Y are observable only when S = 1; the
// default accessors return the masked view. Synthetic cohorts additionally
// keep LatentColumns reachable through oracle_view().
class Cohort {
 public:
  Cohort(Population population, std::size_t d, CovariateType type = CovariateType::Binary);

  std::size_t size() const { return s_.size(); }
  std::size_t dim() const { return d_; }
  Population population() const { return population_; }
  CovariateType covariate_type() const { return type_; }
  int r() const { return population_ == Population::RCT ? 1 : 0; }

  // Appends an observed row. Throws DataError when a / y availability
  // disagrees with s, or when values are not binary.
  void add_row(std::span<const double> x, int s, std::optional<int> a, std::optional<int> y);

  int s(std::size_t i) const { return s_[i]; }
  std::optional<int> a(std::size_t i) const {
    return a_[i] < 0 ? std::nullopt : std::optional<int>(a_[i]);
  }
  std::optional<int> y(std::size_t i) const {
    return y_[i] < 0 ? std::nullopt : std::optional<int>(y_[i]);
  }
  std::span<const double> x(std::size_t i) const {
    return {x_.data() + i * d_, d_};
  }
  // Integer cell code of a binary row.
  CellIndex cell(std::size_t i) const { return cells_[i]; }

  bool has_latent() const { return latent_.has_value(); }
  // Full latent truth; throws std::logic_error for ingested cohorts.
  const LatentColumns& oracle_view() const;

  // Copy without the latent columns.
  Cohort masked() const;
  // Rows [begin, end) in order, latent columns included.
  Cohort slice(std::size_t begin, std::size_t end) const;
  Cohort subset(std::span<const std::size_t> rows) const;

  bool operator==(const Cohort& other) const;

 private:
  friend Cohort generate_cohort(const ProbabilityTables&, const MechanismSpec&, Population,
                                std::size_t, Rng&);
  void push_binary_row(CellIndex cell, int s, int a, int y);

  Population population_;
  std::size_t d_;
  CovariateType type_;
  std::vector<double> x_;
  std::vector<CellIndex> cells_;
  std::vector<std::int8_t> s_, a_, y_;
  std::optional<LatentColumns> latent_;
};

// Samples n rows of the given population. RCT rows have S = 1 and
// A ~ Bernoulli(1/2); OS rows follow the mechanism's generative law.
Cohort generate_cohort(const ProbabilityTables& tables, const MechanismSpec& spec,
                       Population population, std::size_t n, Rng& rng);

// P(S=1 | x, u, y, a) under the spec's generative law.
double selection_probability(const ProbabilityTables& tables, const MechanismSpec& spec,
                             CellIndex x, double u, int y, int a);

}  // namespace biasmech
