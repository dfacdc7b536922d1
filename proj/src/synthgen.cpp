#include "biasmech/synthgen.hpp"

#include <algorithm>
#include <cctype>
#include <stdexcept>

#include "biasmech/errors.hpp"

namespace biasmech {

namespace {

std::string normalize_name(std::string_view name) {
  std::string out;
  for (char c : name) {
    if (std::isalnum(static_cast<unsigned char>(c))) {
      out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  return out;
}

void check_dim(std::size_t d) {
  if (d > kMaxEnumerableDim) {
    throw CapacityError("covariate dimension " + std::to_string(d) + " exceeds the cap of " +
                        std::to_string(kMaxEnumerableDim) + " enumerable bits");
  }
}

// Algorithm 1 and Algorithm 2 share the same draw order: p0 for every target,
// then p1 only when the target is U-biased.
ProbabilityTables fill_tables(const MechanismSpec& spec, std::size_t d, UModel model, Rng& rng) {
  check_dim(d);
  const FDistribution f(spec.f_param);
  ProbabilityTables tables(d, model);
  for (CellIndex x = 0; x < tables.cells(); ++x) {
    for (Target t : kAllTargets) {
      auto& e = tables.endpoints(t, x);
      e[0] = f.sample(rng);
      e[1] = spec.u_bias_flags[t] ? f.sample(rng) : e[0];
    }
  }
  return tables;
}

}  // namespace

std::string_view to_string(MechanismKind kind) {
  switch (kind) {
    case MechanismKind::NoBias: return "NoBias";
    case MechanismKind::Transportability: return "Transportability";
    case MechanismKind::Confounding: return "Confounding";
    case MechanismKind::SelectionType1: return "SelectionType1";
    case MechanismKind::SelectionType2: return "SelectionType2";
  }
  return "?";
}

std::string_view to_string(Target t) {
  switch (t) {
    case Target::S: return "S";
    case Target::A: return "A";
    case Target::Y0: return "Y0";
    case Target::Y1: return "Y1";
  }
  return "?";
}

std::string_view to_string(UModel m) { return m == UModel::Binary ? "binary" : "continuous"; }

std::string_view to_string(Population p) { return p == Population::RCT ? "RCT" : "OS"; }

MechanismKind parse_mechanism_kind(std::string_view name) {
  const std::string n = normalize_name(name);
  if (n == "nobias" || n == "none") return MechanismKind::NoBias;
  if (n == "transportability" || n == "transport") return MechanismKind::Transportability;
  if (n == "confounding") return MechanismKind::Confounding;
  if (n == "selectiontype1" || n == "selection1" || n == "sel1" || n == "selectionbias1")
    return MechanismKind::SelectionType1;
  if (n == "selectiontype2" || n == "selection2" || n == "sel2" || n == "selectionbias2" ||
      n == "collider")
    return MechanismKind::SelectionType2;
  throw ConfigError("unknown mechanism '" + std::string(name) + "'");
}

UModel parse_u_model(std::string_view name) {
  const std::string n = normalize_name(name);
  if (n == "binary" || n == "binaryu") return UModel::Binary;
  if (n == "continuous" || n == "continuousu") return UModel::Continuous;
  throw ConfigError("unknown u_model '" + std::string(name) + "'");
}

FDistribution::FDistribution(double p) : p_(p) {
  if (!(p > 0.1 && p <= 0.5)) {
    throw ConfigError("F(p) parameter must lie in (0.1, 0.5], got " + std::to_string(p));
  }
}

double FDistribution::sample(Rng& rng) const {
  const double band = p_ - 0.1;
  const double v = rng.uniform() * 2.0 * band;
  return v < band ? 0.1 + v : (1.0 - p_) + (v - band);
}

bool FDistribution::in_support(double v) const {
  return (v >= 0.1 && v <= p_) || (v >= 1.0 - p_ && v <= 0.9);
}

double sample_from_f(const FDistribution& dist, Rng& rng) { return dist.sample(rng); }

UBiasFlags flags_for(MechanismKind kind) {
  UBiasFlags f;
  switch (kind) {
    case MechanismKind::NoBias:
    case MechanismKind::SelectionType2:
      break;
    case MechanismKind::Transportability:
      f[Target::Y0] = f[Target::Y1] = true;
      break;
    case MechanismKind::Confounding:
      f[Target::A] = f[Target::Y0] = f[Target::Y1] = true;
      break;
    case MechanismKind::SelectionType1:
      f[Target::S] = f[Target::Y0] = f[Target::Y1] = true;
      break;
  }
  return f;
}

bool MechanismSpec::has(MechanismKind k) const {
  return std::find(components.begin(), components.end(), k) != components.end();
}

bool MechanismSpec::is_pure() const { return components.size() == 1; }

MechanismKind MechanismSpec::kind() const {
  if (!is_pure()) throw ConfigError("mechanism '" + label() + "' is a combination");
  return components.front();
}

std::string MechanismSpec::label() const {
  std::string out;
  for (MechanismKind k : components) {
    if (!out.empty()) out += '+';
    out += to_string(k);
  }
  return out;
}

void MechanismSpec::validate(std::size_t d) const {
  check_dim(d);
  const std::size_t cells = std::size_t{1} << d;
  if (components.empty()) throw ConfigError("mechanism has no components");
  (void)FDistribution(f_param);
  if (p_u_rct.size() != cells || p_u_os.size() != cells) {
    throw ConfigError("P(U|X,R) tables do not cover the " + std::to_string(cells) + " cells");
  }
  auto in_unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!std::all_of(p_u_rct.begin(), p_u_rct.end(), in_unit) ||
      !std::all_of(p_u_os.begin(), p_u_os.end(), in_unit)) {
    throw ConfigError("P(U|X,R) entries must lie in [0, 1]");
  }
  if (has(MechanismKind::SelectionType2)) {
    if (!selection_table) throw ConfigError("SelectionType2 requires a selection table");
    if (!std::all_of(selection_table->p.begin(), selection_table->p.end(), in_unit)) {
      throw ConfigError("selection table entries must lie in [0, 1]");
    }
  }
  UBiasFlags expected;
  for (MechanismKind k : components) {
    const UBiasFlags f = flags_for(k);
    for (std::size_t t = 0; t < 4; ++t) expected.flag[t] = expected.flag[t] || f.flag[t];
  }
  if (expected != u_bias_flags) {
    throw ConfigError("U-bias flags are inconsistent with mechanism '" + label() + "'");
  }
  if (has(MechanismKind::Transportability)) {
    for (std::size_t x = 0; x < cells; ++x) {
      if (p_u_rct[x] == p_u_os[x]) {
        throw ConfigError("transportability requires P(U|x,R=1) != P(U|x,R=0) in every cell");
      }
    }
  }
}

MechanismSpec make_mechanism(std::vector<MechanismKind> components, std::size_t d, UModel model,
                             double f_param, std::optional<SelectionTable> table, Rng& rng) {
  check_dim(d);
  std::vector<MechanismKind> kinds;
  for (MechanismKind k : components) {
    if (k != MechanismKind::NoBias && std::find(kinds.begin(), kinds.end(), k) == kinds.end()) {
      kinds.push_back(k);
    }
  }
  if (kinds.empty()) kinds.push_back(MechanismKind::NoBias);

  MechanismSpec spec;
  spec.components = std::move(kinds);
  spec.u_model = model;
  spec.f_param = f_param;
  for (MechanismKind k : spec.components) {
    const UBiasFlags f = flags_for(k);
    for (std::size_t t = 0; t < 4; ++t) {
      spec.u_bias_flags.flag[t] = spec.u_bias_flags.flag[t] || f.flag[t];
    }
  }
  const std::size_t cells = std::size_t{1} << d;
  if (spec.has(MechanismKind::Transportability)) {
    const FDistribution f(f_param);
    spec.p_u_rct.resize(cells);
    spec.p_u_os.resize(cells);
    for (std::size_t x = 0; x < cells; ++x) {
      spec.p_u_rct[x] = f.sample(rng);
      spec.p_u_os[x] = f.sample(rng);
    }
  } else {
    spec.p_u_rct.assign(cells, 0.5);
    spec.p_u_os.assign(cells, 0.5);
  }
  if (spec.has(MechanismKind::SelectionType2)) spec.selection_table = table;
  spec.validate(d);
  return spec;
}

ProbabilityTables::ProbabilityTables(std::size_t d, UModel model) : d_(d), model_(model) {
  check_dim(d);
  for (auto& e : entries_) e.assign(cells(), {0.5, 0.5});
}

ProbabilityTables build_tables_binary(const MechanismSpec& spec, std::size_t d, Rng& rng) {
  if (spec.u_model != UModel::Binary) throw ConfigError("spec is not a binary-U model");
  return fill_tables(spec, d, UModel::Binary, rng);
}

ProbabilityTables build_tables_continuous(const MechanismSpec& spec, std::size_t d, Rng& rng) {
  if (spec.u_model != UModel::Continuous) throw ConfigError("spec is not a continuous-U model");
  return fill_tables(spec, d, UModel::Continuous, rng);
}

ProbabilityTables build_tables(const MechanismSpec& spec, std::size_t d, Rng& rng) {
  return spec.u_model == UModel::Binary ? build_tables_binary(spec, d, rng)
                                        : build_tables_continuous(spec, d, rng);
}

ULaw u_law(UModel model, double p_u) {
  if (model == UModel::Binary) return {p_u, p_u, p_u};
  return {0.25 + 0.5 * p_u, (1.0 + 6.0 * p_u) / 12.0, (1.0 + 14.0 * p_u) / 32.0};
}

double sample_u(UModel model, double p_u, Rng& rng) {
  if (model == UModel::Binary) return rng.bernoulli(p_u) ? 1.0 : 0.0;
  const bool upper = rng.bernoulli(p_u);
  return 0.5 * (upper ? 1.0 : 0.0) + 0.5 * rng.uniform();
}

std::vector<CellIndex> sample_covariates(std::size_t n, Population population, std::size_t d,
                                         Rng& rng) {
  check_dim(d);
  const double p = population == Population::RCT ? 0.4 : 0.6;
  std::vector<CellIndex> out(n, 0);
  for (auto& cell : out) {
    for (std::size_t j = 0; j < d; ++j) {
      if (rng.bernoulli(p)) cell |= CellIndex{1} << j;
    }
  }
  return out;
}

double selection_probability(const ProbabilityTables& tables, const MechanismSpec& spec,
                             CellIndex x, double u, int y, int a) {
  if (!spec.has(MechanismKind::SelectionType2)) return tables.at(Target::S, x, u);
  if (!spec.selection_table) throw ConfigError("SelectionType2 requires a selection table");
  const double collider = spec.selection_table->at(y, a);
  // Combined with type-1 selection, both filters must admit the row.
  return spec.u_bias_flags[Target::S] ? collider * tables.at(Target::S, x, u) : collider;
}

Cohort::Cohort(Population population, std::size_t d, CovariateType type)
    : population_(population), d_(d), type_(type) {
  if (type == CovariateType::Binary) check_dim(d);
}

void Cohort::add_row(std::span<const double> x, int s, std::optional<int> a,
                     std::optional<int> y) {
  if (x.size() != d_) {
    throw DataError("row has " + std::to_string(x.size()) + " covariates, expected " +
                    std::to_string(d_));
  }
  auto binary = [](int v) { return v == 0 || v == 1; };
  if (!binary(s)) throw DataError("s must be 0 or 1");
  if (s == 1 && (!a || !y)) throw DataError("a and y must be present when s = 1");
  if (s == 0 && (a || y)) throw DataError("a and y must be empty when s = 0");
  if ((a && !binary(*a)) || (y && !binary(*y))) throw DataError("a and y must be 0 or 1");
  CellIndex cell = 0;
  if (type_ == CovariateType::Binary) {
    for (std::size_t j = 0; j < d_; ++j) {
      if (x[j] != 0.0 && x[j] != 1.0) throw DataError("binary covariate must be 0 or 1");
      if (x[j] == 1.0) cell |= CellIndex{1} << j;
    }
    cells_.push_back(cell);
  }
  x_.insert(x_.end(), x.begin(), x.end());
  s_.push_back(static_cast<std::int8_t>(s));
  a_.push_back(static_cast<std::int8_t>(a ? *a : -1));
  y_.push_back(static_cast<std::int8_t>(y ? *y : -1));
}

void Cohort::push_binary_row(CellIndex cell, int s, int a, int y) {
  cells_.push_back(cell);
  for (std::size_t j = 0; j < d_; ++j) x_.push_back((cell >> j) & 1U ? 1.0 : 0.0);
  s_.push_back(static_cast<std::int8_t>(s));
  a_.push_back(static_cast<std::int8_t>(s == 1 ? a : -1));
  y_.push_back(static_cast<std::int8_t>(s == 1 ? y : -1));
}

const LatentColumns& Cohort::oracle_view() const {
  if (!latent_) throw std::logic_error("cohort carries no latent columns");
  return *latent_;
}

Cohort Cohort::masked() const {
  Cohort out = *this;
  out.latent_.reset();
  return out;
}

Cohort Cohort::slice(std::size_t begin, std::size_t end) const {
  if (begin > end || end > size()) throw std::out_of_range("cohort slice out of range");
  std::vector<std::size_t> rows(end - begin);
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = begin + i;
  return subset(rows);
}

Cohort Cohort::subset(std::span<const std::size_t> rows) const {
  Cohort out(population_, d_, type_);
  if (latent_) out.latent_ = LatentColumns{};
  for (std::size_t i : rows) {
    if (type_ == CovariateType::Binary) out.cells_.push_back(cells_[i]);
    const auto xi = x(i);
    out.x_.insert(out.x_.end(), xi.begin(), xi.end());
    out.s_.push_back(s_[i]);
    out.a_.push_back(a_[i]);
    out.y_.push_back(y_[i]);
    if (latent_) {
      out.latent_->u.push_back(latent_->u[i]);
      out.latent_->a.push_back(latent_->a[i]);
      out.latent_->y.push_back(latent_->y[i]);
    }
  }
  return out;
}

bool Cohort::operator==(const Cohort& o) const {
  auto same_latent = [&] {
    if (latent_.has_value() != o.latent_.has_value()) return false;
    if (!latent_) return true;
    return latent_->u == o.latent_->u && latent_->a == o.latent_->a && latent_->y == o.latent_->y;
  };
  return population_ == o.population_ && d_ == o.d_ && type_ == o.type_ && x_ == o.x_ &&
         cells_ == o.cells_ && s_ == o.s_ && a_ == o.a_ && y_ == o.y_ && same_latent();
}

Cohort generate_cohort(const ProbabilityTables& tables, const MechanismSpec& spec,
                       Population population, std::size_t n, Rng& rng) {
  const std::size_t d = tables.dim();
  if (tables.u_model() != spec.u_model) {
    throw ConfigError("tables and spec disagree on the U model");
  }
  if (spec.p_u_rct.size() != tables.cells() || spec.p_u_os.size() != tables.cells()) {
    throw ConfigError("spec and tables were built for different dimensions");
  }
  if (spec.has(MechanismKind::SelectionType2) && !spec.selection_table) {
    throw ConfigError("SelectionType2 requires a selection table");
  }
  const bool rct = population == Population::RCT;
  const auto& p_u = rct ? spec.p_u_rct : spec.p_u_os;
  const std::vector<CellIndex> cells = sample_covariates(n, population, d, rng);

  Cohort cohort(population, d, CovariateType::Binary);
  cohort.latent_ = LatentColumns{};
  auto& latent = *cohort.latent_;
  latent.u.reserve(n);
  latent.a.reserve(n);
  latent.y.reserve(n);
  cohort.x_.reserve(n * d);
  for (CellIndex x : cells) {
    const double u = sample_u(spec.u_model, p_u[x], rng);
    const int a = rng.bernoulli(rct ? 0.5 : tables.at(Target::A, x, u)) ? 1 : 0;
    const int y0 = rng.bernoulli(tables.at(Target::Y0, x, u)) ? 1 : 0;
    const int y1 = rng.bernoulli(tables.at(Target::Y1, x, u)) ? 1 : 0;
    const int y = a == 1 ? y1 : y0;
    const int s = rct ? 1 : (rng.bernoulli(selection_probability(tables, spec, x, u, y, a)) ? 1 : 0);
    cohort.push_binary_row(x, s, a, y);
    latent.u.push_back(u);
    latent.a.push_back(static_cast<std::uint8_t>(a));
    latent.y.push_back(static_cast<std::uint8_t>(y));
  }
  return cohort;
}

}  // namespace biasmech
