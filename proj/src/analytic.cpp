#include "biasmech/analytic.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>

#include "biasmech/errors.hpp"

namespace biasmech {

namespace {

constexpr std::size_t kGridIntervals = 1024;  // 1025 nodes on [0, 1]

struct UNode {
  double u;
  double weight;
};

// Quadrature of the latent law. Binary U: the two atoms. Continuous U: the
// two-band density integrated by the trapezoid rule on each half, so the
// density jump at 1/2 falls on a node.
std::vector<UNode> u_nodes(UModel model, double p_u) {
  if (model == UModel::Binary) return {{0.0, 1.0 - p_u}, {1.0, p_u}};
  std::vector<UNode> nodes(kGridIntervals + 1);
  const double h = 1.0 / static_cast<double>(kGridIntervals);
  const std::size_t mid = kGridIntervals / 2;
  for (std::size_t k = 0; k <= kGridIntervals; ++k) nodes[k] = {static_cast<double>(k) * h, 0.0};
  const double lower = 2.0 * (1.0 - p_u);
  const double upper = 2.0 * p_u;
  for (std::size_t k = 0; k < mid; ++k) {
    nodes[k].weight += 0.5 * h * lower;
    nodes[k + 1].weight += 0.5 * h * lower;
  }
  for (std::size_t k = mid; k < kGridIntervals; ++k) {
    nodes[k].weight += 0.5 * h * upper;
    nodes[k + 1].weight += 0.5 * h * upper;
  }
  return nodes;
}

double lerp(const std::array<double, 2>& e, double u) { return e[0] + u * (e[1] - e[0]); }

double law_selection(const MechanismSpec& spec, const CellLaw& law, double u, int y, int a) {
  if (!spec.has(MechanismKind::SelectionType2)) return lerp(law.at(Target::S), u);
  if (!spec.selection_table) throw ConfigError("SelectionType2 requires a selection table");
  const double collider = spec.selection_table->at(y, a);
  return spec.u_bias_flags[Target::S] ? collider * lerp(law.at(Target::S), u) : collider;
}

double g1_closed(const CellLaw& law) {
  const auto& y1 = law.at(Target::Y1);
  return y1[0] + u_law(law.u_model, law.pu_rct).m1 * (y1[1] - y1[0]);
}

double bernoulli_var(double p) { return p * (1.0 - p); }

// (x0 + u dx)(y0 + u dy) averaged over the latent law.
double mixed_mean(const std::array<double, 2>& x, const std::array<double, 2>& y, const ULaw& m) {
  const double dx = x[1] - x[0];
  const double dy = y[1] - y[0];
  return x[0] * y[0] + (x[0] * dy + y[0] * dx) * m.m1 + dx * dy * m.m2;
}

MechanismSpec spec_from_query(const SignalQuery& q) {
  MechanismSpec spec;
  for (MechanismKind k : q.components) {
    if (k != MechanismKind::NoBias && !spec.has(k)) spec.components.push_back(k);
  }
  if (spec.components.empty()) spec.components.push_back(MechanismKind::NoBias);
  for (MechanismKind k : spec.components) {
    const UBiasFlags f = flags_for(k);
    for (std::size_t t = 0; t < 4; ++t) {
      spec.u_bias_flags.flag[t] = spec.u_bias_flags.flag[t] || f.flag[t];
    }
  }
  if (spec.has(MechanismKind::SelectionType2)) {
    if (!q.selection_table) throw ConfigError("SelectionType2 requires a selection table");
    spec.selection_table = q.selection_table;
  }
  return spec;
}

}  // namespace

std::string_view to_string(Channel c) {
  switch (c) {
    case Channel::S: return "S";
    case Channel::A: return "A";
    case Channel::Y: return "Y";
  }
  return "?";
}

std::string_view to_string(SignalSign s) {
  switch (s) {
    case SignalSign::Zero: return "zero";
    case SignalSign::Positive: return "positive";
    case SignalSign::Negative: return "negative";
  }
  return "?";
}

double bias_transportability(double pu_r1, double pu_r0, double py_u1, double py_u0) {
  return (pu_r1 - pu_r0) * (py_u1 - py_u0);
}

double bias_confounding(double py_u1, double py_u0, double pa_u1, double pa_u0) {
  const double denom = 2.0 * (pa_u1 + pa_u0);
  if (denom == 0.0) throw SingularityError("bias_confounding: P(A=1|U=0) + P(A=1|U=1) = 0");
  return (py_u1 - py_u0) * (pa_u1 - pa_u0) / denom;
}

double bias_selection1(double py_u1, double py_u0, double ps_u1, double ps_u0) {
  const double denom = 2.0 * (ps_u1 + ps_u0);
  if (denom == 0.0) throw SingularityError("bias_selection1: P(S=1|U=0) + P(S=1|U=1) = 0");
  return (py_u1 - py_u0) * (ps_u1 - ps_u0) / denom;
}

double bias_selection2(double py1, double ps_11, double ps_01) {
  const double denom = ps_11 * py1 + ps_01 * (1.0 - py1);
  if (denom == 0.0) throw SingularityError("bias_selection2: P(S=1|X,A=1) = 0");
  return py1 * (1.0 - ps_11 / denom);
}

CellLaw cell_law(const MechanismSpec& spec, const ProbabilityTables& tables, CellIndex x) {
  CellLaw law;
  for (Target t : kAllTargets) law.p[static_cast<std::size_t>(t)] = tables.endpoints(t, x);
  law.pu_rct = spec.p_u_rct.at(x);
  law.pu_os = spec.p_u_os.at(x);
  law.u_model = tables.u_model();
  return law;
}

double MomentEntry::probability(Channel c) const {
  return c == Channel::S ? pS : (c == Channel::A ? pA : pY);
}

double MomentEntry::variance(Channel c) const {
  return c == Channel::S ? vS : (c == Channel::A ? vA : vY);
}

MomentEntry make_moments(double pS, double pA, double pY) {
  return {pS, pA, pY, bernoulli_var(pS), bernoulli_var(pA), bernoulli_var(pY)};
}

MomentEntry brute_force_moments(const MechanismSpec& spec, const CellLaw& law) {
  double mass_s = 0.0, mass_sa = 0.0, mass_say = 0.0;
  for (const UNode& node : u_nodes(law.u_model, law.pu_os)) {
    const double pa = lerp(law.at(Target::A), node.u);
    for (int a = 0; a <= 1; ++a) {
      const double wa = a == 1 ? pa : 1.0 - pa;
      const double py = lerp(law.at(a == 1 ? Target::Y1 : Target::Y0), node.u);
      for (int y = 0; y <= 1; ++y) {
        const double wy = y == 1 ? py : 1.0 - py;
        const double mass = node.weight * wa * wy * law_selection(spec, law, node.u, y, a);
        mass_s += mass;
        if (a == 1) {
          mass_sa += mass;
          if (y == 1) mass_say += mass;
        }
      }
    }
  }
  return make_moments(mass_s, mass_sa / mass_s, mass_say / mass_sa);
}

MomentEntry brute_force_moments(const MechanismSpec& spec, const ProbabilityTables& tables,
                                CellIndex x) {
  return brute_force_moments(spec, cell_law(spec, tables, x));
}

MomentEntry conditional_moments(const MechanismSpec& spec, const CellLaw& law) {
  if (!spec.is_pure()) return brute_force_moments(spec, law);
  const ULaw m = u_law(law.u_model, law.pu_os);
  const auto& s = law.at(Target::S);
  const auto& a = law.at(Target::A);
  const auto& y1 = law.at(Target::Y1);
  switch (spec.kind()) {
    case MechanismKind::NoBias:
      return make_moments(s[0], a[0], y1[0]);
    case MechanismKind::Transportability:
      return make_moments(s[0], a[0], y1[0] + m.m1 * (y1[1] - y1[0]));
    case MechanismKind::Confounding: {
      const double pA = a[0] + m.m1 * (a[1] - a[0]);
      return make_moments(s[0], pA, mixed_mean(a, y1, m) / pA);
    }
    case MechanismKind::SelectionType1: {
      const double pS = s[0] + m.m1 * (s[1] - s[0]);
      return make_moments(pS, a[0], mixed_mean(s, y1, m) / pS);
    }
    case MechanismKind::SelectionType2: {
      const SelectionTable& t = *spec.selection_table;
      const double pa = a[0];
      const double py1 = y1[0];
      const double py0 = law.at(Target::Y0)[0];
      const double treated = t.at(1, 1) * py1 * pa + t.at(0, 1) * (1.0 - py1) * pa;
      const double pS = treated + t.at(1, 0) * py0 * (1.0 - pa) + t.at(0, 0) * (1.0 - py0) * (1.0 - pa);
      const double pY = t.at(1, 1) * py1 / (t.at(1, 1) * py1 + t.at(0, 1) * (1.0 - py1));
      return make_moments(pS, treated / pS, pY);
    }
  }
  return brute_force_moments(spec, law);
}

MomentEntry conditional_moments(const MechanismSpec& spec, const ProbabilityTables& tables,
                                CellIndex x) {
  return conditional_moments(spec, cell_law(spec, tables, x));
}

BiasEntry brute_force_bias(const MechanismSpec& spec, const CellLaw& law) {
  double g1 = 0.0;
  for (const UNode& node : u_nodes(law.u_model, law.pu_rct)) {
    g1 += node.weight * lerp(law.at(Target::Y1), node.u);
  }
  const double f1 = brute_force_moments(spec, law).pY;
  return {g1, f1, g1 - f1};
}

BiasEntry analytic_bias(const MechanismSpec& spec, const CellLaw& law) {
  if (!spec.is_pure()) return brute_force_bias(spec, law);
  const auto& y1 = law.at(Target::Y1);
  const bool half_binary = law.u_model == UModel::Binary && law.pu_rct == 0.5 && law.pu_os == 0.5;
  const double f1 = conditional_moments(spec, law).pY;
  double b1 = 0.0;
  switch (spec.kind()) {
    case MechanismKind::NoBias:
      b1 = 0.0;
      break;
    case MechanismKind::Transportability:
      b1 = bias_transportability(u_law(law.u_model, law.pu_rct).m1,
                                 u_law(law.u_model, law.pu_os).m1, y1[1], y1[0]);
      break;
    case MechanismKind::Confounding: {
      // The lemma expression is oriented f1 - g1.
      const auto& a = law.at(Target::A);
      b1 = half_binary ? -bias_confounding(y1[1], y1[0], a[1], a[0]) : g1_closed(law) - f1;
      break;
    }
    case MechanismKind::SelectionType1: {
      const auto& s = law.at(Target::S);
      b1 = half_binary ? -bias_selection1(y1[1], y1[0], s[1], s[0]) : g1_closed(law) - f1;
      break;
    }
    case MechanismKind::SelectionType2: {
      const SelectionTable& t = *spec.selection_table;
      b1 = bias_selection2(y1[0], t.at(1, 1), t.at(0, 1));
      break;
    }
  }
  return {f1 + b1, f1, b1};
}

BiasProfile analytic_bias_profile(const MechanismSpec& spec, const ProbabilityTables& tables) {
  BiasProfile out;
  out.cells.reserve(tables.cells());
  for (CellIndex x = 0; x < tables.cells(); ++x) {
    out.cells.push_back(analytic_bias(spec, cell_law(spec, tables, x)));
  }
  return out;
}

BiasProfile brute_force_bias_profile(const MechanismSpec& spec, const ProbabilityTables& tables) {
  BiasProfile out;
  out.cells.reserve(tables.cells());
  for (CellIndex x = 0; x < tables.cells(); ++x) {
    out.cells.push_back(brute_force_bias(spec, cell_law(spec, tables, x)));
  }
  return out;
}

std::vector<double> channel_cell_weights(const MechanismSpec& spec,
                                         const ProbabilityTables& tables, Channel channel) {
  const std::size_t d = tables.dim();
  std::vector<double> w(tables.cells());
  for (CellIndex x = 0; x < tables.cells(); ++x) {
    const int ones = std::popcount(x);
    double px = std::pow(0.6, ones) * std::pow(0.4, static_cast<int>(d) - ones);
    const MomentEntry m = conditional_moments(spec, tables, x);
    if (channel != Channel::S) px *= m.pS;
    if (channel == Channel::Y) px *= m.pA;
    w[x] = px;
  }
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  for (double& v : w) v /= total;
  return w;
}

double population_covariance(const MechanismSpec& spec, const ProbabilityTables& tables,
                             Channel channel) {
  const std::vector<double> w = channel_cell_weights(spec, tables, channel);
  const BiasProfile bias = analytic_bias_profile(spec, tables);
  double eb = 0.0, ev = 0.0, ebv = 0.0;
  for (CellIndex x = 0; x < tables.cells(); ++x) {
    const double b = std::abs(bias.cells[x].b1);
    const double v = conditional_moments(spec, tables, x).variance(channel);
    eb += w[x] * b;
    ev += w[x] * v;
    ebv += w[x] * b * v;
  }
  return ebv - eb * ev;
}

SignalSign TheoreticalSignals::sign(Channel c, double k) const {
  const auto i = static_cast<std::size_t>(c);
  if (!defined[i] || std::abs(rho[i]) <= k * se[i]) return SignalSign::Zero;
  return rho[i] > 0 ? SignalSign::Positive : SignalSign::Negative;
}

void CoMoments::add(double b, const std::array<double, 3>& v) {
  n += 1.0;
  const double db = b - mean_b;
  mean_b += db / n;
  for (std::size_t k = 0; k < 3; ++k) {
    const double dv = v[k] - mean_v[k];
    mean_v[k] += dv / n;
    c[k] += db * (v[k] - mean_v[k]);
    m2_v[k] += dv * (v[k] - mean_v[k]);
  }
  m2_b += db * (b - mean_b);
}

void CoMoments::merge(const CoMoments& o) {
  if (o.n == 0) return;
  if (n == 0) {
    *this = o;
    return;
  }
  const double total = n + o.n;
  const double f = n * o.n / total;
  const double db = o.mean_b - mean_b;
  for (std::size_t k = 0; k < 3; ++k) {
    const double dv = o.mean_v[k] - mean_v[k];
    c[k] += o.c[k] + db * dv * f;
    m2_v[k] += o.m2_v[k] + dv * dv * f;
    mean_v[k] += dv * o.n / total;
  }
  m2_b += o.m2_b + db * db * f;
  mean_b += db * o.n / total;
  n = total;
}

std::optional<double> CoMoments::correlation(std::size_t k) const {
  constexpr double kFlat = 1e-12;
  if (n < 2 || std::sqrt(m2_b / n) < kFlat || std::sqrt(m2_v[k] / n) < kFlat) return std::nullopt;
  return std::clamp(c[k] / std::sqrt(m2_b * m2_v[k]), -1.0, 1.0);
}

double CoMoments::covariance(std::size_t k) const { return n > 0 ? c[k] / n : 0.0; }

TheoreticalSignals theoretical_signals(const SignalQuery& query, double p, std::size_t n_mc,
                                       std::uint64_t seed, Execution exec, std::size_t shards) {
  if (n_mc < 10000) throw ConfigError("theoretical_signals needs at least 1e4 MC draws");
  if (shards < 2) throw ConfigError("theoretical_signals needs at least two shards");
  const FDistribution f(p);
  const MechanismSpec spec = spec_from_query(query);
  const bool transport = spec.has(MechanismKind::Transportability);

  std::vector<CoMoments> parts(shards);
  auto run_shard = [&](std::size_t k) {
    Rng rng = Rng::substream(seed, k);
    const std::size_t count = n_mc / shards + (k < n_mc % shards ? 1 : 0);
    CoMoments acc;
    CellLaw law;
    for (std::size_t i = 0; i < count; ++i) {
      for (Target t : kAllTargets) {
        auto& e = law.p[static_cast<std::size_t>(t)];
        e[0] = f.sample(rng);
        e[1] = spec.u_bias_flags[t] ? f.sample(rng) : e[0];
      }
      if (transport) {
        law.pu_rct = f.sample(rng);
        law.pu_os = f.sample(rng);
      }
      const double b = std::abs(analytic_bias(spec, law).b1);
      const MomentEntry m = conditional_moments(spec, law);
      acc.add(b, {m.vS, m.vA, m.vY});
    }
    parts[k] = acc;
  };

  const auto n_shards = static_cast<std::ptrdiff_t>(shards);
  if (exec == Execution::Parallel) {
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t k = 0; k < n_shards; ++k) run_shard(static_cast<std::size_t>(k));
  } else {
    for (std::ptrdiff_t k = 0; k < n_shards; ++k) run_shard(static_cast<std::size_t>(k));
  }

  CoMoments total;
  for (const CoMoments& part : parts) total.merge(part);

  TheoreticalSignals out;
  out.mc_samples = n_mc;
  out.shards = shards;
  for (std::size_t c = 0; c < 3; ++c) {
    const auto r = total.correlation(c);
    out.defined[c] = r.has_value();
    out.rho[c] = r.value_or(0.0);
    out.covariance[c] = total.covariance(c);
    if (!r) continue;
    std::vector<double> shard_r;
    for (const CoMoments& part : parts) {
      if (auto pr = part.correlation(c)) shard_r.push_back(*pr);
    }
    const double k = static_cast<double>(shard_r.size());
    const double mean = std::accumulate(shard_r.begin(), shard_r.end(), 0.0) / k;
    double ss = 0.0;
    for (double v : shard_r) ss += (v - mean) * (v - mean);
    out.se[c] = k > 1 ? std::sqrt(ss / (k - 1.0) / k) : 0.0;
  }
  return out;
}

}  // namespace biasmech
