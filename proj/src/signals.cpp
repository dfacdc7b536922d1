#include "biasmech/signals.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <boost/math/distributions/students_t.hpp>

namespace biasmech {

namespace {

void check_lengths(std::size_t a, std::size_t b, std::size_t c) {
  if (a != b || a != c) throw EstimationError("covariance inputs differ in length");
  if (a < 2) throw EstimationError("covariance needs at least two rows");
}

bool constant(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [&](double e) { return e == v.front(); });
}

double pearson_r(std::span<const double> x, std::span<const double> y) {
  if (constant(x) || constant(y)) throw UndefinedCorrelation("correlation of a constant vector");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  if (sxx <= 0 || syy <= 0) throw UndefinedCorrelation("correlation of a constant vector");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

}  // namespace

double covariance_estimate(std::span<const double> bias_abs, std::span<const double> targets,
                           std::span<const double> preds, Execution exec) {
  check_lengths(bias_abs.size(), targets.size(), preds.size());
  const std::size_t n = bias_abs.size();
  const auto ni = static_cast<std::ptrdiff_t>(n);
  const double nd = static_cast<double>(n);

  double st = 0, st2 = 0;
  double own = 0, cross = 0;
  if (exec == Execution::Parallel) {
#pragma omp parallel for reduction(+ : st, st2) schedule(static)
    for (std::ptrdiff_t i = 0; i < ni; ++i) {
      st += targets[i];
      st2 += targets[i] * targets[i];
    }
#pragma omp parallel for reduction(+ : own, cross) schedule(static)
    for (std::ptrdiff_t i = 0; i < ni; ++i) {
      const double e = targets[i] - preds[i];
      own += bias_abs[i] * e * e;
      cross += bias_abs[i] * (st2 - 2.0 * preds[i] * st + nd * preds[i] * preds[i]);
    }
  } else {
    for (std::ptrdiff_t i = 0; i < ni; ++i) {
      st += targets[i];
      st2 += targets[i] * targets[i];
    }
    for (std::ptrdiff_t i = 0; i < ni; ++i) {
      const double e = targets[i] - preds[i];
      own += bias_abs[i] * e * e;
      cross += bias_abs[i] * (st2 - 2.0 * preds[i] * st + nd * preds[i] * preds[i]);
    }
  }
  return nd / (nd - 1.0) * (own / nd - cross / (nd * nd));
}

double covariance_estimate_naive(std::span<const double> bias_abs,
                                 std::span<const double> targets, std::span<const double> preds) {
  check_lengths(bias_abs.size(), targets.size(), preds.size());
  const std::size_t n = bias_abs.size();
  const double nd = static_cast<double>(n);
  double own = 0, cross = 0;
  for (std::size_t i = 0; i < n; ++i) {
    own += bias_abs[i] * (targets[i] - preds[i]) * (targets[i] - preds[i]);
    for (std::size_t j = 0; j < n; ++j) {
      cross += bias_abs[i] * (targets[j] - preds[i]) * (targets[j] - preds[i]);
    }
  }
  return nd / (nd - 1.0) * (own / nd - cross / (nd * nd));
}

double pearson_p_value(double r, std::size_t n) {
  if (n < 3) throw EstimationError("Pearson test needs at least three rows");
  const double df = static_cast<double>(n) - 2.0;
  const double denom = 1.0 - r * r;
  if (denom <= 0) return 0.0;
  const double t = std::abs(r) * std::sqrt(df / denom);
  const boost::math::students_t dist(df);
  return 2.0 * boost::math::cdf(boost::math::complement(dist, t));
}

PearsonResult pearson_signal(std::span<const double> bias_abs, std::span<const double> sq_errors,
                             const PearsonOptions& opt) {
  if (bias_abs.size() != sq_errors.size()) throw EstimationError("Pearson inputs differ in length");
  if (bias_abs.size() < 3) throw EstimationError("Pearson test needs at least three rows");
  PearsonResult out;
  out.r = pearson_r(bias_abs, sq_errors);
  if (opt.permutations == 0) {
    out.p_value = pearson_p_value(out.r, bias_abs.size());
  } else {
    Rng rng(opt.seed);
    std::vector<double> shuffled(sq_errors.begin(), sq_errors.end());
    std::size_t extreme = 0;
    for (std::size_t b = 0; b < opt.permutations; ++b) {
      for (std::size_t i = shuffled.size() - 1; i > 0; --i) {
        std::swap(shuffled[i], shuffled[rng.below(i + 1)]);
      }
      if (std::abs(pearson_r(bias_abs, shuffled)) >= std::abs(out.r)) ++extreme;
    }
    out.p_value = (1.0 + static_cast<double>(extreme)) / (1.0 + static_cast<double>(opt.permutations));
  }
  out.p_value = std::clamp(out.p_value, kPValueFloor, 1.0);
  return out;
}

SignalSign SignalChannel::sign(double alpha) const {
  if (!defined || !(p_value < alpha)) return SignalSign::Zero;
  return pearson_r > 0 ? SignalSign::Positive : SignalSign::Negative;
}

std::string_view to_string(Verdict v) {
  switch (v) {
    case Verdict::NoBias: return "NoBias";
    case Verdict::Transportability: return "Transportability";
    case Verdict::Confounding: return "Confounding";
    case Verdict::SelectionType1: return "SelectionType1";
    case Verdict::SelectionType2: return "SelectionType2";
    case Verdict::Indeterminate: return "Indeterminate";
  }
  return "?";
}

Verdict parse_verdict(std::string_view name) {
  for (Verdict v : {Verdict::NoBias, Verdict::Transportability, Verdict::Confounding,
                    Verdict::SelectionType1, Verdict::SelectionType2, Verdict::Indeterminate}) {
    if (to_string(v) == name) return v;
  }
  throw DataError("unknown verdict '" + std::string(name) + "'");
}

Verdict expected_verdict(MechanismKind kind) {
  switch (kind) {
    case MechanismKind::NoBias: return Verdict::NoBias;
    case MechanismKind::Transportability: return Verdict::Transportability;
    case MechanismKind::Confounding: return Verdict::Confounding;
    case MechanismKind::SelectionType1: return Verdict::SelectionType1;
    case MechanismKind::SelectionType2: return Verdict::SelectionType2;
  }
  return Verdict::Indeterminate;
}

Verdict classify(const std::array<SignalChannel, 3>& ch, double alpha) {
  std::array<SignalSign, 3> s{};
  for (std::size_t k = 0; k < 3; ++k) {
    if (!ch[k].defined) return Verdict::Indeterminate;
    s[k] = ch[k].sign(alpha);
  }
  using enum SignalSign;
  if (std::find(s.begin(), s.end(), Negative) != s.end()) return Verdict::SelectionType2;
  if (s == std::array{Zero, Zero, Zero}) return Verdict::NoBias;
  if (s == std::array{Zero, Zero, Positive}) return Verdict::Transportability;
  if (s == std::array{Zero, Positive, Positive}) return Verdict::Confounding;
  if (s == std::array{Positive, Zero, Positive}) return Verdict::SelectionType1;
  return Verdict::Indeterminate;
}

nlohmann::json SignalReport::to_json() const {
  nlohmann::json j;
  j["alpha"] = alpha;
  j["verdict"] = to_string(verdict);
  j["channels"] = nlohmann::json::array();
  for (const SignalChannel& c : channels) {
    j["channels"].push_back({{"target", to_string(c.target)},
                             {"n", c.n_used},
                             {"cov", c.cov_hat},
                             {"r", c.pearson_r},
                             {"p", c.p_value},
                             {"defined", c.defined},
                             {"sign", to_string(c.sign(alpha))}});
  }
  j["flags"] = flags;
  return j;
}

bool SignalReport::operator==(const SignalReport& o) const {
  if (alpha != o.alpha || verdict != o.verdict || flags != o.flags) return false;
  for (std::size_t k = 0; k < 3; ++k) {
    const SignalChannel& a = channels[k];
    const SignalChannel& b = o.channels[k];
    if (a.target != b.target || a.n_used != b.n_used || a.cov_hat != b.cov_hat ||
        a.pearson_r != b.pearson_r || a.p_value != b.p_value || a.defined != b.defined)
      return false;
  }
  return true;
}

Nuisances fit_nuisances(const Cohort& os_train, ModelKind kind, const FitOptions& opt) {
  return {fit_nuisance(os_train, ConditioningSpec::for_target(Channel::S, Population::OS), kind, opt),
          fit_nuisance(os_train, ConditioningSpec::for_target(Channel::A, Population::OS), kind, opt),
          fit_nuisance(os_train, ConditioningSpec::for_target(Channel::Y, Population::OS), kind, opt)};
}

SignalReport score_signals(const BiasEstimate& bias, const Nuisances& eta, const Cohort& os_val,
                           const ScoreOptions& opt) {
  SignalReport report;
  report.alpha = opt.alpha;
  std::size_t positivity = 0;
  for (std::size_t i = 0; i < os_val.size(); ++i) {
    if (bias.positivity_flag(os_val, i)) ++positivity;
  }
  if (positivity > 0) {
    report.flags.push_back("positivity: " + std::to_string(positivity) +
                           " validation rows fall in cells without RCT support");
  }
  for (Channel c : kChannels) {
    const FittedEstimator& est = eta.at(c);
    std::vector<double> b, t, pred, sq;
    for (std::size_t i = 0; i < os_val.size(); ++i) {
      if (!est.conditioning().admits(os_val, i)) continue;
      b.push_back(std::abs(bias.b1(os_val, i)));
      t.push_back(est.conditioning().label(os_val, i));
      pred.push_back(est.predict(os_val, i));
      sq.push_back((t.back() - pred.back()) * (t.back() - pred.back()));
    }
    SignalChannel& ch = report.channels[static_cast<std::size_t>(c)];
    ch.target = c;
    ch.n_used = b.size();
    const std::string name(to_string(c));
    if (b.size() < 3) {
      ch.defined = false;
      report.flags.push_back("channel " + name + ": fewer than three validation rows");
      continue;
    }
    ch.cov_hat = covariance_estimate(b, t, pred, opt.exec);
    try {
      const PearsonResult pr = pearson_signal(b, sq, opt.pearson);
      ch.pearson_r = pr.r;
      ch.p_value = pr.p_value;
    } catch (const UndefinedCorrelation&) {
      ch.defined = false;
      report.flags.push_back("channel " + name + ": constant input, correlation undefined");
    }
  }
  report.verdict = classify(report.channels, opt.alpha);
  return report;
}

}  // namespace biasmech
