#include "biasmech/diagnose.hpp"

#include <algorithm>
#include <numeric>

#include "biasmech/errors.hpp"

namespace biasmech {

OsSplit split_os(const Cohort& os, const SplitOptions& opt) {
  const std::size_t n = os.size();
  OsSplit out;
  if (opt.val_tail) {
    if (*opt.val_tail < 3 || *opt.val_tail >= n) {
      throw ConfigError("val_tail must leave at least one training row and three validation rows");
    }
    out.train = os.slice(0, n - *opt.val_tail);
    out.val = os.slice(n - *opt.val_tail, n);
    out.method = "tail";
    return out;
  }
  if (!(opt.train_fraction > 0 && opt.train_fraction < 1)) {
    throw ConfigError("train_fraction must lie in (0, 1)");
  }
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(opt.seed);
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
  const auto n_train = static_cast<std::size_t>(opt.train_fraction * static_cast<double>(n));
  if (n_train < 1 || n - n_train < 3) throw DataError("OS cohort too small to split");
  std::vector<std::size_t> train(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<std::size_t> val(idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
  std::sort(train.begin(), train.end());
  std::sort(val.begin(), val.end());
  out.train = os.subset(train);
  out.val = os.subset(val);
  out.method = "shuffle";
  return out;
}

Diagnosis diagnose(const Cohort& rct, const Cohort& os, const DiagnoseOptions& opt,
                   const SplitOptions& split) {
  if (rct.dim() != os.dim()) throw DataError("RCT and OS cohorts differ in covariate dimension");
  const OsSplit parts = split_os(os, split);
  Diagnosis d;
  d.result = diagnose_split(rct, parts.train, parts.val, opt);
  d.split = split;
  d.split_method = parts.method;
  d.n_train = parts.train.size();
  d.n_val = parts.val.size();
  d.model = opt.model;
  return d;
}

nlohmann::json Diagnosis::to_json() const {
  nlohmann::json j = result.report.to_json();
  j["model"] = to_string(model);
  j["mean_abs_b1"] = result.mean_abs_b1;
  j["split"] = {{"method", split_method},
                {"seed", split.seed},
                {"train_fraction", split.train_fraction},
                {"n_train", n_train},
                {"n_val", n_val}};
  return j;
}

}  // namespace biasmech
