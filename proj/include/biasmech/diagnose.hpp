#pragma once

// Diagnosis of an externally supplied RCT / OS pair.

#include <cstdint>
#include <optional>
#include <string>

#include <json.hpp>

#include "biasmech/harness.hpp"

namespace biasmech {

struct SplitOptions {
  double train_fraction = 0.8;
  std::uint64_t seed = 0;
  // When set, the last val_tail OS rows are the validation split (no shuffle).
  std::optional<std::size_t> val_tail;
};

struct OsSplit {
  Cohort train{Population::OS, 0};
  Cohort val{Population::OS, 0};
  std::string method;  // "shuffle" or "tail"
};

OsSplit split_os(const Cohort& os, const SplitOptions& opt);

struct Diagnosis {
  DiagnoseResult result;
  SplitOptions split;
  std::string split_method;
  std::size_t n_train = 0;
  std::size_t n_val = 0;
  ModelKind model = ModelKind::Logistic;

  nlohmann::json to_json() const;
};

// Logistic unless the caller picks the frequency model; the frequency model
// refuses continuous covariates.
Diagnosis diagnose(const Cohort& rct, const Cohort& os, const DiagnoseOptions& opt,
                   const SplitOptions& split = {});

}  // namespace biasmech
