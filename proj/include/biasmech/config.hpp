#pragma once

// JSON experiment configs. Unknown keys are rejected; omitted keys take the
// ExperimentConfig defaults.

#include <string>
#include <string_view>

#include <json.hpp>

#include "biasmech/harness.hpp"

namespace biasmech {

ExperimentConfig parse_config_text(std::string_view text);
ExperimentConfig parse_config(const std::string& path);
ExperimentConfig config_from_json(const nlohmann::json& j);

// Every key written out, so the result parses back to the same config.
nlohmann::json config_to_json(const ExperimentConfig& config);
std::string serialize_config(const ExperimentConfig& config);

}  // namespace biasmech
