#pragma once

// Shared JSON (de)serialization helpers for config and state types; internal
// to the library build, not installed.

#include "json.hpp"
#include "skewprune/model.hpp"

namespace skewprune::detail {

nlohmann::json model_config_to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

nlohmann::json prune_state_to_json(const BlockPruneState& s);
BlockPruneState prune_state_from_json(const nlohmann::json& j);

}  // namespace skewprune::detail
