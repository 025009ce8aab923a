#pragma once

#include <string>

#include "skewprune/data.hpp"
#include "skewprune/flsim.hpp"
#include "skewprune/model.hpp"
#include "skewprune/trainer.hpp"

namespace skewprune {

/// Everything a tool invocation can configure, read from one JSON document
/// with optional sections "model", "train", "synth", and "fl". Absent
/// sections and absent keys keep their defaults; unknown keys are rejected
/// so typos fail loudly instead of silently running defaults.
struct ToolConfig {
  ModelConfig model;
  TrainConfig train;
  SynthConfig synth;
  FlRunConfig fl;
};

/// Parses the JSON text of a config file. Malformed JSON or unknown keys
/// throw ConfigError naming the section.
ToolConfig parse_tool_config(const std::string& text);

/// Round-trippable snapshot of a config, pretty-printed with sorted keys.
/// Embedded in run manifests so artifacts record what produced them.
std::string tool_config_to_json(const ToolConfig& cfg);

}  // namespace skewprune
