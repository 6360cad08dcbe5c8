#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"

#include "bzsim/engine.hpp"

namespace bzsim {

/// Parses a config document. Missing keys keep their defaults; unknown keys
/// and type errors raise ConfigError naming the JSON pointer of the entry.
ExperimentConfig config_from_json(const nlohmann::json& doc);

/// Every field, including unset optionals (written as null).
nlohmann::json config_to_json(const ExperimentConfig& cfg);

ExperimentConfig load_config(const std::filesystem::path& path);

}  // namespace bzsim
