#pragma once

#include "priorforge/priors.hpp"
#include "priorforge/tfm.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>

namespace priorforge {

// JSON readers accept partial objects: missing keys keep their defaults and
// unknown keys raise ConfigError so typos do not silently fall back.
nlohmann::json to_json(const TfmConfig& config);
TfmConfig tfm_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const ConfigRanges& ranges);
ConfigRanges config_ranges_from_json(const nlohmann::json& j, ConfigRanges base = {});

nlohmann::json to_json(const TrainHp& hp);
TrainHp train_hp_from_json(const nlohmann::json& j, TrainHp base = {});

// {"scm": 0.5, "dsrf": 0.5, ...}
nlohmann::json to_json(const Mixture& mix);
Mixture mixture_from_json(const nlohmann::json& j);

nlohmann::json read_json_file(const std::filesystem::path& path);
// Pretty-printed with a trailing newline.
void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);

// Throws ConfigError naming the first key of `j` that is not in `allowed`.
void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed, const std::string& where);

// FNV-1a of the compact dump, as 16 hex digits.
std::string config_hash(const nlohmann::json& j);

}  // namespace priorforge
