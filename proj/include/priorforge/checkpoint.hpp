#pragma once

#include "priorforge/tfm.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>

namespace priorforge {

inline constexpr const char* kCheckpointFormat = "priorforge-ckpt-v1";

// Directory layout:
//   manifest.json   config, step, seed, tensor index (name, shape, offset)
//   tensors.bin     parameters, little-endian float64, row-major
//   optimizer.bin   Adam first then second moments, same index
//   history.json    per-step mean batch loss
// `extra` is stored under manifest["extra"] verbatim.
void save_checkpoint(const std::filesystem::path& dir, const TrainState& state,
                     const nlohmann::json& extra = nlohmann::json::object());

TrainState load_checkpoint(const std::filesystem::path& dir);
TfmModel load_model(const std::filesystem::path& dir);

}  // namespace priorforge
