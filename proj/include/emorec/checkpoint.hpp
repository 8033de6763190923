#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "emorec/config.hpp"
#include "emorec/tensor.hpp"

namespace emorec {

// checkpoint directory: index.json (config + parameter-name -> file map) and
// one EMT1 tensor per parameter

void save_checkpoint(const std::filesystem::path& dir, const ModelConfig& cfg,
                     const std::vector<std::pair<std::string, Tensor<float>>>& params,
                     bool force = false);

struct LoadedCheckpoint {
    ModelConfig config;
    std::map<std::string, Tensor<float>> params;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir);

// ModelConfig <-> JSON (shared by checkpoints and the CLI config file)
std::string config_to_json(const ModelConfig& cfg);
ModelConfig config_from_json(const std::string& text);

} // namespace emorec
