#pragma once

#include "cesrnn/config.hpp"
#include "cesrnn/network.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace cesrnn::network {

inline constexpr const char* kCheckpointFormat = "CESRNN-CHECKPOINT v1";

// One trained member: parameters, the training-period exogenous means each
// coin was normalized with, and free-form metadata (horizon, seed, train end,
// quantile spec, ...).
struct Checkpoint {
    ModelParameters model;
    std::map<std::string, std::vector<double>> exo_means;
    KeyValueConfig metadata;
};

// Text container; every double is written as a C99 hex float so a
// save -> load -> save cycle reproduces the file byte for byte.
std::string serialize_checkpoint(const Checkpoint& checkpoint);
Checkpoint deserialize_checkpoint(const std::string& text);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

} // namespace cesrnn::network
