#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "json.hpp"

#include "evdeblur/dlefnet.hpp"
#include "evdeblur/training.hpp"

namespace evdeblur {

using Json = nlohmann::ordered_json;

/// Canonical text form used for every JSON file we write (stable key order, 2-space indent).
std::string dump_json(const Json& j);
Json parse_json(const std::string& text, const std::string& what);

Json config_to_json(const NetworkConfig& cfg);
/// Every field is required; unknown keys are rejected.
NetworkConfig config_from_json(const Json& j);

Json train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const Json& j);

struct CheckpointInfo {
  NetworkConfig config;
  long step = 0;
  std::uint64_t seed = 0;
};

/// Directory holding manifest.json plus one TEN1 file per parameter.
void save_checkpoint(const std::filesystem::path& dir, const DlefNet<float>& net, long step, std::uint64_t seed);
DlefNet<float> load_checkpoint(const std::filesystem::path& dir, CheckpointInfo* info = nullptr);
CheckpointInfo read_checkpoint_info(const std::filesystem::path& dir);

}  // namespace evdeblur
