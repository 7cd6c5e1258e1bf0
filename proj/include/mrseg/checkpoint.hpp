#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "mrseg/unet.hpp"

namespace mrseg {

/// Layout: "MRSEGCKP", u32 version, u64 header length, UTF-8 JSON header,
/// then one little-endian float64 blob per parameter in header order. The
/// header holds the architecture echo, the pipeline config hash, free-form
/// metadata and per-blob name, dtype, shape and trainable flag.
inline constexpr std::string_view kCheckpointMagic = "MRSEGCKP";
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string fnv1a_hex(std::string_view text);

nlohmann::json to_json(const UNetConfig& c);
nlohmann::json to_json(const CascadeConfig& c);
UNetConfig unet_config_from_json(const nlohmann::json& j);
CascadeConfig cascade_config_from_json(const nlohmann::json& j);

struct CheckpointHeader {
  CascadeConfig architecture;
  std::string config_hash;
  nlohmann::json meta;
};

void save_checkpoint(const CascadeModel& model, const std::filesystem::path& path, const std::string& config_hash = "",
                     const nlohmann::json& meta = nlohmann::json::object());

CheckpointHeader read_checkpoint_header(const std::filesystem::path& path);

/// Loads parameters into `model`. ConfigError when the stored architecture
/// differs from the model's in anything but the dropout rate; CorruptFile on
/// a malformed container.
CheckpointHeader load_checkpoint(CascadeModel& model, const std::filesystem::path& path);

/// In-memory copy of every parameter value, for best-epoch selection.
using ParameterSnapshot = std::vector<std::vector<double>>;
ParameterSnapshot snapshot(const CascadeModel& model);
void restore(CascadeModel& model, const ParameterSnapshot& snap);

}  // namespace mrseg
