#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "msfpt/config.hpp"
#include "msfpt/nn.hpp"

namespace msfpt {

/// Optimizer slots keyed by parameter name (e.g. first and second moments).
struct OptimizerSnapshot {
    std::uint64_t step = 0;
    std::map<std::string, Tensor<float>> first_moment;
    std::map<std::string, Tensor<float>> second_moment;
};

struct Checkpoint {
    ModelConfig config;
    ParamStore<float> params;
    std::optional<OptimizerSnapshot> optimizer;
    /// Free-form extras carried in the header, e.g. MOS normalization.
    nlohmann::json metadata = nlohmann::json::object();
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Layout (all integers little-endian):
///   "MSFP" | u32 version | u32 header length | header JSON |
///   records | u64 CRC-64 of everything before it
/// A record is u32 name length, UTF-8 name, u32 rank, u32 dims[rank], then
/// f32 values. Parameters come first in name order, then optimizer slots
/// named "optimizer.m/<param>" and "optimizer.v/<param>".
std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
/// Throws MagicError, VersionError, TruncatedError, ChecksumError or
/// FormatError for the corresponding defects.
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace msfpt
