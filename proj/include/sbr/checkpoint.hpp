#pragma once

#include "sbr/tensor.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>

namespace sbr {

// Checkpoint file layout: one JSON header line
//   {"format":"sbr-ckpt-v1","meta":{...},"params":[{"name","shape"},...],"seed":N}
// followed by the parameter values as raw little-endian 64-bit reals,
// row-major per tensor, concatenated in header order.
inline constexpr const char* kCheckpointFormat = "sbr-ckpt-v1";

struct Checkpoint {
  nlohmann::json meta;
  ParamStore params;
  std::uint64_t seed = 0;
};

void save_checkpoint(const std::filesystem::path& path, const nlohmann::json& meta,
                     const ParamStore& params, std::uint64_t seed);

Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace sbr
