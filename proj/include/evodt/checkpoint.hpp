#pragma once

#include <cstdint>
#include <filesystem>

#include "evodt/bytes.hpp"
#include "evodt/es.hpp"
#include "evodt/nn.hpp"

namespace evodt::checkpoint {

// Layout: "EVDT" magic, u32 version, policy spec, ES state, u64 config digest.
struct Checkpoint {
  nn::PolicySpec spec;
  es::EsState state;
  std::uint64_t config_digest = 0;

  bool operator==(const Checkpoint&) const = default;
};

inline constexpr std::uint32_t kVersion = 1;

/// Throws ContractError if theta does not fit the spec.
Bytes serialize(const Checkpoint& ckpt);
/// Throws DecodeError on bad magic, version or truncation.
Checkpoint deserialize(std::span<const std::uint8_t> bytes);

/// Writes to a sibling temp file and renames it into place.
void save(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load(const std::filesystem::path& path);

}  // namespace evodt::checkpoint
