#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "mtl/checksum.hpp"

namespace mtl {

/// Independent generator for a named purpose ("data", "init", "sampling",
/// "noise", ...) derived from one run seed.
inline std::mt19937_64 substream(std::uint64_t seed, std::string_view name) {
  const std::uint64_t h = fnv1a(name);
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
  return std::mt19937_64(seq);
}

/// 64-bit seed for a named purpose, for APIs that take a seed rather than a generator.
inline std::uint64_t substream_seed(std::uint64_t seed, std::string_view name) {
  return substream(seed, name)();
}

}  // namespace mtl
