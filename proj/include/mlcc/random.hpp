#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace mlcc {

using Rng = std::mt19937_64;

/// Derives an independent generator for a named stream ("sampling",
/// "augmentation", "init", "replay", ...) from one root seed.
Rng make_rng(std::uint64_t root_seed, std::string_view stream);

std::uint64_t derive_seed(std::uint64_t root_seed, std::string_view stream);

std::string save_rng(const Rng& rng);
Rng load_rng(const std::string& text);

}  // namespace mlcc
