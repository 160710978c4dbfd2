#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>

namespace stclip {

std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 1469598103934665603ull);

/// Named seed substream: the same (seed, name) always yields the same engine.
std::mt19937_64 substream(std::uint64_t seed, const std::string& name);

}  // namespace stclip
