#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

#include "flexclip/matrix.hpp"

namespace flexclip {

using Rng = std::mt19937_64;

/// Seed of the named stream `name` under `base`. Streams are independent.
std::uint64_t stream_seed(std::uint64_t base, std::string_view name);
inline Rng make_stream(std::uint64_t base, std::string_view name) {
  return Rng(stream_seed(base, name));
}

Matrix standard_normal(std::size_t rows, std::size_t cols, Rng& rng);
Matrix uniform(std::size_t rows, std::size_t cols, Real lo, Real hi, Rng& rng);

std::string serialize_rng(const Rng& rng);
Rng deserialize_rng(const std::string& text);

}  // namespace flexclip
