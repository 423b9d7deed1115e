#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace mgan {

using Rng = std::mt19937_64;

std::uint64_t splitmix64(std::uint64_t x);
/// Deterministic child seed for a named random substream.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream, std::uint64_t index = 0);

/// Uniform in [0, 1) with 53 random bits.
double uniform01(Rng& rng);
/// Box-Muller draw that consumes exactly two engine outputs and caches nothing,
/// so the engine state alone determines the stream.
double standard_normal(Rng& rng);
/// Uniform integer in [0, n).
std::uint64_t uniform_index(Rng& rng, std::uint64_t n);

/// Fisher-Yates driven by uniform_index, so orderings are identical across standard libraries.
template <class T>
void shuffle_in_place(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[uniform_index(rng, i)]);
}

std::string serialize_rng(const Rng& rng);
Rng deserialize_rng(const std::string& state);

}  // namespace mgan
