#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace sixmap {

using Rng = std::mt19937_64;

// Derives an independent seed for a named substream of `root`.  All
// randomness in the pipeline flows from one root seed through named
// substreams such as ("split", entity_id), so stages and entities can be
// re-run in isolation and still see the same draws.
std::uint64_t derive_seed(std::uint64_t root, std::string_view name);
std::uint64_t derive_seed(std::uint64_t root, std::string_view name,
                          std::string_view sub);
std::uint64_t derive_seed(std::uint64_t root, std::string_view name,
                          std::uint64_t index);

inline Rng make_rng(std::uint64_t seed) { return Rng(seed); }

// Uniform integer in [0, n).  Implemented directly on the engine output so
// that draws do not depend on the standard library's distribution code.
std::size_t uniform_index(Rng& rng, std::size_t n);

// Uniform double in [0, 1).
double uniform01(Rng& rng);

// Standard normal draw (Box-Muller on uniform01).
double standard_normal(Rng& rng);

// Fisher-Yates shuffle driven by uniform_index.
template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::size_t j = uniform_index(rng, i);
    std::swap(v[i - 1], v[j]);
  }
}

// k distinct indices from [0, n), in draw order.
std::vector<std::size_t> sample_without_replacement(Rng& rng, std::size_t n,
                                                    std::size_t k);

}  // namespace sixmap
