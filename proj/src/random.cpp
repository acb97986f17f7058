#include "sixmap/random.hpp"

#include <cmath>
#include <numeric>
#include <numbers>

namespace sixmap {
namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t root, std::string_view name) {
  return splitmix64(splitmix64(root) ^ fnv1a(name));
}

std::uint64_t derive_seed(std::uint64_t root, std::string_view name,
                          std::string_view sub) {
  return splitmix64(derive_seed(root, name) ^ fnv1a(sub, 0x84222325cbf29ce4ULL));
}

std::uint64_t derive_seed(std::uint64_t root, std::string_view name,
                          std::uint64_t index) {
  return splitmix64(derive_seed(root, name) + splitmix64(index + 1));
}

std::size_t uniform_index(Rng& rng, std::size_t n) {
  if (n <= 1) return 0;
  // Rejection sampling removes modulo bias.
  const std::uint64_t bound = n;
  const std::uint64_t threshold = (0 - bound) % bound;
  std::uint64_t r;
  do {
    r = rng();
  } while (r < threshold);
  return static_cast<std::size_t>(r % bound);
}

double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

double standard_normal(Rng& rng) {
  double u1;
  do {
    u1 = uniform01(rng);
  } while (u1 <= 0.0);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::vector<std::size_t> sample_without_replacement(Rng& rng, std::size_t n,
                                                    std::size_t k) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (k > n) k = n;
  for (std::size_t i = 0; i < k; ++i) {
    std::size_t j = i + uniform_index(rng, n - i);
    std::swap(idx[i], idx[j]);
  }
  idx.resize(k);
  return idx;
}

}  // namespace sixmap
