#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <utility>

namespace hpguide {

using Rng = std::mt19937_64;

// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Counter-based child seed: depends only on (root, stream, index), never on
// the order in which children are created.
constexpr std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream,
                                    std::uint64_t index) {
  return mix64(mix64(root ^ mix64(stream)) + index);
}

namespace stream {
inline constexpr std::uint64_t kTree = 1;
inline constexpr std::uint64_t kFold = 2;
inline constexpr std::uint64_t kShuffle = 3;
inline constexpr std::uint64_t kHoldout = 4;
}  // namespace stream

// Uniform integer in [0, n). Rejection sampling keeps results identical
// across standard library implementations.
inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  const auto bound = static_cast<std::uint64_t>(n);
  const std::uint64_t limit = Rng::max() - (Rng::max() % bound);
  std::uint64_t draw = rng();
  while (draw >= limit) draw = rng();
  return static_cast<std::size_t>(draw % bound);
}

// Fisher-Yates.
template <typename T>
void shuffle(std::span<T> values, Rng& rng) {
  for (std::size_t i = values.size(); i > 1; --i) {
    std::swap(values[i - 1], values[uniform_index(rng, i)]);
  }
}

}  // namespace hpguide
