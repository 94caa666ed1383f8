#pragma once

#include <cstdint>
#include <random>

namespace fedptr::rng {

// Stream tags, combined with the experiment seed to derive independent
// engines. Keeping every consumer on its own stream means adding or
// removing one draw site cannot perturb the others.
enum class Tag : std::uint64_t {
  dataset = 0x11,
  partition = 0x22,
  aux_init = 0x33,
  participant = 0x44,
  shuffle = 0x55,
  model_init = 0x66,
  test_data = 0x77,
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Derived seed for handing to a sub-component that builds its own streams.
inline std::uint64_t mix(std::uint64_t seed, std::uint64_t a,
                         std::uint64_t b = 0) {
  return splitmix64(splitmix64(splitmix64(seed) ^ a) ^ b);
}

// Engine for (seed, tag, a, b), e.g. (seed, shuffle, client, round).
inline std::mt19937_64 stream(std::uint64_t seed, Tag tag, std::uint64_t a = 0,
                              std::uint64_t b = 0) {
  std::uint64_t s = splitmix64(seed);
  s = splitmix64(s ^ static_cast<std::uint64_t>(tag));
  s = splitmix64(s ^ a);
  s = splitmix64(s ^ b);
  return std::mt19937_64(s);
}

}  // namespace fedptr::rng
