#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

namespace sarssl {

using Rng = std::mt19937_64;

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t hash_string(std::string_view s) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Derives an independent stream seed from a root seed and a path of
// integers (epoch, tile index, ...). Streams depend only on the path,
// never on evaluation order, which keeps runs worker-count independent.
constexpr std::uint64_t derive_seed(std::uint64_t root,
                                    std::initializer_list<std::uint64_t> path) noexcept {
  std::uint64_t s = splitmix64(root);
  for (auto p : path) s = splitmix64(s ^ splitmix64(p + 0x632be59bd9b4e019ULL));
  return s;
}

inline Rng make_rng(std::uint64_t root, std::initializer_list<std::uint64_t> path = {}) {
  return Rng(derive_seed(root, path));
}

// Standard normal truncated to [-2, 2] by rejection, scaled by `stddev`.
template <class T>
T truncated_normal(Rng& rng, T stddev) {
  std::normal_distribution<double> normal(0.0, 1.0);
  for (;;) {
    double z = normal(rng);
    if (z >= -2.0 && z <= 2.0) return static_cast<T>(z * static_cast<double>(stddev));
  }
}

}  // namespace sarssl
