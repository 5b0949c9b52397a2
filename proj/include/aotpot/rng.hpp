#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

#include "aotpot/tensor.hpp"

namespace aotpot {

using Rng = std::mt19937_64;

/// 64-bit FNV-1a.
constexpr std::uint64_t fnv1a(std::string_view text, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (char c : text) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Splits one run seed into independent named generators ("data", "init",
/// "noise", ...), so components can be reseeded without disturbing others.
class SeedSplitter {
 public:
  explicit SeedSplitter(std::uint64_t seed) : seed_(seed) {}

  std::uint64_t derive(std::string_view name) const { return splitmix64(seed_ ^ fnv1a(name)); }
  Rng stream(std::string_view name) const { return Rng(derive(name)); }
  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
};

std::string serialize_rng(const Rng& rng);
Rng deserialize_rng(const std::string& text);

Tensor randn(Shape shape, Rng& rng, double stddev = 1.0);
Tensor randu(Shape shape, Rng& rng, double lo, double hi);

}  // namespace aotpot
