#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <utility>

namespace countlab {

/// splitmix64 finalizer; used to derive independent stream seeds.
std::uint64_t mix64(std::uint64_t x);

/// Stable 64-bit FNV-1a hash of a byte string.
std::uint64_t fnv1a64(std::string_view bytes);

/// Derives a seed for one logical stream (tag) and item index from a root seed.
std::uint64_t derive_seed(std::uint64_t root, std::string_view tag, std::uint64_t index = 0);

/// Platform-stable random source.
///
/// std::mt19937_64 has a fully specified output sequence, but the standard
/// distributions and std::shuffle do not, so every draw used for generated
/// data goes through the helpers below.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  /// Uniform integer in [0, bound). bound must be positive.
  std::uint64_t below(std::uint64_t bound);

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform01();

  /// Standard normal draw (Box-Muller).
  double normal();

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace countlab
