#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <utility>

namespace uu {

// Derives an independent stream seed from a base seed and a stream id
// (splitmix64 finalizer over the combined words).
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

// mt19937_64 with portable uniform/normal conversions, so draws are
// identical across standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  // Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  double normal();
  // Uniform integer in [0, n).
  std::size_t below(std::size_t n);

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[below(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace uu
