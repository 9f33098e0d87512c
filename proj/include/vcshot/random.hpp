#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace vcshot {

// SplitMix64 finaliser; used to derive independent child seeds.
std::uint64_t mix64(std::uint64_t x);

// Seed of the index-th child stream of `seed`. Children of distinct indices
// are decorrelated, so per-trial streams can run in any order.
std::uint64_t split_seed(std::uint64_t seed, std::uint64_t index);

// Thin wrapper over mt19937_64. The engine is fully specified by the
// standard; the draws below avoid the implementation-defined std::
// distributions so sequences are identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n);

  // k distinct indices from [0, n) in draw order (partial Fisher-Yates).
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k);

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace vcshot
