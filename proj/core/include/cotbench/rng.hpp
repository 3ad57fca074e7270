#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <utility>

namespace cotbench {

// Derives an independent 64-bit substream seed from a base seed and a label
// (stage name, sample id, ...). Stable across platforms and releases.
std::uint64_t derive_seed(std::uint64_t base, std::string_view label);

// Portable seeded generator. std::shuffle and the std distributions are
// implementation-defined, so bounded draws and shuffles are done here on top
// of mt19937_64, whose output sequence is fixed by the standard.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  // Uniform integer in [0, bound). bound must be > 0.
  std::uint64_t below(std::uint64_t bound);

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      using std::swap;
      swap(items[i - 1], items[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace cotbench
