/*
 * Copyright 2026 the mrbc authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

#include "mrbc/error.hpp"

namespace mrbc {

namespace detail {

// splitmix64 finalizer; output is a strong 64-bit mix of the input.
inline std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  return h;
}

}  // namespace detail

/// Counter-based pseudo-random stream.
///
/// Every draw is a pure function of (key, counter); the counter advances by
/// one per draw. Streams are split by label or index into statistically
/// independent child streams, so the consumption order of one stream never
/// disturbs another. The (key, counter) pair is the complete state and can be
/// persisted in checkpoints.
class RngStream {
 public:
  RngStream() = default;

  static RngStream from_seed(std::uint64_t seed) {
    return RngStream(detail::mix64(seed + 0x9E3779B97F4A7C15ull), 0);
  }

  static RngStream from_state(std::uint64_t key, std::uint64_t counter) {
    return RngStream(key, counter);
  }

  /// Child stream derived from a label; independent of this stream's counter.
  RngStream split(std::string_view label) const {
    return RngStream(detail::mix64(key_ ^ kSplitTag ^ detail::fnv1a64(label)), 0);
  }

  /// Child stream derived from an index (e.g. per-epoch, per-image).
  RngStream split(std::uint64_t index) const {
    return RngStream(detail::mix64((key_ ^ kSplitTag) + index * 0xD1342543DE82EF95ull), 0);
  }

  std::uint64_t next_u64() {
    return detail::mix64(key_ + (counter_++) * 0x9E3779B97F4A7C15ull);
  }

  /// Uniform double in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). Rejection sampling, bias-free.
  std::uint64_t uniform_index(std::uint64_t n) {
    if (n == 0) throw ContractError("RngStream::uniform_index: n must be positive");
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t v;
    do {
      v = next_u64();
    } while (v >= limit);
    return v % n;
  }

  /// Standard normal via Box-Muller. Consumes two draws per value.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

 private:
  RngStream(std::uint64_t key, std::uint64_t counter) : key_(key), counter_(counter) {}

  static constexpr std::uint64_t kSplitTag = 0xA5A5F00DCAFEBEEFull;

  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

}  // namespace mrbc
