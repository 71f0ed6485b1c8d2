#pragma once

// Counter-based random streams.
//
// Every sampling routine in the library takes a SeedSpec and is a pure
// function of it. A stream is Philox4x32-10 keyed by the master seed, with
// the stream id in the upper 64 bits of the 128-bit counter and the block
// index in the lower 64 bits. Distinct stream ids therefore address disjoint
// counter ranges: their outputs cannot overlap.

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>

namespace drl {

struct SeedSpec {
  std::uint64_t master_seed = 0;
  std::uint64_t stream_id = 0;

  // Derived stream for a sub-task (trial, layer, ...). Mixing keeps child ids
  // of different parents apart; the master seed is inherited.
  SeedSpec child(std::uint64_t index) const {
    return {master_seed, mix(stream_id ^ (0x9E3779B97F4A7C15ULL * (index + 1)))};
  }

  friend bool operator==(const SeedSpec&, const SeedSpec&) = default;

  // splitmix64 finalizer.
  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }
};

namespace philox {

using Counter = std::array<std::uint32_t, 4>;
using Key = std::array<std::uint32_t, 2>;

inline constexpr std::uint32_t kMul0 = 0xD2511F53;
inline constexpr std::uint32_t kMul1 = 0xCD9E8D57;
inline constexpr std::uint32_t kWeyl0 = 0x9E3779B9;
inline constexpr std::uint32_t kWeyl1 = 0xBB67AE85;

inline Counter round(const Counter& ctr, const Key& key) {
  const std::uint64_t p0 = static_cast<std::uint64_t>(kMul0) * ctr[0];
  const std::uint64_t p1 = static_cast<std::uint64_t>(kMul1) * ctr[2];
  const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
  const auto lo0 = static_cast<std::uint32_t>(p0);
  const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
  const auto lo1 = static_cast<std::uint32_t>(p1);
  return {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
}

// Philox4x32 with 10 rounds (Salmon et al., SC'11).
inline Counter block(Counter ctr, Key key) {
  for (int r = 0; r < 10; ++r) {
    ctr = round(ctr, key);
    if (r != 9) {
      key[0] += kWeyl0;
      key[1] += kWeyl1;
    }
  }
  return ctr;
}

}  // namespace philox

// Sequential view over one counter-based stream. Satisfies
// UniformRandomBitGenerator so it can drive <random> distributions.
class Stream {
 public:
  using result_type = std::uint32_t;

  explicit Stream(SeedSpec seed)
      : key_{static_cast<std::uint32_t>(seed.master_seed),
             static_cast<std::uint32_t>(seed.master_seed >> 32)},
        stream_hi_{static_cast<std::uint32_t>(seed.stream_id),
                   static_cast<std::uint32_t>(seed.stream_id >> 32)} {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() {
    if (pos_ == 4) refill();
    return buffer_[pos_++];
  }

  std::uint64_t next_u64() {
    const std::uint64_t hi = (*this)();
    return (hi << 32) | (*this)();
  }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform on (0, 1].
  double uniform_open_low() { return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller; the second variate of each pair is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double r = std::sqrt(-2.0 * std::log(uniform_open_low()));
    const double t = 2.0 * std::numbers::pi * uniform();
    spare_ = r * std::sin(t);
    has_spare_ = true;
    return r * std::cos(t);
  }

  // +1 or -1 with equal probability.
  double sign() { return ((*this)() & 1U) ? 1.0 : -1.0; }

  std::uint64_t blocks_consumed() const { return block_; }

 private:
  void refill() {
    const philox::Counter ctr{static_cast<std::uint32_t>(block_),
                              static_cast<std::uint32_t>(block_ >> 32), stream_hi_[0],
                              stream_hi_[1]};
    buffer_ = philox::block(ctr, key_);
    ++block_;
    pos_ = 0;
  }

  philox::Key key_;
  std::array<std::uint32_t, 2> stream_hi_;
  std::uint64_t block_ = 0;
  philox::Counter buffer_{};
  int pos_ = 4;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace drl
