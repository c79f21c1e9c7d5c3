#pragma once

#include <cstdint>
#include <cmath>
#include <string_view>

namespace dentnet {

// Deterministic 64-bit generator used everywhere randomness is needed.
// The platform engines (mt19937 et al.) are never used: splits, augmentation
// draws and weight init must replay identically on every platform and
// standard library.
//
// Algorithm: xorshift64* (Marsaglia xorshift with a multiplicative output
// scramble), state seeded through one SplitMix64 step so that small or zero
// seeds still start from a well-mixed state.
class Prng {
 public:
  explicit Prng(std::uint64_t seed = 0) : state_(splitmix64(seed)) {
    if (state_ == 0) state_ = 0x9e3779b97f4a7c15ULL;
  }

  std::uint64_t next_u64() {
    std::uint64_t x = state_;
    x ^= x >> 12;
    x ^= x << 25;
    x ^= x >> 27;
    state_ = x;
    return x * 0x2545f4914f6cdd1dULL;
  }

  // uniform in [0, 1), 53-bit resolution
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // uniform in [lo, hi)
  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // uniform integer in [0, n); n must be > 0
  std::uint64_t next_below(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  bool bernoulli(double p) { return next_double() < p; }

  // standard normal via Box-Muller (fresh pair each call, no cached spare,
  // so the draw count per call is fixed)
  double gaussian() {
    double u1 = next_double();
    double u2 = next_double();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  static std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  }

 private:
  std::uint64_t state_;
};

// Stable 64-bit hash for deriving per-item seeds (FNV-1a over the bytes,
// then one SplitMix64 finalization). Used so that parallel or reordered
// generation of items cannot change any item's stream.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view tag) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : tag) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  h ^= master + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
  return Prng::splitmix64(h);
}

}  // namespace dentnet
