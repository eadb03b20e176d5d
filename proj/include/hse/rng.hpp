#pragma once

#include <cstdint>
#include <vector>

namespace hse {

// SplitMix64 stream. This is the single PRNG used everywhere randomness
// matters for reproducibility (synthetic data, shuffling, init, augmentation),
// so fixtures and runs agree bit-for-bit across platforms.
//
//   state += 0x9E3779B97F4A7C15
//   z = state
//   z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//   z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//   return z ^ (z >> 31)
class SplitMix64 {
 public:
  explicit SplitMix64(uint64_t seed = 0) : state_(seed) {}

  uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ULL;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1): 53 mantissa bits.
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform in [lo, hi).
  double next_double(double lo, double hi) {
    return lo + (hi - lo) * next_double();
  }

  // Uniform integer in [0, n). Rejection-free modulo is fine here: n is tiny
  // compared to 2^64, the bias is unobservable and the mapping stays fixed.
  uint64_t next_below(uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

  // Signed uniform integer in [-a, a].
  int64_t next_jitter(int64_t a) {
    return static_cast<int64_t>(next_below(2 * static_cast<uint64_t>(a) + 1)) - a;
  }

  bool next_bool() { return (next_u64() & 1ULL) != 0; }

  // Derive an independent stream. Mixing the label through the generator keeps
  // sub-streams decorrelated while staying a pure function of (seed, label).
  SplitMix64 fork(uint64_t label) {
    SplitMix64 mixer(state_ ^ (0xA0761D6478BD642FULL * (label + 1)));
    return SplitMix64(mixer.next_u64());
  }

  uint64_t state() const { return state_; }

 private:
  uint64_t state_;
};

// In-place Fisher-Yates driven by the stream.
template <class T>
void shuffle(std::vector<T>& v, SplitMix64& rng) {
  for (size_t i = v.size(); i > 1; --i) {
    size_t j = static_cast<size_t>(rng.next_below(i));
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace hse
