#pragma once
#include <cmath>
#include <cstdint>

namespace kandinsky::rng {

// Counter-based generator: every draw is a pure function of (seed, stream, counter),
// so replays are exact regardless of evaluation order or thread count.

inline uint64_t mix(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t derive(uint64_t seed, uint64_t stream, uint64_t counter = 0) {
  return mix(mix(mix(seed) ^ stream) ^ counter);
}

// uniform in [0,1), 53 random bits
inline double unit(uint64_t seed, uint64_t stream, uint64_t counter = 0) {
  return static_cast<double>(derive(seed, stream, counter) >> 11) * 0x1.0p-53;
}

// stream tags; arbitrary distinct constants
inline constexpr uint64_t kCalibEps = 0x636c6265ULL;    // calibration score noise
inline constexpr uint64_t kPredictEps = 0x70726465ULL;  // one draw per test point
inline constexpr uint64_t kTestTime = 0x74746370ULL;    // test-time QR noise
inline constexpr uint64_t kTrial = 0x7472696cULL;       // per-trial derived seeds
inline constexpr uint64_t kSynth = 0x73796e74ULL;       // synthetic data
inline constexpr uint64_t kShift = 0x73686674ULL;       // rejection sampling

// Sequential stream for bulk generation (synthetic data). Deterministic and
// platform-independent; normal draws use Box-Muller rather than std distributions.
class Stream {
 public:
  explicit Stream(uint64_t seed) : state_(mix(seed)) {}

  uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    uint64_t x = state_;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  }

  double unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    while (u1 <= 0.0) u1 = unit();
    double u2 = unit();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  // integer in [0, m)
  uint64_t below(uint64_t m) { return next_u64() % m; }

 private:
  uint64_t state_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace kandinsky::rng
