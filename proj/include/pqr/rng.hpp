#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace pqr {

// All randomness in the library flows through this header. std::mt19937_64
// is bit-reproducible across platforms, but the standard distributions are
// not, so uniform/normal draws are produced by hand from raw engine output.

inline uint64_t splitmix64(uint64_t& state) {
  state += 0x9e3779b97f4a7c15ull;
  uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Deterministic substream derivation: every component seeds its own stream
// from (root seed, purpose tag, indices), so parallel and serial schedules
// draw identical numbers.
inline uint64_t derive_seed(uint64_t root, std::initializer_list<uint64_t> path) {
  uint64_t s = root;
  uint64_t out = splitmix64(s);
  for (uint64_t p : path) {
    s ^= p + 0x9e3779b97f4a7c15ull + (out << 6) + (out >> 2);
    out = splitmix64(s);
  }
  return out;
}

namespace seed_tag {
// Purpose tags used in derive_seed paths.
constexpr uint64_t source = 0x01;
constexpr uint64_t distortion = 0x02;
constexpr uint64_t opinions = 0x03;
constexpr uint64_t split = 0x04;
constexpr uint64_t patches = 0x05;
constexpr uint64_t init = 0x06;
constexpr uint64_t shuffle = 0x07;
constexpr uint64_t dropout = 0x08;
constexpr uint64_t repetition = 0x09;
}  // namespace seed_tag

class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  uint64_t next_u64() { return eng_(); }

  // [0,1) with 53 random bits.
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller; no spare caching so the draw count per
  // call is fixed.
  double normal() {
    double u1 = 1.0 - uniform();  // (0,1]
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  // Unbiased integer in [0,n) by rejection.
  uint64_t below(uint64_t n) {
    if (n == 0) return 0;
    uint64_t threshold = (0 - n) % n;
    for (;;) {
      uint64_t r = eng_();
      if (r >= threshold) return r % n;
    }
  }

  int uniform_int(int lo, int hi) {  // inclusive bounds
    return lo + static_cast<int>(below(static_cast<uint64_t>(hi - lo + 1)));
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 eng_;
};

}  // namespace pqr
