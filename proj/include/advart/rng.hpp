#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace advart {

inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Deterministic random stream. The engine is std::mt19937_64 (its output
// sequence is fixed by the standard); conversions to doubles/ranges are
// done by hand so streams are bit-stable across platforms and library
// versions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(mix64(seed)) {}

  // Independent substream keyed by (seed, ids...), e.g. (seed, scene, iter).
  static Rng derive(std::uint64_t seed, std::initializer_list<std::uint64_t> ids) {
    std::uint64_t h = mix64(seed);
    for (std::uint64_t id : ids) h = mix64(h ^ id);
    return Rng(h);
  }

  std::uint64_t next_u64() { return eng_(); }

  // [0,1)
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Unbiased integer in [0,n); rejection sampling.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t lim = ~0ULL - ~0ULL % n;
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= lim);
    return x % n;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 eng_;
};

}  // namespace advart
