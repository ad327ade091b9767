#pragma once

#include <cmath>
#include <cstdint>

namespace bdc {

// Counter-based generator: every draw is a pure function of
// (seed, stream, counter), so results do not depend on call order
// elsewhere in the program. Mixing is splitmix64-style.
inline std::uint64_t mix_bits(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline std::uint64_t hash3(std::uint64_t seed, std::uint64_t stream,
                           std::uint64_t counter) {
  std::uint64_t h = mix_bits(seed);
  h = mix_bits(h ^ (stream * 0xd6e8feb86659fd93ull));
  h = mix_bits(h ^ (counter * 0xa0761d6478bd642full));
  return h;
}

class Rng {
 public:
  Rng(std::uint64_t seed, std::uint64_t stream = 0)
      : seed_(seed), stream_(stream) {}

  // Uniform in [0, 1). 53 mantissa bits; exact same value on every platform.
  double uniform() {
    return static_cast<double>(hash3(seed_, stream_, counter_++) >> 11) *
           0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). Uses the modulo of a 64-bit draw; the bias is
  // negligible for the small n used here.
  std::uint64_t uniform_int(std::uint64_t n) {
    return hash3(seed_, stream_, counter_++) % n;
  }

  // Standard normal via Box-Muller. Deterministic per (seed, stream, counter)
  // on a given platform.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace bdc
