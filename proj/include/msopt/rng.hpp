#pragma once

#include <cmath>
#include <cstdint>

namespace msopt {

// Deterministic, splittable random source. We roll our own engine and
// distributions (xoshiro256** seeded through splitmix64, Box-Muller normals)
// instead of <random> because std distribution output is implementation
// defined and the whole pipeline has to be byte-reproducible from a seed,
// independent of standard library and worker count.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed) {
    std::uint64_t z = seed;
    for (auto& word : state_) {
      z += 0x9e3779b97f4a7c15ull;
      word = mix(z);
    }
  }

  // Independent child stream addressed by a tag. derive(a) and derive(b)
  // are decorrelated for a != b, and do not advance this stream.
  Rng derive(std::uint64_t tag) const {
    return Rng(mix(seed_ ^ mix(tag + 0x9e3779b97f4a7c15ull)));
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform in [0, 1), 53-bit resolution.
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  double normal(double mu, double sigma) {
    // Box-Muller, one value per pair of uniforms.
    const double u1 = next_double();
    const double u2 = next_double();
    const double r = std::sqrt(-2.0 * std::log1p(-u1));
    return mu + sigma * r * std::cos(6.283185307179586476925286766559 * u2);
  }

  // Uniform index in [0, n).
  std::size_t index(std::size_t n) {
    return static_cast<std::size_t>(next_double() * static_cast<double>(n)) % n;
  }

  std::uint64_t seed() const { return seed_; }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }
  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  std::uint64_t seed_;
  std::uint64_t state_[4];
};

}  // namespace msopt
