#pragma once

#include <cmath>
#include <cstdint>

namespace gens {

inline uint64_t splitmix64(uint64_t& x) {
  uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// xoshiro256** seeded from an arbitrary list of stream identifiers.
// Streams built from the same identifiers always produce the same sequence,
// independent of platform, thread count, or call site.
class Rng {
 public:
  explicit Rng(uint64_t seed, uint64_t stream = 0, uint64_t substream = 0, uint64_t index = 0) {
    uint64_t x = seed;
    x ^= 0x632be59bd9b4e019ULL + splitmix64(stream);
    x ^= splitmix64(substream) + (splitmix64(index) << 1);
    for (auto& s : s_) s = splitmix64(x);
  }

  uint64_t next_u64() {
    const uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform in [0, 1).
  double uniform() { return (next_u64() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n).
  uint64_t uniform_idx(uint64_t n) { return n ? next_u64() % n : 0; }

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform(), u2 = uniform();
    while (u1 <= 1e-300) u1 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  uint64_t s_[4];
  double spare_ = 0.0;
  bool have_spare_ = false;
};

// Stable stream ids, one per consumer of randomness. Keeping streams separate
// means toggling one feature never shifts the random numbers seen by another.
enum class Stream : uint64_t {
  Init = 1,
  PixelBatch = 2,
  Stratify = 3,
  Importance = 4,
  EikonalPoints = 5,
  TvSamples = 6,
  ViewContrast = 7,
  DistillJitter = 8,
  Rig = 9,
  Texture = 10,
  MeshSample = 11,
  Test = 12,
};

inline Rng make_rng(uint64_t seed, Stream stream, uint64_t substream = 0, uint64_t index = 0) {
  return Rng(seed, static_cast<uint64_t>(stream), substream, index);
}

}  // namespace gens
