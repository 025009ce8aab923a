#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <string_view>
#include <utility>
#include <vector>

namespace skewprune {

/// Counter-based pseudo-random generator (SplitMix64 finalizer over a
/// key+counter pair). Every consumer derives its own child stream from an
/// immutable key, so draw order in one stream never perturbs another. All
/// model initialization, shuffling, data synthesis, and federated client
/// seeding flow through this type; nothing in the library touches
/// std::random_device or global state.
class Rng {
 public:
  explicit Rng(uint64_t seed) : key_(mix(seed ^ 0x7c3de2a85c16f00bULL)) {}

  /// Child stream, independent of this stream's draw position. The mix is
  /// applied after folding the tag in, so derivation composes: chains are
  /// order-sensitive and repeated tags do not cancel.
  Rng derive(uint64_t tag) const { return Rng(mix(key_ ^ mix(tag ^ 0x9e3779b97f4a7c15ULL)), 0); }
  Rng derive(std::string_view tag) const { return derive(fnv1a(tag)); }

  uint64_t key() const { return key_; }

  uint64_t next_u64() {
    counter_ += 0x9e3779b97f4a7c15ULL;
    return mix(counter_ ^ key_);
  }

  /// Uniform double in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [lo, hi). Fixed-point multiply, no rejection loop.
  /// Integer in the closed range [lo, hi] via fixed-point scaling (one draw,
  /// no rejection loop, so draw counts stay position-independent).
  int64_t uniform_int(int64_t lo, int64_t hi) {
    const auto range = static_cast<uint64_t>(hi - lo) + 1;
    const auto r = static_cast<uint64_t>((static_cast<__uint128_t>(next_u64()) * range) >> 64);
    return lo + static_cast<int64_t>(r);
  }

  /// Standard normal via Box-Muller; consumes exactly two draws per call.
  double normal() {
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  /// Normal(0, std) resampled until within clip_sigmas standard deviations.
  float trunc_normal(float std_dev, double clip_sigmas = 2.0) {
    double z = normal();
    while (z < -clip_sigmas || z > clip_sigmas) z = normal();
    return static_cast<float>(z * std_dev);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (int64_t i = static_cast<int64_t>(v.size()) - 1; i > 0; --i) {
      std::swap(v[i], v[uniform_int(0, i)]);
    }
  }

  static uint64_t fnv1a(std::string_view s) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (const char c : s) {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001b3ULL;
    }
    return h;
  }

  static uint64_t mix(uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  Rng(uint64_t key, int) : key_(key) {}

  uint64_t key_;
  uint64_t counter_ = 0;
};

/// Key for a derived stream addressed by a path of tags, e.g.
/// {seed, round, client}. Used for federated client streams.
uint64_t derive_key(uint64_t seed, std::initializer_list<uint64_t> path);

}  // namespace skewprune
