#include "skewprune/rng.hpp"

namespace skewprune {

uint64_t derive_key(uint64_t seed, std::initializer_list<uint64_t> path) {
  Rng r(seed);
  for (const uint64_t tag : path) r = r.derive(tag);
  return r.key();
}

}  // namespace skewprune
