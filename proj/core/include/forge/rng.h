#ifndef FORGE_RNG_H_
#define FORGE_RNG_H_

#include <cstdint>
#include <random>
#include <string_view>

namespace forge {

// Seeded stream over std::mt19937_64. The integer and real mappings are
// written out here instead of using <random> distributions, whose outputs
// are implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t NextU64() { return engine_(); }
  // Uniform on [0, 1) with 53 random bits.
  double Uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double Uniform(double lo, double hi) { return lo + (hi - lo) * Uniform(); }
  // Uniform on [0, n); n must be > 0.
  std::uint64_t Below(std::uint64_t n);
  bool Bernoulli(double p) { return Uniform() < p; }

 private:
  std::mt19937_64 engine_;
};

// Derives an independent stream seed from a base seed, a purpose tag and an
// index (splitmix64 over an FNV-1a hash of the tag).
std::uint64_t DeriveSeed(std::uint64_t base, std::string_view tag,
                         std::uint64_t index = 0);

}  // namespace forge

#endif  // FORGE_RNG_H_
