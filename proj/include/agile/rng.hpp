#pragma once

#include <cstdint>
#include <string_view>

namespace agile {

/// SplitMix64 generator (Steele, Lea & Flood 2014): 64-bit state advanced by
/// the golden-ratio increment 0x9E3779B97F4A7C15, output through the
/// variant-13 finalizer. Streams are split by seeding a child with the mixed
/// parent state xor a mixed stream id, so any port implementing the same
/// three functions reproduces every stream bit for bit.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  static std::uint64_t mix(std::uint64_t z);

  std::uint64_t next();
  // 53-bit uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  // Standard normal by Box-Muller, cosine branch only (two uniforms per draw).
  double normal();

  // Independent child stream; does not advance this generator.
  SplitMix64 split(std::uint64_t stream) const;
  SplitMix64 split(std::string_view name) const;

  std::uint64_t state() const { return state_; }

 private:
  std::uint64_t state_;
};

// 64-bit FNV-1a.
std::uint64_t hash_name(std::string_view name);

}  // namespace agile
