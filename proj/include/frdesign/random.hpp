#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace frdesign {

using Rng = std::mt19937_64;

/// splitmix64 finalizer; used to derive independent seeds from (seed, tag) pairs.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t hash_string(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
  return mix64(seed ^ mix64(tag));
}

inline Rng make_stream(std::uint64_t seed, std::string_view name) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(hash_string(name)),
                    static_cast<std::uint32_t>(hash_string(name) >> 32)};
  return Rng(seq);
}

/// The named generators one session draws from. Keeping them apart means that,
/// for example, random design proposals never perturb the MCMC moves.
struct SessionStreams {
  Rng prior;
  Rng resample;
  Rng mcmc;
  Rng observation;
  Rng design;

  explicit SessionStreams(std::uint64_t seed)
      : prior(make_stream(seed, "prior")),
        resample(make_stream(seed, "resample")),
        mcmc(make_stream(seed, "mcmc")),
        observation(make_stream(seed, "observation")),
        design(make_stream(seed, "design")) {}
};

inline double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

}  // namespace frdesign
