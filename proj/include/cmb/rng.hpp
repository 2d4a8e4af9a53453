#pragma once

#include <cstdint>
#include <random>

namespace cmb {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer; used to derive independent stream seeds.
std::uint64_t splitmix64(std::uint64_t x);

/// Counter-based seed derivation: the same (master, a, b) always gives the
/// same stream seed, independent of the order streams are created in.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b = 0);

/// Uniform draw on the open interval (0, 1) from 53 random bits.
double uniform_open(Rng& rng);

/// Standard normal draw by inversion. Platform-independent given the
/// generator, unlike std::normal_distribution.
double std_normal(Rng& rng);

/// Standard exponential draw by inversion.
double std_exponential(Rng& rng);

}  // namespace cmb
