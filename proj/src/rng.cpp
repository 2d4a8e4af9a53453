#include "cmb/rng.hpp"

#include <cmath>

#include "cmb/normal.hpp"

namespace cmb {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b) {
    return splitmix64(splitmix64(splitmix64(master) ^ a) ^ (b * 0x632be59bd9b4e019ULL));
}

double uniform_open(Rng& rng) {
    return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
}

double std_normal(Rng& rng) { return norm_quantile(uniform_open(rng)); }

double std_exponential(Rng& rng) { return -std::log(uniform_open(rng)); }

}  // namespace cmb
