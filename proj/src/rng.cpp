#include "missmod/rng.hpp"

#include <cmath>
#include <numbers>

namespace missmod {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view component) {
  return splitmix64(splitmix64(seed) ^ fnv1a(component));
}

Rng make_rng(std::uint64_t seed, std::string_view component) { return Rng(derive_seed(seed, component)); }

std::vector<double> normal_values(Rng& rng, std::size_t count, double stddev) {
  // Box-Muller on 53-bit uniforms; std::normal_distribution is not
  // specified bit-for-bit across standard libraries.
  std::vector<double> out(count);
  auto uniform = [&rng] { return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53; };
  for (std::size_t i = 0; i < count; i += 2) {
    const double r = std::sqrt(-2.0 * std::log(uniform()));
    const double theta = 2.0 * std::numbers::pi * uniform();
    out[i] = stddev * r * std::cos(theta);
    if (i + 1 < count) out[i + 1] = stddev * r * std::sin(theta);
  }
  return out;
}

}  // namespace missmod
