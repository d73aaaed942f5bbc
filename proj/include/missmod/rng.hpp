#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace missmod {

using Rng = std::mt19937_64;

// Independent stream for one run component ("data", "init", "split", ...):
// mixes the run seed with the component name so changing how one component
// draws numbers never shifts another's.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view component);
Rng make_rng(std::uint64_t seed, std::string_view component);

std::vector<double> normal_values(Rng& rng, std::size_t count, double stddev);

// Fisher-Yates with a portable index draw, so orders are identical across
// standard library implementations.
template <typename T>
void shuffle(std::vector<T>& items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(items[i - 1], items[j]);
  }
}

std::uint64_t fnv1a(std::string_view text);

}  // namespace missmod
