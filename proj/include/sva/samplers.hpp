#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

#include "sva/allocation.hpp"

// Generative samplers for the CRP and IBP. Both are sequential, take an
// explicit 64-bit seed, and emit canonical allocations so equality checks
// against enumerated configurations are exact.

namespace sva {

namespace detail {

// splitmix64 finalizer. Sequential raw seeds produce correlated early
// mt19937_64 output; mixing first makes seeds 0,1,2,... usable as
// independent stream identifiers.
inline std::mt19937_64 seeded_engine(std::uint64_t seed) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  z ^= z >> 31;
  return std::mt19937_64(z);
}

}  // namespace detail

inline Clustering sample_crp(Eigen::Index n, double theta, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("sample_crp: N must be >= 1");
  if (theta <= 0.0) throw std::invalid_argument("sample_crp: theta must be > 0");
  std::mt19937_64 rng = detail::seeded_engine(seed);
  std::vector<int> labels(n);
  std::vector<double> counts;  // table occupancies
  labels[0] = 0;
  counts.push_back(1.0);
  for (Eigen::Index i = 1; i < n; ++i) {
    std::vector<double> w = counts;
    w.push_back(theta);
    std::discrete_distribution<int> pick(w.begin(), w.end());
    const int table = pick(rng);
    if (table == static_cast<int>(counts.size()))
      counts.push_back(1.0);
    else
      counts[table] += 1.0;
    labels[i] = table;
  }
  return canonicalize(FeatureAllocation::fromLabels(labels));
}

inline FeatureAllocation sample_ibp(Eigen::Index n, double gamma, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("sample_ibp: N must be >= 1");
  if (gamma <= 0.0) throw std::invalid_argument("sample_ibp: gamma must be > 0");
  std::mt19937_64 rng = detail::seeded_engine(seed);
  std::vector<FeatureAllocation::Column> dishes;
  std::vector<Eigen::Index> counts;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < dishes.size(); ++k) {
      std::bernoulli_distribution take(static_cast<double>(counts[k]) /
                                       static_cast<double>(i + 1));
      if (take(rng)) {
        dishes[k][i] = 1;
        ++counts[k];
      }
    }
    std::poisson_distribution<int> fresh(gamma / static_cast<double>(i + 1));
    const int new_dishes = fresh(rng);
    for (int j = 0; j < new_dishes; ++j) {
      FeatureAllocation::Column c(n, 0);
      c[i] = 1;
      dishes.push_back(std::move(c));
      counts.push_back(1);
    }
  }
  return canonicalize(FeatureAllocation(n, std::move(dishes)));
}

}  // namespace sva
