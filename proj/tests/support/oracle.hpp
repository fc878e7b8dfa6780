#pragma once

// Test-only oracles: exhaustive partition search and a seeded graph generator.

#include <cstdint>
#include <random>
#include <vector>

#include "droidlens/segmenter.hpp"

namespace droidlens::testing {

struct BruteForceResult {
  std::vector<int> community;
  double modularity = 0.0;
  long partitions = 0;
};

/// Evaluates every set partition (restricted growth strings). Q is computed
/// straight from the pair-sum definition, not through droidlens::modularity.
inline double pair_sum_modularity(const TransitionGraph& g, const std::vector<int>& c, bool newman = true) {
  const int n = g.node_count();
  const double m = g.total_weight();
  const auto k = g.degrees();
  double q = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (c[static_cast<std::size_t>(i)] != c[static_cast<std::size_t>(j)]) continue;
      const double a = i == j ? 0.0 : g.weight(i, j);
      const double null = newman ? k[static_cast<std::size_t>(i)] * k[static_cast<std::size_t>(j)] / (2 * m)
                                 : 1.0 / (2 * m);
      q += a - null;
    }
  return q / (2 * m);
}

inline BruteForceResult brute_force_max(const TransitionGraph& g, bool newman = true) {
  const int n = g.node_count();
  BruteForceResult best;
  best.modularity = -1e300;
  std::vector<int> rgs(static_cast<std::size_t>(n), 0);
  std::vector<int> maxima(static_cast<std::size_t>(n), 0);
  while (true) {
    ++best.partitions;
    const double q = pair_sum_modularity(g, rgs, newman);
    if (q > best.modularity + 1e-12) {
      best.modularity = q;
      best.community = rgs;
    }
    // next restricted growth string
    int i = n - 1;
    while (i > 0 && rgs[static_cast<std::size_t>(i)] > maxima[static_cast<std::size_t>(i - 1)]) --i;
    if (i <= 0) break;
    ++rgs[static_cast<std::size_t>(i)];
    for (int j = i + 1; j < n; ++j) {
      rgs[static_cast<std::size_t>(j)] = 0;
      maxima[static_cast<std::size_t>(j)] = std::max(maxima[static_cast<std::size_t>(j - 1)], 0);
    }
    maxima[static_cast<std::size_t>(i)] = std::max(maxima[static_cast<std::size_t>(i - 1)], rgs[static_cast<std::size_t>(i)]);
    for (int j = i + 1; j < n; ++j) maxima[static_cast<std::size_t>(j)] = maxima[static_cast<std::size_t>(i)];
  }
  return best;
}

/// 2..8 nodes, each pair joined with probability 1/2, weights uniform in (0, 1].
/// Regenerated until m > 0.
inline TransitionGraph random_graph(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> size(2, 8);
  std::bernoulli_distribution coin(0.5);
  std::uniform_real_distribution<double> weight(0.0, 1.0);
  while (true) {
    const int n = size(rng);
    TransitionGraph g(n);
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j)
        if (coin(rng)) g.add_edge(i, j, 1.0 - weight(rng));
    if (g.total_weight() > 0) return g;
  }
}

inline TransitionGraph two_cliques() {
  TransitionGraph g(6);
  for (int base : {0, 3})
    for (int i = 0; i < 3; ++i)
      for (int j = i + 1; j < 3; ++j) g.add_edge(base + i, base + j, 1.0);
  g.add_edge(2, 3, 0.1);
  return g;
}

}  // namespace droidlens::testing
