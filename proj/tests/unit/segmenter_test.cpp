#include <gtest/gtest.h>

#include <cmath>

#include "droidlens/segmenter.hpp"
#include "support/fixtures.hpp"
#include "support/oracle.hpp"

using namespace droidlens;
using droidlens::testing::brute_force_max;
using droidlens::testing::history_of;
using droidlens::testing::pair_sum_modularity;
using droidlens::testing::random_graph;
using droidlens::testing::two_cliques;

TEST(Similarity, KnownPairs) {
  EXPECT_EQ(name_similarity("Check budget-2", "Setting-1"), 0.0);
  EXPECT_EQ(name_similarity("Add expense", "add EXPENSE-3"), 1.0);
  EXPECT_EQ(name_similarity("Add expense", "expense add"), 1.0);
  // {add, expense, record} vs {add, record}: 2 / sqrt(3 * 2)
  EXPECT_DOUBLE_EQ(name_similarity("Add expense record", "Add record"), 2.0 / std::sqrt(6.0));
  EXPECT_DOUBLE_EQ(name_similarity("Add expense", "Add income"), 0.5);
}

TEST(Similarity, EmptyAndDigitsOnly) {
  EXPECT_EQ(name_similarity("", "Setting"), 0.0);
  EXPECT_EQ(name_similarity("12", "12"), 0.0);
  EXPECT_EQ(tokenize_function_name("Add-expense 2, now!"), (std::set<std::string>{"add", "expense", "now"}));
}

TEST(Similarity, SymmetricOverVocabulary) {
  const std::vector<std::string> names{"Add expense", "Add expense-1", "Check budget-2", "Setting-1", "Dark mode",
                                       "Check records", "Set budget", "", "Budget setting", "Add"};
  for (const auto& a : names)
    for (const auto& b : names) {
      EXPECT_EQ(name_similarity(a, b), name_similarity(b, a)) << a << " / " << b;
      const double s = name_similarity(a, b);
      EXPECT_GE(s, 0.0);
      EXPECT_LE(s, 1.0);
    }
}

TEST(Graph, ValidatesEdges) {
  TransitionGraph g(3);
  EXPECT_THROW(g.add_edge(1, 1, 1.0), Error);
  EXPECT_THROW(g.add_edge(0, 3, 1.0), Error);
  EXPECT_THROW(g.add_edge(0, 1, -0.5), Error);
  EXPECT_THROW(g.add_edge(0, 1, std::nan("")), Error);
  g.add_edge(0, 1, 0.0);
  EXPECT_TRUE(g.edges().empty());
  g.add_edge(1, 0, 0.25);
  g.add_edge(0, 1, 0.5);
  EXPECT_EQ(g.edges(), (std::vector<WeightedEdge>{{0, 1, 0.75}}));
  EXPECT_THROW(TransitionGraph(-1), Error);
}

TEST(Graph, FromHistoryChainsConsecutiveSteps) {
  ImageStore images;
  const auto h = history_of({"Add expense", "Add expense", "Setting", "Dark setting"}, images);
  const auto g = build_graph(h);
  EXPECT_EQ(g.node_count(), 4);
  EXPECT_EQ(g.weight(0, 1), 1.0);
  EXPECT_EQ(g.weight(1, 2), 0.0);
  EXPECT_DOUBLE_EQ(g.weight(2, 3), 1.0 / std::sqrt(2.0));
  EXPECT_EQ(g.weight(0, 2), 0.0);
  EXPECT_EQ(build_graph(history_of({"A"}, images)).node_count(), 1);
  EXPECT_THROW(build_graph(TestingHistory{}), Error);
}

TEST(Modularity, HandExamples) {
  // Two disjoint unit edges split apart: each community in=1, W=2, m=2.
  TransitionGraph g(4);
  g.add_edge(0, 1, 1.0);
  g.add_edge(2, 3, 1.0);
  EXPECT_DOUBLE_EQ(modularity(g, {0, 0, 1, 1}), 0.5);
  EXPECT_NEAR(modularity(g, {0, 0, 0, 0}), 0.0, 1e-15);
  EXPECT_LE(modularity(g, {0, 1, 2, 3}), 0.0);
  EXPECT_THROW(modularity(TransitionGraph(2), {0, 1}), Error);
  EXPECT_THROW(modularity(g, {0, 1}), Error);
}

TEST(Modularity, AllInOneIsZero) {
  for (std::uint64_t seed = 1; seed <= 200; ++seed) {
    const auto g = random_graph(seed);
    EXPECT_NEAR(modularity(g, std::vector<int>(static_cast<std::size_t>(g.node_count()), 0)), 0.0, 1e-12) << seed;
  }
}

TEST(Modularity, MatchesPairSumDefinition) {
  std::mt19937_64 rng(99);
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    const auto g = random_graph(seed);
    std::vector<int> c(static_cast<std::size_t>(g.node_count()));
    for (auto& x : c) x = static_cast<int>(rng() % 3);
    EXPECT_NEAR(modularity(g, c), pair_sum_modularity(g, c, true), 1e-12);
    EXPECT_NEAR(modularity(g, c, ModularityVariant::Printed), pair_sum_modularity(g, c, false), 1e-12);
  }
}

TEST(Modularity, MergeGainEqualsDelta) {
  std::mt19937_64 rng(7);
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    const auto g = random_graph(seed);
    const int n = g.node_count();
    std::vector<int> c(static_cast<std::size_t>(n));
    for (auto& x : c) x = static_cast<int>(rng() % 3);
    if (std::count(c.begin(), c.end(), 0) == 0 || std::count(c.begin(), c.end(), 1) == 0) continue;
    double between = 0.0, ka = 0.0, kb = 0.0;
    const auto k = g.degrees();
    for (const auto& e : g.edges()) {
      const int cu = c[static_cast<std::size_t>(e.u)], cv = c[static_cast<std::size_t>(e.v)];
      if ((cu == 0 && cv == 1) || (cu == 1 && cv == 0)) between += e.weight;
    }
    for (int i = 0; i < n; ++i) {
      if (c[static_cast<std::size_t>(i)] == 0) ka += k[static_cast<std::size_t>(i)];
      if (c[static_cast<std::size_t>(i)] == 1) kb += k[static_cast<std::size_t>(i)];
    }
    auto merged = c;
    for (auto& x : merged)
      if (x == 1) x = 0;
    EXPECT_NEAR(modularity(g, merged) - modularity(g, c), merge_gain(between, ka, kb, g.total_weight()), 1e-12);
  }
}

TEST(Oracle, EnumeratesBellNumbers) {
  const long bell[] = {1, 2, 5, 15, 52, 203, 877, 4140};
  for (int n = 1; n <= 8; ++n) {
    TransitionGraph g(n);
    if (n > 1) g.add_edge(0, 1, 1.0);
    else continue;
    EXPECT_EQ(brute_force_max(g).partitions, bell[n - 1]) << n;
  }
}

TEST(Louvain, MatchesBruteForceOnSeededGraphs) {
  for (std::uint64_t seed = 1000; seed < 1100; ++seed) {
    const auto g = random_graph(seed);
    const auto best = brute_force_max(g);
    const auto p = louvain(g);
    EXPECT_NEAR(p.modularity, best.modularity, 1e-9) << "seed " << seed;
    EXPECT_NEAR(p.modularity, pair_sum_modularity(g, p.community), 1e-12);
  }
}

TEST(Louvain, PrintedVariantNeverBeatsBruteForce) {
  for (std::uint64_t seed = 1000; seed < 1050; ++seed) {
    const auto g = random_graph(seed);
    EXPECT_LE(louvain(g, ModularityVariant::Printed).modularity, brute_force_max(g, false).modularity + 1e-12);
  }
}

TEST(Louvain, TwoCliquesSplit) {
  const auto g = two_cliques();
  const auto p = louvain(g);
  EXPECT_EQ(p.community, (std::vector<int>{0, 0, 0, 1, 1, 1}));
  EXPECT_EQ(p.community, canonical_labels(brute_force_max(g).community));
}

TEST(Louvain, DegenerateGraphs) {
  const auto lone = louvain(TransitionGraph(1));
  EXPECT_EQ(lone.community, std::vector<int>{0});
  EXPECT_EQ(lone.modularity, 0.0);
  const auto empty = louvain(TransitionGraph(3));
  EXPECT_EQ(empty.community, (std::vector<int>{0, 1, 2}));
  EXPECT_THROW(louvain(TransitionGraph(0)), Error);

  TransitionGraph iso(4);
  iso.add_edge(0, 1, 1.0);
  const auto p = louvain(iso);
  EXPECT_NE(p.community[2], p.community[3]);
  EXPECT_NE(p.community[2], p.community[0]);
}

TEST(Louvain, DeterministicAndCanonical) {
  for (std::uint64_t seed = 1; seed <= 30; ++seed) {
    const auto g = random_graph(seed);
    const auto a = louvain(g), b = louvain(g);
    EXPECT_EQ(a, b);
    EXPECT_EQ(a.community, canonical_labels(a.community));
  }
}

TEST(Louvain, LongTraceStaysFast) {
  TransitionGraph g(400);
  for (int i = 0; i + 1 < 400; ++i) g.add_edge(i, i + 1, (i % 10 == 9) ? 0.1 : 1.0);
  const auto p = louvain(g);
  EXPECT_GT(p.modularity, 0.8);
}

TEST(CanonicalLabels, NumbersByFirstMember) {
  EXPECT_EQ(canonical_labels({5, 5, 2, 9, 2}), (std::vector<int>{0, 0, 1, 2, 1}));
}

TEST(Segments, GroupsChronologicallyAndInterleaves) {
  ImageStore images;
  const auto h = history_of({"Add expense", "Setting", "Add expense"}, images);
  const Partition p{{0, 1, 0}, 0.0};
  const auto s = segments(h, p);
  ASSERT_EQ(s.size(), 2u);
  EXPECT_EQ(s[0].community, 0);
  ASSERT_EQ(s[0].steps.size(), 2u);
  EXPECT_EQ(s[0].steps[0].seq, 0);
  EXPECT_EQ(s[0].steps[1].seq, 2);
  EXPECT_EQ(s[1].id, 1);
  EXPECT_EQ(s[1].steps[0].seq, 1);
  EXPECT_THROW(segments(h, Partition{{0, 1}, 0.0}), Error);
}

TEST(Segments, LongCommunitySplitsAtLargestGap) {
  ImageStore images;
  std::vector<std::string> names(20, "Add expense");
  const auto h = history_of(names, images);
  // community 0 holds 0..7 and 12..19 (16 steps, gap 8 -> 12), community 1 holds 8..11.
  std::vector<int> c(20, 0);
  for (int i = 8; i < 12; ++i) c[static_cast<std::size_t>(i)] = 1;
  const auto s = segments(h, Partition{c, 0.0});
  ASSERT_EQ(s.size(), 3u);
  EXPECT_EQ(s[0].steps.size(), 8u);
  EXPECT_EQ(s[1].community, 1);
  EXPECT_EQ(s[2].steps.size(), 8u);
  EXPECT_EQ(s[2].steps.front().seq, 12);
  for (const auto& seg : s) EXPECT_LE(seg.steps.size(), kMaxSubsequenceSteps);
}

TEST(Segments, ContiguousRunSplitsNearMiddle) {
  ImageStore images;
  const auto h = history_of(std::vector<std::string>(30, "Setting"), images);
  const auto s = segments(h, Partition{std::vector<int>(30, 0), 0.0});
  std::size_t total = 0;
  int last = -1;
  for (const auto& seg : s) {
    EXPECT_LE(seg.steps.size(), kMaxSubsequenceSteps);
    EXPECT_GT(seg.steps.front().seq, last);
    last = seg.steps.back().seq;
    total += seg.steps.size();
  }
  EXPECT_EQ(total, 30u);
  EXPECT_EQ(s.size(), 4u);  // 30 -> 15 + 15 -> 7 + 8 + 7 + 8
}

TEST(Partition, JsonRoundTrip) {
  const Partition p{{0, 0, 1}, 0.25};
  EXPECT_EQ(partition_from_json(partition_to_json(p, ModularityVariant::Newman)), p);
  EXPECT_THROW(partition_from_json(nlohmann::json::object()), Error);
}
