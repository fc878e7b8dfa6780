#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "droidlens/error.hpp"
#include "droidlens/history.hpp"
#include "droidlens/text.hpp"

namespace droidlens {

// ---------------------------------------------------------------------------
// Function-name similarity

/// Lowercased alphanumeric tokens, pure-digit tokens (step ids) dropped.
inline std::set<std::string> tokenize_function_name(std::string_view name) {
  std::set<std::string> out;
  for (auto& tok : text::alnum_tokens(name))
    if (!text::is_all_digits(tok)) out.insert(std::move(tok));
  return out;
}

/// Cosine of binary token-incidence vectors; 0 when either side is empty.
inline double name_similarity(std::string_view a, std::string_view b) {
  const auto ta = tokenize_function_name(a);
  const auto tb = tokenize_function_name(b);
  if (ta.empty() || tb.empty()) return 0.0;
  std::size_t common = 0;
  for (const auto& t : ta) common += tb.count(t);
  if (common == ta.size() && common == tb.size()) return 1.0;
  return static_cast<double>(common) / std::sqrt(static_cast<double>(ta.size()) * static_cast<double>(tb.size()));
}

// ---------------------------------------------------------------------------
// Graph

struct WeightedEdge {
  int u = 0, v = 0;  // u < v
  double weight = 0.0;
  friend bool operator==(const WeightedEdge&, const WeightedEdge&) = default;
};

/// Undirected, no self-loops, parallel edges merged by summation.
class TransitionGraph {
 public:
  explicit TransitionGraph(int node_count = 0) : n_(node_count) {
    if (node_count < 0) throw Error(ErrorCode::InvalidArgument, "negative node count");
  }

  void add_edge(int a, int b, double w) {
    if (a == b) throw Error(ErrorCode::InvalidArgument, "self-loops are not allowed");
    if (a < 0 || b < 0 || a >= n_ || b >= n_) throw Error(ErrorCode::InvalidArgument, "edge endpoint out of range");
    if (!(w >= 0.0)) throw Error(ErrorCode::InvalidArgument, "edge weight must be >= 0");
    if (w == 0.0) return;
    weights_[{std::min(a, b), std::max(a, b)}] += w;
  }

  int node_count() const noexcept { return n_; }

  std::vector<WeightedEdge> edges() const {
    std::vector<WeightedEdge> out;
    for (const auto& [key, w] : weights_) out.push_back({key.first, key.second, w});
    return out;
  }

  double weight(int a, int b) const {
    const auto it = weights_.find({std::min(a, b), std::max(a, b)});
    return it == weights_.end() ? 0.0 : it->second;
  }

  /// m: sum of edge weights.
  double total_weight() const {
    double m = 0.0;
    for (const auto& [_, w] : weights_) m += w;
    return m;
  }

  std::vector<double> degrees() const {
    std::vector<double> k(static_cast<std::size_t>(n_), 0.0);
    for (const auto& [key, w] : weights_) {
      k[static_cast<std::size_t>(key.first)] += w;
      k[static_cast<std::size_t>(key.second)] += w;
    }
    return k;
  }

 private:
  int n_;
  std::map<std::pair<int, int>, double> weights_;
};

/// Consecutive steps joined with the similarity of their function names.
inline TransitionGraph build_graph(const TestingHistory& h) {
  if (h.steps.empty()) throw Error(ErrorCode::InvalidArgument, "build_graph needs at least one step");
  TransitionGraph g(static_cast<int>(h.steps.size()));
  for (std::size_t i = 0; i + 1 < h.steps.size(); ++i)
    g.add_edge(static_cast<int>(i), static_cast<int>(i + 1),
               name_similarity(h.steps[i].function_name, h.steps[i + 1].function_name));
  return g;
}

// ---------------------------------------------------------------------------
// Modularity

/// Newman: null term k_i k_j / 2m. Printed: constant 1 / 2m per node pair.
enum class ModularityVariant { Newman, Printed };

struct Partition {
  std::vector<int> community;  // contiguous ids, numbered by first member
  double modularity = 0.0;
  friend bool operator==(const Partition&, const Partition&) = default;
};

namespace detail {

/// Node "mass" in the null model for the chosen variant.
inline std::vector<double> node_masses(const TransitionGraph& g, ModularityVariant variant) {
  if (variant == ModularityVariant::Newman) return g.degrees();
  return std::vector<double>(static_cast<std::size_t>(g.node_count()), 1.0);
}

}  // namespace detail

/// Q = (1/2m) sum_ij [A_ij - null_ij] delta(c_i, c_j) over ordered pairs.
inline double modularity(const TransitionGraph& g, const std::vector<int>& community,
                         ModularityVariant variant = ModularityVariant::Newman) {
  if (static_cast<int>(community.size()) != g.node_count())
    throw Error(ErrorCode::InvalidArgument, "partition size does not match graph");
  const double m = g.total_weight();
  if (m <= 0.0) throw Error(ErrorCode::EmptyGraph, "modularity undefined for total weight 0");
  std::map<int, double> internal, mass;
  for (const auto& e : g.edges())
    if (community[static_cast<std::size_t>(e.u)] == community[static_cast<std::size_t>(e.v)])
      internal[community[static_cast<std::size_t>(e.u)]] += e.weight;
  const auto masses = detail::node_masses(g, variant);
  for (std::size_t i = 0; i < community.size(); ++i) mass[community[i]] += masses[i];
  double q = 0.0;
  for (const auto& [c, w] : mass) {
    const double in = internal.count(c) ? internal[c] : 0.0;
    q += in / m - (w / (2.0 * m)) * (w / (2.0 * m));
  }
  return q;
}

/// Change in Q from merging two disjoint groups with `between` edge weight
/// across them and null-model masses `mass_a`, `mass_b`.
inline double merge_gain(double between, double mass_a, double mass_b, double m) {
  return between / m - 2.0 * mass_a * mass_b / (4.0 * m * m);
}

/// Renumbers communities 0.. in order of their smallest member.
inline std::vector<int> canonical_labels(const std::vector<int>& community) {
  std::map<int, int> relabel;
  std::vector<int> out(community.size());
  for (std::size_t i = 0; i < community.size(); ++i) {
    auto [it, inserted] = relabel.try_emplace(community[i], static_cast<int>(relabel.size()));
    out[i] = it->second;
  }
  return out;
}

namespace detail {

struct LevelGraph {
  int n = 0;
  std::vector<std::vector<std::pair<int, double>>> adj;  // no self entries
  std::vector<double> self;                              // internal weight per node
  std::vector<double> mass;
};

inline LevelGraph level_from(const TransitionGraph& g, ModularityVariant variant) {
  LevelGraph lg;
  lg.n = g.node_count();
  lg.adj.resize(static_cast<std::size_t>(lg.n));
  lg.self.assign(static_cast<std::size_t>(lg.n), 0.0);
  lg.mass = node_masses(g, variant);
  for (const auto& e : g.edges()) {
    lg.adj[static_cast<std::size_t>(e.u)].emplace_back(e.v, e.weight);
    lg.adj[static_cast<std::size_t>(e.v)].emplace_back(e.u, e.weight);
  }
  return lg;
}

/// Local moving: nodes in ascending order, each moved to the neighbouring
/// community with the largest strictly positive gain. Returns true if any moved.
inline bool local_moving(const LevelGraph& lg, double m, std::vector<int>& comm) {
  constexpr double kEps = 1e-12;
  std::vector<double> comm_mass(static_cast<std::size_t>(lg.n), 0.0);
  for (int i = 0; i < lg.n; ++i) comm_mass[static_cast<std::size_t>(comm[static_cast<std::size_t>(i)])] += lg.mass[static_cast<std::size_t>(i)];
  bool any = false;
  bool moved = true;
  while (moved) {
    moved = false;
    for (int i = 0; i < lg.n; ++i) {
      const auto ui = static_cast<std::size_t>(i);
      const int own = comm[ui];
      std::map<int, double> links;
      for (const auto& [j, w] : lg.adj[ui]) links[comm[static_cast<std::size_t>(j)]] += w;
      const double mi = lg.mass[ui];
      comm_mass[static_cast<std::size_t>(own)] -= mi;
      const double own_links = links.count(own) ? links[own] : 0.0;
      const double stay = merge_gain(own_links, mi, comm_mass[static_cast<std::size_t>(own)], m);
      int best = own;
      double best_gain = stay;
      for (const auto& [c, w] : links) {
        if (c == own) continue;
        const double gain = merge_gain(w, mi, comm_mass[static_cast<std::size_t>(c)], m);
        if (gain > best_gain + kEps) {
          best_gain = gain;
          best = c;
        }
      }
      comm_mass[static_cast<std::size_t>(best)] += mi;
      if (best != own) {
        comm[ui] = best;
        moved = any = true;
      }
    }
  }
  return any;
}

inline LevelGraph aggregate(const LevelGraph& lg, const std::vector<int>& comm, int groups) {
  LevelGraph out;
  out.n = groups;
  out.adj.resize(static_cast<std::size_t>(groups));
  out.self.assign(static_cast<std::size_t>(groups), 0.0);
  out.mass.assign(static_cast<std::size_t>(groups), 0.0);
  std::vector<std::map<int, double>> acc(static_cast<std::size_t>(groups));
  for (int i = 0; i < lg.n; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    const auto ci = static_cast<std::size_t>(comm[ui]);
    out.mass[ci] += lg.mass[ui];
    out.self[ci] += lg.self[ui];
    for (const auto& [j, w] : lg.adj[ui]) {
      const int cj = comm[static_cast<std::size_t>(j)];
      if (cj == comm[ui]) {
        if (i < j) out.self[ci] += w;
      } else {
        acc[ci][cj] += w;
      }
    }
  }
  for (int c = 0; c < groups; ++c)
    for (const auto& [d, w] : acc[static_cast<std::size_t>(c)]) out.adj[static_cast<std::size_t>(c)].emplace_back(d, w);
  return out;
}

}  // namespace detail

namespace detail {

/// One Louvain pass from `comm`: local moving, aggregation, recursion on the
/// coarse graph, then local moving again on the projected membership
/// (multi-level refinement). Returns true if the membership changed.
inline bool louvain_level(const LevelGraph& lg, double m, std::vector<int>& comm) {
  bool changed = local_moving(lg, m, comm);
  comm = canonical_labels(comm);
  const int groups = *std::max_element(comm.begin(), comm.end()) + 1;
  if (groups == lg.n) return changed;
  const LevelGraph coarse = aggregate(lg, comm, groups);
  std::vector<int> cc(static_cast<std::size_t>(groups));
  std::iota(cc.begin(), cc.end(), 0);
  if (louvain_level(coarse, m, cc)) {
    for (auto& c : comm) c = cc[static_cast<std::size_t>(c)];
    comm = canonical_labels(comm);
    local_moving(lg, m, comm);
    comm = canonical_labels(comm);
    changed = true;
  }
  return changed;
}

/// Kernighan-Lin style pass: every node moves once, in order of best gain
/// (negative allowed, a fresh community counts as a target); the best prefix
/// of the move sequence is kept. Returns true if Q went up.
inline bool kl_refine(const LevelGraph& lg, double m, std::vector<int>& comm) {
  constexpr double kEps = 1e-12;
  const auto n = static_cast<std::size_t>(lg.n);
  std::vector<double> comm_mass(n, 0.0);
  std::vector<int> size(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    comm_mass[static_cast<std::size_t>(comm[i])] += lg.mass[i];
    ++size[static_cast<std::size_t>(comm[i])];
  }
  std::vector<bool> locked(n, false);
  std::vector<std::pair<int, int>> moves;  // node, previous community
  double running = 0.0, best = 0.0;
  std::size_t best_len = 0;

  for (std::size_t round = 0; round < n; ++round) {
    int pick = -1, target = -1;
    double pick_delta = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (locked[i]) continue;
      const int own = comm[i];
      std::map<int, double> links;
      for (const auto& [j, w] : lg.adj[i]) links[comm[static_cast<std::size_t>(j)]] += w;
      const double rest = comm_mass[static_cast<std::size_t>(own)] - lg.mass[i];
      const double stay = merge_gain(links.count(own) ? links[own] : 0.0, lg.mass[i], rest, m);
      std::vector<std::pair<int, double>> options;
      for (const auto& [c, w] : links)
        if (c != own) options.emplace_back(c, merge_gain(w, lg.mass[i], comm_mass[static_cast<std::size_t>(c)], m));
      if (size[static_cast<std::size_t>(own)] > 1) {
        const auto empty = std::find(size.begin(), size.end(), 0);
        if (empty != size.end()) options.emplace_back(static_cast<int>(empty - size.begin()), 0.0);
      }
      for (const auto& [c, gain] : options) {
        const double delta = gain - stay;
        if (pick < 0 || delta > pick_delta + kEps) {
          pick = static_cast<int>(i);
          target = c;
          pick_delta = delta;
        }
      }
    }
    if (pick < 0) break;
    const auto up = static_cast<std::size_t>(pick);
    moves.emplace_back(pick, comm[up]);
    comm_mass[static_cast<std::size_t>(comm[up])] -= lg.mass[up];
    --size[static_cast<std::size_t>(comm[up])];
    comm[up] = target;
    comm_mass[static_cast<std::size_t>(target)] += lg.mass[up];
    ++size[static_cast<std::size_t>(target)];
    locked[up] = true;
    running += pick_delta;
    if (running > best + kEps) {
      best = running;
      best_len = moves.size();
    }
  }
  for (std::size_t k = moves.size(); k > best_len; --k)
    comm[static_cast<std::size_t>(moves[k - 1].first)] = moves[k - 1].second;
  return best_len > 0;
}

}  // namespace detail

/// Traces longer than this skip the KL pass (quadratic per round).
inline constexpr int kRefineLimit = 400;

/// Two-phase Louvain (local moving, then aggregation) with refinement on the
/// way back down plus a KL pass, repeated until Q stops improving.
/// Deterministic; isolated nodes stay singletons; m == 0 gives all singletons with Q = 0.
inline Partition louvain(const TransitionGraph& g, ModularityVariant variant = ModularityVariant::Newman) {
  const int n = g.node_count();
  if (n < 1) throw Error(ErrorCode::InvalidArgument, "louvain needs at least one node");
  std::vector<int> membership(static_cast<std::size_t>(n));
  std::iota(membership.begin(), membership.end(), 0);
  const double m = g.total_weight();
  if (m <= 0.0) return {membership, 0.0};

  const detail::LevelGraph base = detail::level_from(g, variant);
  double q = modularity(g, membership, variant);
  while (true) {
    std::vector<int> next = membership;
    detail::louvain_level(base, m, next);
    if (n <= kRefineLimit) detail::kl_refine(base, m, next);
    const double nq = modularity(g, next, variant);
    if (nq <= q + 1e-12) break;
    membership = std::move(next);
    q = nq;
  }
  membership = canonical_labels(membership);
  return {membership, modularity(g, membership, variant)};
}

// ---------------------------------------------------------------------------
// Sub-sequences

inline constexpr std::size_t kMaxSubsequenceSteps = 12;

struct SubSequence {
  int id = 0;
  int community = 0;
  std::vector<StepRecord> steps;
};

namespace detail {

/// Splits chronologically sorted seqs into chunks of at most `cap`, cutting at
/// the largest gap between consecutive members (ties: closest to the middle).
inline std::vector<std::vector<int>> split_by_gaps(std::vector<int> seqs, std::size_t cap) {
  if (seqs.size() <= cap) return {std::move(seqs)};
  std::size_t cut = 1;
  int best_gap = -1;
  double best_mid = 0.0;
  const double mid = static_cast<double>(seqs.size()) / 2.0;
  for (std::size_t i = 1; i < seqs.size(); ++i) {
    const int gap = seqs[i] - seqs[i - 1];
    const double off = std::abs(static_cast<double>(i) - mid);
    if (gap > best_gap || (gap == best_gap && off < best_mid)) {
      best_gap = gap;
      best_mid = off;
      cut = i;
    }
  }
  auto left = split_by_gaps({seqs.begin(), seqs.begin() + static_cast<std::ptrdiff_t>(cut)}, cap);
  auto right = split_by_gaps({seqs.begin() + static_cast<std::ptrdiff_t>(cut), seqs.end()}, cap);
  left.insert(left.end(), right.begin(), right.end());
  return left;
}

}  // namespace detail

/// Groups steps by community (chronological inside), caps group length, and
/// orders sub-sequences by their earliest step.
inline std::vector<SubSequence> segments(const TestingHistory& h, const Partition& p,
                                         std::size_t max_steps = kMaxSubsequenceSteps) {
  if (p.community.size() != h.steps.size())
    throw Error(ErrorCode::InvalidArgument, "partition does not cover the history");
  std::map<int, std::vector<int>> groups;
  for (std::size_t i = 0; i < h.steps.size(); ++i) groups[p.community[i]].push_back(static_cast<int>(i));
  std::vector<std::pair<int, std::vector<int>>> chunks;
  for (auto& [c, seqs] : groups)
    for (auto& chunk : detail::split_by_gaps(std::move(seqs), std::max<std::size_t>(1, max_steps)))
      chunks.emplace_back(c, std::move(chunk));
  std::sort(chunks.begin(), chunks.end(), [](const auto& a, const auto& b) { return a.second.front() < b.second.front(); });
  std::vector<SubSequence> out;
  for (auto& [c, seqs] : chunks) {
    SubSequence s{static_cast<int>(out.size()), c, {}};
    for (int i : seqs) s.steps.push_back(h.steps[static_cast<std::size_t>(i)]);
    out.push_back(std::move(s));
  }
  return out;
}

inline nlohmann::json partition_to_json(const Partition& p, ModularityVariant variant) {
  return {{"schema", "droidlens.partition/1"},
          {"variant", variant == ModularityVariant::Newman ? "newman" : "printed"},
          {"community", p.community},
          {"modularity", p.modularity}};
}

inline Partition partition_from_json(const nlohmann::json& j) {
  try {
    return {j.at("community").get<std::vector<int>>(), j.at("modularity").get<double>()};
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::CorruptSession, std::string("partition: ") + e.what());
  }
}

}  // namespace droidlens
