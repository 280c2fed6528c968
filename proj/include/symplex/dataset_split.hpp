#pragma once

// Leakage-safe splitting: MIDI hashes and external track ids form a bipartite
// graph; each connected component lands in a single split.

#include <algorithm>
#include <array>
#include <cmath>
#include <istream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "symplex/error.hpp"
#include "symplex/rng.hpp"

namespace symplex {

struct IndexEntry {
  std::string hash;
  std::vector<std::string> tracks;
};

struct CorpusIndex {
  std::vector<IndexEntry> entries;
};

/// Lines "hash<TAB>track1,track2" (the track column is optional). Blank lines
/// and lines starting with '#' are ignored.
inline CorpusIndex parseCorpusIndex(std::istream& in) {
  CorpusIndex idx;
  std::unordered_map<std::string, std::size_t> seen;
  std::string line;
  std::size_t lineNo = 0;
  while (std::getline(in, line)) {
    ++lineNo;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    const auto where = "index line " + std::to_string(lineNo);
    std::vector<std::string> cols;
    std::stringstream ls(line);
    std::string col;
    while (std::getline(ls, col, '\t')) cols.push_back(col);
    if (cols.empty() || cols.size() > 2) throw Error(Errc::ParseError, where + ": expected hash[\\ttracks]");
    IndexEntry e;
    e.hash = cols[0];
    if (e.hash.empty() || e.hash.find_first_of(" ,") != std::string::npos)
      throw Error(Errc::ParseError, where + ": bad hash '" + e.hash + "'");
    if (cols.size() == 2) {
      std::stringstream ts(cols[1]);
      std::string t;
      while (std::getline(ts, t, ','))
        if (!t.empty()) e.tracks.push_back(t);
    }
    if (!seen.emplace(e.hash, lineNo).second) throw Error(Errc::ParseError, where + ": duplicate hash " + e.hash);
    idx.entries.push_back(std::move(e));
  }
  return idx;
}

/// Nodes 0..H-1 are hashes in index order, H.. are track ids in first-seen order.
struct BipartiteGraph {
  std::vector<std::string> hashes;
  std::vector<std::string> tracks;
  std::vector<std::pair<int, int>> edges;  // (hash node, track node)

  std::size_t nodeCount() const { return hashes.size() + tracks.size(); }
  bool isHash(int node) const { return node < static_cast<int>(hashes.size()); }
};

inline BipartiteGraph buildGraph(const CorpusIndex& index) {
  BipartiteGraph g;
  std::unordered_map<std::string, int> trackNode;
  for (const auto& e : index.entries) g.hashes.push_back(e.hash);
  const int H = static_cast<int>(g.hashes.size());
  for (int h = 0; h < H; ++h)
    for (const auto& t : index.entries[h].tracks) {
      auto [it, added] = trackNode.emplace(t, H + static_cast<int>(g.tracks.size()));
      if (added) g.tracks.push_back(t);
      g.edges.emplace_back(h, it->second);
    }
  std::sort(g.edges.begin(), g.edges.end());
  g.edges.erase(std::unique(g.edges.begin(), g.edges.end()), g.edges.end());
  return g;
}

class UnionFind {
 public:
  explicit UnionFind(std::size_t n) : parent_(n), rank_(n, 0) { std::iota(parent_.begin(), parent_.end(), 0); }
  int find(int x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }
  void unite(int a, int b) {
    a = find(a), b = find(b);
    if (a == b) return;
    if (rank_[a] < rank_[b]) std::swap(a, b);
    parent_[b] = a;
    if (rank_[a] == rank_[b]) ++rank_[a];
  }

 private:
  std::vector<int> parent_;
  std::vector<int> rank_;
};

/// Components as sorted node lists, ordered by their smallest node.
inline std::vector<std::vector<int>> connectedComponents(const BipartiteGraph& g) {
  const auto n = g.nodeCount();
  UnionFind uf(n);
  for (auto [a, b] : g.edges) uf.unite(a, b);
  std::vector<int> slot(n, -1);
  std::vector<std::vector<int>> comps;
  for (std::size_t v = 0; v < n; ++v) {
    const int root = uf.find(static_cast<int>(v));
    if (slot[root] < 0) {
      slot[root] = static_cast<int>(comps.size());
      comps.emplace_back();
    }
    comps[slot[root]].push_back(static_cast<int>(v));
  }
  return comps;
}

enum class Split { Train, Eval, Test };
inline constexpr std::array<Split, 3> kSplits = {Split::Train, Split::Eval, Split::Test};

inline std::string_view splitName(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Eval: return "eval";
    case Split::Test: return "test";
  }
  return "?";
}

/// Two-stage ratios: `test` held out first, then `eval` of the remainder.
struct SplitRatios {
  double test = 0.10;
  double eval = 0.10;

  std::array<double, 3> targets() const {
    return {(1.0 - test) * (1.0 - eval), (1.0 - test) * eval, test};
  }
};

struct SplitResult {
  std::vector<Split> assignment;  // per hash node
  std::array<std::size_t, 3> counts{};
  std::array<double, 3> realized{};
  std::vector<std::string> warnings;
};

/// Components holding a track go whole, largest first, into the split furthest
/// below its target count; unmatched hashes are shuffled and dealt out to fill
/// the remaining quotas.
inline SplitResult assignSplits(const BipartiteGraph& g, const std::vector<std::vector<int>>& comps,
                                const SplitRatios& ratios, std::uint64_t seed, double tolerance = 0.02) {
  if (!(ratios.test >= 0 && ratios.test < 1 && ratios.eval >= 0 && ratios.eval < 1))
    throw Error(Errc::InvalidArgument, "split ratios must lie in [0, 1)");
  const auto targets = ratios.targets();
  const std::size_t H = g.hashes.size();
  SplitResult r;
  r.assignment.assign(H, Split::Train);

  struct Group {
    std::vector<int> hashes;
    int firstNode;
  };
  std::vector<Group> linked;
  std::vector<int> isolated;
  for (const auto& c : comps) {
    Group grp{{}, c.front()};
    for (int v : c)
      if (g.isHash(v)) grp.hashes.push_back(v);
    if (grp.hashes.empty()) continue;
    if (c.size() == 1) isolated.push_back(grp.hashes.front());
    else linked.push_back(std::move(grp));
  }
  std::stable_sort(linked.begin(), linked.end(),
                   [](const Group& a, const Group& b) { return a.hashes.size() > b.hashes.size(); });

  std::array<double, 3> want{};
  for (std::size_t s = 0; s < 3; ++s) want[s] = targets[s] * static_cast<double>(H);
  auto place = [&](int hash, std::size_t s) {
    r.assignment[hash] = kSplits[s];
    ++r.counts[s];
  };
  for (const auto& grp : linked) {
    std::size_t best = 0;
    double bestDeficit = -1e300;
    for (std::size_t s = 0; s < 3; ++s) {
      const double deficit = want[s] - static_cast<double>(r.counts[s]);
      if (deficit > bestDeficit) best = s, bestDeficit = deficit;
    }
    for (int h : grp.hashes) place(h, best);
  }

  RandomStream rng(seed, StreamPurpose::Split, 0);
  for (std::size_t i = isolated.size(); i > 1; --i) std::swap(isolated[i - 1], isolated[rng.below(i)]);
  // Quotas by largest remainder over the final totals, minus what components took.
  std::array<std::size_t, 3> quota{};
  {
    std::array<std::size_t, 3> total{};
    std::size_t sum = 0;
    for (std::size_t s = 0; s < 3; ++s) sum += total[s] = static_cast<std::size_t>(std::floor(want[s]));
    std::array<std::size_t, 3> order = {0, 1, 2};
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return want[a] - std::floor(want[a]) > want[b] - std::floor(want[b]);
    });
    for (std::size_t k = 0; sum < H; ++k, ++sum) ++total[order[k % 3]];
    for (std::size_t s = 0; s < 3; ++s) quota[s] = total[s] > r.counts[s] ? total[s] - r.counts[s] : 0;
  }
  std::size_t next = 0;
  for (std::size_t s : {std::size_t{2}, std::size_t{1}})
    for (std::size_t k = 0; k < quota[s] && next < isolated.size(); ++k) place(isolated[next++], s);
  while (next < isolated.size()) place(isolated[next++], 0);

  for (std::size_t s = 0; s < 3; ++s) {
    r.realized[s] = H ? static_cast<double>(r.counts[s]) / static_cast<double>(H) : 0.0;
    if (H && std::abs(r.realized[s] - targets[s]) > tolerance) {
      std::ostringstream msg;
      msg << splitName(kSplits[s]) << " holds " << r.realized[s] * 100 << "% of hashes, target "
          << targets[s] * 100 << "%";
      r.warnings.push_back(msg.str());
    }
  }
  return r;
}

/// True when some component has hashes in two different splits.
inline bool anyComponentStraddles(const BipartiteGraph& g, const std::vector<std::vector<int>>& comps,
                                  const std::vector<Split>& assignment) {
  for (const auto& c : comps) {
    std::optional<Split> s;
    for (int v : c) {
      if (!g.isHash(v)) continue;
      if (s && *s != assignment[v]) return true;
      s = assignment[v];
    }
  }
  return false;
}

}  // namespace symplex
