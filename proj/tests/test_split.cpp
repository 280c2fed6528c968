#include <queue>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "support.hpp"
#include "symplex/dataset_split.hpp"
#include "symplex/token_io.hpp"

using namespace symplex;

namespace {

CorpusIndex randomIndex(std::mt19937_64& rng, int hashes, int trackPool, double linkedFraction) {
  CorpusIndex idx;
  for (int h = 0; h < hashes; ++h) {
    IndexEntry e;
    e.hash = "h" + std::to_string(h);
    if (std::uniform_real_distribution<double>(0, 1)(rng) < linkedFraction) {
      const int n = std::uniform_int_distribution<int>(1, 3)(rng);
      for (int i = 0; i < n; ++i) e.tracks.push_back("t" + std::to_string(rng() % trackPool));
    }
    idx.entries.push_back(e);
  }
  return idx;
}

// Component labels by BFS over hash-track adjacency, straight from the index.
std::vector<int> bfsLabels(const CorpusIndex& idx) {
  std::map<std::string, std::vector<int>> byTrack;
  for (std::size_t h = 0; h < idx.entries.size(); ++h)
    for (const auto& t : idx.entries[h].tracks) byTrack[t].push_back(static_cast<int>(h));
  std::vector<int> label(idx.entries.size(), -1);
  int next = 0;
  for (std::size_t start = 0; start < idx.entries.size(); ++start) {
    if (label[start] >= 0) continue;
    std::queue<int> q;
    q.push(static_cast<int>(start));
    label[start] = next;
    while (!q.empty()) {
      const int h = q.front();
      q.pop();
      for (const auto& t : idx.entries[h].tracks)
        for (int o : byTrack[t])
          if (label[o] < 0) label[o] = next, q.push(o);
    }
    ++next;
  }
  return label;
}

// True when every track's hashes share one split.
bool oracleNoStraddle(const CorpusIndex& idx, const std::vector<Split>& a) {
  std::map<std::string, std::set<Split>> seen;
  for (std::size_t h = 0; h < idx.entries.size(); ++h)
    for (const auto& t : idx.entries[h].tracks) seen[t].insert(a[h]);
  return std::all_of(seen.begin(), seen.end(), [](const auto& kv) { return kv.second.size() == 1; });
}

}  // namespace

TEST(Split, ParseIndex) {
  std::istringstream in("# comment\nabc\tt1,t2\n\ndef\nghi\tt2\r\n");
  const auto idx = parseCorpusIndex(in);
  ASSERT_EQ(idx.entries.size(), 3u);
  EXPECT_EQ(idx.entries[0].tracks, (std::vector<std::string>{"t1", "t2"}));
  EXPECT_TRUE(idx.entries[1].tracks.empty());
  EXPECT_EQ(idx.entries[2].tracks, (std::vector<std::string>{"t2"}));
  std::istringstream dup("a\nb\na\n");
  EXPECT_THROW(parseCorpusIndex(dup), Error);
  std::istringstream extra("a\tb\tc\n");
  EXPECT_THROW(parseCorpusIndex(extra), Error);
  std::istringstream space("a b\tt\n");
  EXPECT_THROW(parseCorpusIndex(space), Error);
}

TEST(Split, ComponentsMatchBfs) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const auto idx = randomIndex(rng, 300, 120, 0.6);
    const auto g = buildGraph(idx);
    const auto comps = connectedComponents(g);
    const auto labels = bfsLabels(idx);
    std::vector<int> ours(idx.entries.size(), -1);
    for (std::size_t c = 0; c < comps.size(); ++c)
      for (int v : comps[c])
        if (g.isHash(v)) ours[v] = static_cast<int>(c);
    // Same partition: label pairs correspond one to one.
    std::map<int, int> fwd, back;
    for (std::size_t h = 0; h < labels.size(); ++h) {
      auto [it, added] = fwd.emplace(labels[h], ours[h]);
      EXPECT_EQ(it->second, ours[h]);
      auto [jt, added2] = back.emplace(ours[h], labels[h]);
      EXPECT_EQ(jt->second, labels[h]);
    }
  }
}

TEST(Split, NoComponentStraddles) {
  std::mt19937_64 rng(6);
  const auto idx = randomIndex(rng, 10000, 3000, 0.5);
  const auto g = buildGraph(idx);
  const auto comps = connectedComponents(g);
  const auto r = assignSplits(g, comps, {}, 1);
  EXPECT_TRUE(oracleNoStraddle(idx, r.assignment));
  EXPECT_FALSE(anyComponentStraddles(g, comps, r.assignment));
  EXPECT_EQ(r.counts[0] + r.counts[1] + r.counts[2], 10000u);
}

TEST(Split, SingletonRatios) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    CorpusIndex idx;
    for (int h = 0; h < 10000; ++h) idx.entries.push_back({"x" + std::to_string(h), {}});
    const auto g = buildGraph(idx);
    const auto r = assignSplits(g, connectedComponents(g), {}, seed);
    EXPECT_NEAR(r.realized[0], 0.81, 0.02);
    EXPECT_NEAR(r.realized[1], 0.09, 0.02);
    EXPECT_NEAR(r.realized[2], 0.10, 0.02);
    EXPECT_TRUE(r.warnings.empty());
  }
}

TEST(Split, DeterministicPerSeed) {
  std::mt19937_64 rng(8);
  const auto idx = randomIndex(rng, 500, 100, 0.3);
  const auto g = buildGraph(idx);
  const auto comps = connectedComponents(g);
  EXPECT_EQ(assignSplits(g, comps, {}, 4).assignment, assignSplits(g, comps, {}, 4).assignment);
  EXPECT_NE(assignSplits(g, comps, {}, 4).assignment, assignSplits(g, comps, {}, 5).assignment);
}

TEST(Split, GiantComponentWarns) {
  CorpusIndex idx;
  for (int h = 0; h < 100; ++h) idx.entries.push_back({"g" + std::to_string(h), {"shared"}});
  const auto g = buildGraph(idx);
  const auto r = assignSplits(g, connectedComponents(g), {}, 0);
  EXPECT_EQ(r.counts[0], 100u);
  EXPECT_FALSE(r.warnings.empty());
  EXPECT_THROW(assignSplits(g, connectedComponents(g), {1.0, 0.1}, 0), Error);
}

TEST(TokenIo, JsonlAndPackedRoundTrip) {
  const auto v = buildVocabulary();
  TokenDataset ds;
  ds.slots = 8;
  int i = 0;
  for (const auto& l : fixtures::toyDataset(v, 8)) {
    TokenRecord r;
    r.id = "rec" + std::to_string(i);
    r.tokens = l;
    if (i % 2) r.provenance.fileHash = "abcd", r.provenance.barOffset = i;
    if (i % 3 == 0) r.split = "eval";
    ds.records.push_back(r);
    ++i;
  }
  std::stringstream text;
  writeTokensJsonl(text, ds);
  EXPECT_EQ(readTokensJsonl(text), ds);
  EXPECT_EQ(unpackTokens(packTokens(ds)), ds);
  EXPECT_EQ(ds.loops("eval").size(), 3u);

  fixtures::ScratchDir dir("tokens");
  saveTokenDataset(ds, dir / "a.bin");
  saveTokenDataset(ds, dir / "a.jsonl");
  EXPECT_EQ(loadTokenDataset(dir / "a.bin"), ds);
  EXPECT_EQ(loadTokenDataset(dir / "a.jsonl"), ds);
}

TEST(TokenIo, RejectsBadInput) {
  std::istringstream noHeader(R"({"id":"x","tokens":[]})" "\n");
  EXPECT_THROW(readTokensJsonl(noHeader), Error);
  std::istringstream empty("");
  EXPECT_THROW(readTokensJsonl(empty), Error);
  TokenDataset ds;
  ds.slots = 1;
  TokenRecord r;
  r.id = "bad";
  r.tokens.slots = {inactiveTuple()};
  r.tokens.slots[0][0] = 200;
  ds.records.push_back(r);
  std::stringstream text;
  writeTokensJsonl(text, ds);
  EXPECT_THROW(readTokensJsonl(text), Error);
  auto packed = packTokens(TokenDataset{std::string(kVocabVersion), 1, {}});
  packed.resize(packed.size() - 2);
  EXPECT_THROW(unpackTokens(packed), Error);
}
