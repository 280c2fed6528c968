#include <cmath>

#include <gtest/gtest.h>

#include "support.hpp"
#include "symplex/prior_io.hpp"
#include "symplex/tasks.hpp"

using namespace symplex;
using K = AttributeKind;

namespace {

bool clean(const SimplexState& p) { return checkSimplex(p).badRows == 0; }

std::size_t rowSupport(const VocabularyPrior& p, std::size_t s, K k) {
  const auto r = p.rows.row(s, k);
  return static_cast<std::size_t>(std::count_if(r.begin(), r.end(), [](double v) { return v > 0.0; }));
}

// Independent in-box test: melodic, onset tick within [begin, end), pitch within range.
bool oracleInBox(const TokenTuple& t, int begin, int end, int low, int high) {
  if (t[0] >= 17) return false;
  const int onset = t[2] * 24 + t[3];
  return t[1] < 127 && onset >= begin && onset < end && t[1] >= low && t[1] <= high;
}

Errc codeOf(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no exception";
  return Errc::IoError;
}

}  // namespace

TEST(Prior, UninformativeAndPointRows) {
  const auto p = priorUninformative(4);
  EXPECT_TRUE(validatePrior(p, 4).empty());
  EXPECT_EQ(validatePrior(p, 5).front().kind, PriorIssueKind::MalformedShape);

  SimplexState s{AttributeTensor(4, 0.0)};
  s.probs.forEachRow([](std::size_t, std::size_t, std::span<double> r) {
    for (std::size_t i = 0; i < r.size(); ++i) r[i] = 1.0 / static_cast<double>(r.size());
  });
  EXPECT_EQ(applyPrior(s, p), s);
  EXPECT_EQ(enforceHard(s, p), s);
}

TEST(Prior, ApplyRenormalizesProduct) {
  VocabularyPrior p = priorUninformative(1);
  auto r = p.rows.row(0, K::Velocity);
  std::fill(r.begin(), r.end(), 0.0);
  r[3] = 0.5, r[7] = 0.5;
  SimplexState s{AttributeTensor(1, 0.0)};
  s.probs.forEachRow([](std::size_t, std::size_t, std::span<double> row) { row[0] = 1.0; });
  auto row = s.probs.row(0, K::Velocity);
  row[0] = 0.4, row[3] = 0.45, row[7] = 0.15;
  const auto out = applyPrior(s, p);
  EXPECT_NEAR(out.probs.row(0, K::Velocity)[3], 0.75, 1e-12);
  EXPECT_NEAR(out.probs.row(0, K::Velocity)[7], 0.25, 1e-12);
  EXPECT_EQ(out.probs.row(0, K::Velocity)[0], 0.0);
  EXPECT_TRUE(clean(out));

  row[3] = row[7] = 0.0, row[0] = 1.0;
  try {
    applyPrior(s, p);
    FAIL();
  } catch (const UnsatisfiablePriorError& e) {
    EXPECT_EQ(e.slot(), 0u);
    EXPECT_EQ(e.attribute(), index(K::Velocity));
  }
}

TEST(Prior, EnforceHardPinsAndZeroes) {
  VocabularyPrior p = priorUninformative(1);
  setPointRow(p.rows.row(0, K::Tempo), 5);
  std::vector<bool> allowed(subVocabSize(K::Tag), false);
  allowed[1] = allowed[2] = true;
  setSupportRow(p.rows.row(0, K::Tag), allowed);

  SimplexState s{AttributeTensor(1, 0.0)};
  s.probs.forEachRow([](std::size_t, std::size_t, std::span<double> r) {
    std::fill(r.begin(), r.end(), 1.0 / static_cast<double>(r.size()));
  });
  auto tag = s.probs.row(0, K::Tag);
  std::fill(tag.begin(), tag.end(), 0.0);
  tag[0] = 1.0;  // all mass on a forbidden token
  const auto out = enforceHard(s, p);
  EXPECT_EQ(out.probs.row(0, K::Tempo)[5], 1.0);
  EXPECT_EQ(out.probs.row(0, K::Tag)[1], 0.5);
  EXPECT_EQ(out.probs.row(0, K::Tag)[2], 0.5);
  EXPECT_EQ(out.probs.row(0, K::Tag)[0], 0.0);
  EXPECT_TRUE(clean(out));
}

TEST(Prior, ValidationFindsEveryIssue) {
  VocabularyPrior p = priorUninformative(3);
  auto zero = p.rows.row(0, K::Pitch);
  std::fill(zero.begin(), zero.end(), 0.0);
  auto twoOnes = p.rows.row(1, K::Tag);
  std::fill(twoOnes.begin(), twoOnes.end(), 0.0);
  twoOnes[1] = twoOnes[4] = 1.0;
  auto neg = p.rows.row(2, K::Velocity);
  std::fill(neg.begin(), neg.end(), 0.0);
  neg[0] = -0.5, neg[1] = 0.5, neg[2] = 0.5;
  const auto issues = validatePrior(p);
  ASSERT_EQ(issues.size(), 3u);
  EXPECT_EQ(issues[0].kind, PriorIssueKind::AllZeroRow);
  EXPECT_EQ(issues[1].kind, PriorIssueKind::ConflictingHardOnes);
  EXPECT_EQ(issues[1].slot, 1u);
  EXPECT_EQ(issues[2].kind, PriorIssueKind::InvalidWeight);
  SimplexState s{AttributeTensor(3, 1.0 / 19)};
  EXPECT_EQ(codeOf([&] { enforceHard(s, p); }), Errc::UnsatisfiablePrior);
  std::fill(zero.begin(), zero.end(), 1.0);
  EXPECT_EQ(codeOf([&] { enforceHard(s, p); }), Errc::ConflictingPrior);
}

TEST(Prior, CombineIntersectsSupports) {
  const auto a = priorTonality({0, 2, 4, 5, 7, 9, 11}, 2);
  const auto b = priorPitchRange({60, 72}, 2);
  const auto c = combine(a, b);
  // C major inside 60..72: 60 62 64 65 67 69 71 72, plus 47 drum pitches and undefined.
  EXPECT_EQ(rowSupport(c, 0, K::Pitch), 8u + 47u + 1u);
  const auto r = c.rows.row(1, K::Pitch);
  EXPECT_NEAR(r[60], 1.0 / 56, 1e-15);
  EXPECT_EQ(r[61], 0.0);
  EXPECT_TRUE(isUninformativeRow(c.rows.row(0, K::Tag)));
  EXPECT_TRUE(validatePrior(c).empty());
  EXPECT_THROW(combine(a, priorUninformative(3)), Error);
}

TEST(Prior, RespectsPrior) {
  const auto v = buildVocabulary();
  const auto loop = fixtures::toyDataset(v, 8)[2];
  const auto p = priorFromLoop(loop);
  EXPECT_TRUE(respectsPrior(loop, p));
  auto other = loop;
  other.slots[0][index(K::Velocity)] ^= 1;
  EXPECT_FALSE(respectsPrior(other, p));
}

TEST(Tasks, TonalityCMajorCount) {
  const auto p = priorTonality({0, 2, 4, 5, 7, 9, 11}, 1);
  int melodic = 0;
  const auto r = p.rows.row(0, K::Pitch);
  for (int q = 0; q < 127; ++q) melodic += r[q] > 0.0;
  EXPECT_EQ(melodic, 74);
  for (int q = 127; q < 175; ++q) EXPECT_GT(r[q], 0.0);
  EXPECT_THROW(priorTonality({12}, 1), Error);
  EXPECT_THROW(priorTonality({}, 1), Error);
}

TEST(Tasks, InstrumentationDrumsOnly) {
  const auto p = priorInstrumentation({kDrumInstrument}, 3);
  const auto inst = p.rows.row(1, K::Instrument);
  EXPECT_EQ(inst[17], 0.5);
  EXPECT_EQ(inst[18], 0.5);
  EXPECT_EQ(rowSupport(p, 1, K::Pitch), 47u + 1u);
  EXPECT_EQ(p.rows.row(0, K::Pitch)[60], 0.0);
  EXPECT_EQ(rowSupport(p, 2, K::OffsetBeat), 2u);
  EXPECT_GT(p.rows.row(2, K::OffsetTick)[24], 0.0);
  const auto mixed = priorInstrumentation({0, 4}, 1);
  EXPECT_EQ(mixed.rows.row(0, K::OffsetBeat)[16], 0.0);
  EXPECT_EQ(mixed.rows.row(0, K::Pitch)[127], 0.0);
  EXPECT_THROW(priorInstrumentation({}, 1), Error);
  EXPECT_THROW(priorInstrumentation({19}, 1), Error);
}

TEST(Tasks, RhythmIsBeatTickProduct) {
  const auto p = priorRhythm({{0, 0}, {2, 12}}, 2);
  EXPECT_EQ(rowSupport(p, 0, K::OnsetBeat), 3u);
  EXPECT_EQ(rowSupport(p, 0, K::OnsetTick), 3u);
  EXPECT_GT(p.rows.row(0, K::OnsetTick)[12], 0.0);
  EXPECT_THROW(priorRhythm({{16, 0}}, 1), Error);
}

TEST(Tasks, InfillBoxPinsOutsideAndFreesInside) {
  const auto v = buildVocabulary();
  const auto loop = fixtures::toyDataset(v, 10)[1];  // piano onset 60, pitch 61
  const auto p = priorInfillBox(loop, {48, 96}, {48, 84}, 1, 3);
  EXPECT_TRUE(validatePrior(p, 10).empty());
  std::size_t pinned = 0, free = 0;
  for (std::size_t s = 0; s < loop.size(); ++s) {
    const bool in = !isInactive(loop.slots[s]) && oracleInBox(loop.slots[s], 48, 96, 48, 84);
    bool allPinned = true;
    for (auto k : kAttributeOrder) allPinned &= rowSupport(p, s, k) == 1;
    if (!isInactive(loop.slots[s]) && !in) {
      EXPECT_TRUE(allPinned) << s;
      for (auto k : kAttributeOrder) EXPECT_EQ(p.rows.row(s, k)[loop.slots[s][index(k)]], 1.0);
      ++pinned;
    } else {
      free += !allPinned;
    }
  }
  EXPECT_EQ(pinned, 3u);
  EXPECT_EQ(free, 3u);
  // Exactly one free slot must become a note: undefined is forbidden there.
  std::size_t mandatory = 0;
  for (std::size_t s = 0; s < loop.size(); ++s)
    if (rowSupport(p, s, K::Instrument) > 1 && p.rows.row(s, K::Instrument)[18] == 0.0) ++mandatory;
  EXPECT_EQ(mandatory, 1u);

  EXPECT_EQ(codeOf([&] { priorInfillBox(loop, {383, 384}, {0, 127}, 1, 1); }), Errc::BoxTooSmall);
  EXPECT_THROW(priorInfillBox(loop, {0, 384}, {0, 127}, 2, 1), Error);
  EXPECT_THROW(priorInfillBox(loop, {0, 384}, {0, 127}, 1, 99), Error);
}

// Every onset admitted by the factorized rows lies inside the requested interval.
TEST(Tasks, InfillRectangleStaysInsideInterval) {
  std::mt19937_64 rng(11);
  const auto v = buildVocabulary();
  TokenizedLoop empty;
  empty.slots.assign(4, inactiveTuple());
  for (int i = 0; i < 300; ++i) {
    int a = std::uniform_int_distribution<int>(0, 383)(rng), b = std::uniform_int_distribution<int>(0, 384)(rng);
    if (a > b) std::swap(a, b);
    if (b - a < 2) continue;
    VocabularyPrior p;
    try {
      p = priorInfillBox(empty, {a, b}, {0, 127}, 1, 1);
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), Errc::BoxTooSmall);
      continue;
    }
    const auto beats = p.rows.row(0, K::OnsetBeat), ticks = p.rows.row(0, K::OnsetTick);
    int admitted = 0;
    for (int bt = 0; bt < 16; ++bt)
      for (int tk = 0; tk < 24; ++tk)
        if (beats[bt] > 0 && ticks[tk] > 0) {
          const int time = bt * 24 + tk;
          EXPECT_GE(time, a);
          EXPECT_LT(time, b);
          ++admitted;
        }
    EXPECT_GT(admitted, 0);
  }
}

TEST(Tasks, InfillGenerationHonoursTheBox) {
  const auto v = buildVocabulary();
  const auto loop = fixtures::toyDataset(v, 8)[3];
  const auto p = priorInfillBox(loop, {96, 192}, {40, 90}, 1, 2);
  const fixtures::UniformDenoiser flat;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    DiffusionConfig cfg;
    cfg.T = 10;
    cfg.seed = seed;
    const auto out = generate(flat, &p, cfg, 8);
    EXPECT_TRUE(respectsPrior(out, p));
    int inBox = 0;
    for (const auto& t : out.slots) inBox += oracleInBox(t, 96, 192, 40, 90);
    EXPECT_GE(inBox, 1) << seed;
    for (std::size_t s = 0; s < loop.size(); ++s)
      if (!isInactive(loop.slots[s]) && !oracleInBox(loop.slots[s], 96, 192, 40, 90))
        EXPECT_EQ(std::count(out.slots.begin(), out.slots.end(), loop.slots[s]), 1);
  }
}

TEST(Tasks, RegenerateSelectsSlots) {
  const auto v = buildVocabulary();
  const auto loop = fixtures::toyDataset(v, 6)[0];
  SlotSelector bass;
  bass.instruments = {4};
  const auto p = priorRegenerateAttributes(loop, {K::Pitch}, bass);
  for (std::size_t s = 0; s < loop.size(); ++s) {
    const bool isBass = loop.slots[s][0] == 4;
    EXPECT_EQ(isUninformativeRow(p.rows.row(s, K::Pitch)), isBass);
    EXPECT_EQ(rowSupport(p, s, K::Velocity), 1u);
  }
  SlotSelector none;
  none.instruments = {9};
  EXPECT_EQ(codeOf([&] { priorRegenerateAttributes(loop, {K::Pitch}, none); }), Errc::EmptySelection);
}

TEST(Tasks, VariationStartsPartWay) {
  const auto v = buildVocabulary();
  const auto loop = fixtures::toyDataset(v, 6)[0];
  DiffusionConfig cfg;
  cfg.T = 40;
  cfg.seed = 3;
  const auto plan = priorVariation(loop, 0.25, cfg);
  EXPECT_EQ(plan.startStep, 10);
  EXPECT_TRUE(clean(plan.start));
  EXPECT_EQ(priorVariation(loop, 0.25, cfg).start, plan.start);
  EXPECT_THROW(priorVariation(loop, 0.0, cfg), Error);
}

TEST(TaskSpec, PresetsCompileAndRoundTrip) {
  const auto v = buildVocabulary();
  const auto loop = fixtures::toyDataset(v, 12)[5];
  DiffusionConfig cfg;
  for (const auto& preset : taskPresets()) {
    const auto compiled = compileTask(preset, &loop, 12, cfg);
    EXPECT_TRUE(validatePrior(compiled.prior, 12).empty()) << preset.name;
    EXPECT_EQ(compiled.prior.task, preset.name);
    const auto back = taskSpecFromJson(taskSpecToJson(preset, v), v);
    EXPECT_EQ(taskSpecToJson(back, v), taskSpecToJson(preset, v)) << preset.name;
    if (taskNeedsSource(preset.kind)) EXPECT_THROW(compileTask(preset, nullptr, 12, cfg), TaskSpecError);
  }
  EXPECT_TRUE(findPreset("c_major"));
  EXPECT_FALSE(findPreset("nope"));
  EXPECT_THROW(compileTask(*findPreset("variation"), &loop, 13, cfg), TaskSpecError);
}

TEST(TaskSpec, ErrorsNameTheirFields) {
  const auto v = buildVocabulary();
  try {
    taskSpecFromJson(nlohmann::json{{"kind", "infill_box"}, {"top_p", 1.5}, {"bogus", 1}, {"time_range", {8, 4}}}, v);
    FAIL();
  } catch (const TaskSpecError& e) {
    std::set<std::string> fields;
    for (const auto& f : e.errors()) fields.insert(f.field);
    EXPECT_EQ(fields, (std::set<std::string>{"top_p", "bogus", "time_range"}));
  }
  try {
    taskSpecFromJson(nlohmann::json{{"kind", "instrumentation"}, {"instruments", {"kazoo"}}}, v);
    FAIL();
  } catch (const TaskSpecError& e) {
    EXPECT_EQ(e.errors().front().field, "instruments");
  }
  EXPECT_THROW(taskSpecFromJson(nlohmann::json{{"name", "x"}}, v), TaskSpecError);
  EXPECT_THROW(taskSpecFromJson(nlohmann::json::array(), v), TaskSpecError);
  const auto ok = taskSpecFromJson(
      nlohmann::json{{"kind", "instrumentation"}, {"instruments", {"drums", 4}}, {"pitch_range", {30, 60}}}, v);
  EXPECT_EQ(ok.instruments, (std::set<int>{4, 17}));
  ASSERT_TRUE(ok.pitchLimit);
  EXPECT_EQ(ok.pitchLimit->high, 60);
}

TEST(PriorIo, RoundTripAndVersionCheck) {
  const auto v = buildVocabulary();
  const auto loop = fixtures::toyDataset(v, 8)[0];
  VocabularyPrior p = priorInfillBox(loop, {0, 96}, {30, 90}, 1, 2);
  p = combine(p, priorTonality({0, 4, 7}, 8));
  auto w = p.rows.row(7, K::Velocity);
  std::fill(w.begin(), w.end(), 0.0);
  w[1] = 0.25, w[2] = 0.75;
  const auto j = priorToJson(p, v);
  const auto back = priorFromJson(nlohmann::json::parse(j.dump()), v);
  EXPECT_EQ(back.rows, p.rows);
  EXPECT_EQ(back.task, p.task);

  auto bad = j;
  bad["vocab"] = "0000";
  EXPECT_EQ(codeOf([&] { priorFromJson(bad, v); }), Errc::VersionMismatch);
  bad = j;
  bad["rows"].push_back({{"slot", 0}, {"attribute", "pitch"}, {"point", 999}});
  EXPECT_EQ(codeOf([&] { priorFromJson(bad, v); }), Errc::ParseError);
  bad = j;
  bad.erase("n_slots");
  EXPECT_EQ(codeOf([&] { priorFromJson(bad, v); }), Errc::ParseError);
}
