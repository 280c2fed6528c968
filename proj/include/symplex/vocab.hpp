#pragma once

// Global token vocabulary and the loop <-> token-tuple codec.
//
// A loop is a set of N slots. Each slot is a tuple of nine local token indices,
// one per attribute, each drawn from that attribute's sub-vocabulary. The last
// token of every sub-vocabulary is its "undefined" token; a slot whose nine
// attributes are all undefined is an inactive note event.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "symplex/error.hpp"
#include "symplex/hash.hpp"

namespace symplex {

enum class AttributeKind : std::uint8_t {
  Instrument = 0,
  Pitch,
  OnsetBeat,
  OnsetTick,
  OffsetBeat,
  OffsetTick,
  Velocity,
  Tempo,
  Tag,
};

inline constexpr std::size_t kAttributeCount = 9;

inline constexpr std::array<AttributeKind, kAttributeCount> kAttributeOrder = {
    AttributeKind::Instrument, AttributeKind::Pitch,      AttributeKind::OnsetBeat,
    AttributeKind::OnsetTick,  AttributeKind::OffsetBeat, AttributeKind::OffsetTick,
    AttributeKind::Velocity,   AttributeKind::Tempo,      AttributeKind::Tag};

inline constexpr std::array<std::size_t, kAttributeCount> kSubVocabSizes = {19, 175, 17, 25, 18,
                                                                            26, 33,  17, 41};

inline constexpr std::size_t kVocabSize = [] {
  std::size_t s = 0;
  for (auto n : kSubVocabSizes) s += n;
  return s;
}();
static_assert(kVocabSize == 371);

inline constexpr std::size_t index(AttributeKind k) { return static_cast<std::size_t>(k); }
inline constexpr std::size_t subVocabSize(AttributeKind k) { return kSubVocabSizes[index(k)]; }

inline constexpr std::string_view attributeName(AttributeKind k) {
  constexpr std::array<std::string_view, kAttributeCount> names = {
      "instrument", "pitch",       "onset_beat", "onset_tick", "offset_beat",
      "offset_tick", "velocity",   "tempo",      "tag"};
  return names[index(k)];
}

inline std::optional<AttributeKind> parseAttribute(std::string_view name) {
  for (auto k : kAttributeOrder)
    if (attributeName(k) == name) return k;
  return std::nullopt;
}

using Token = std::uint16_t;

// Grid and binning constants.
inline constexpr int kTicksPerBeat = 24;
inline constexpr int kLoopBeats = 16;
inline constexpr int kLoopTicks = kTicksPerBeat * kLoopBeats;  // 384
inline constexpr int kLastGridTick = kLoopTicks - 1;
inline constexpr int kMelodicPitchCount = 127;  // MIDI 0..126; 127 clamps to 126
inline constexpr int kDrumKeyLow = 35;
inline constexpr int kDrumKeyHigh = 81;
inline constexpr int kDrumKeyCount = kDrumKeyHigh - kDrumKeyLow + 1;  // 47
inline constexpr int kInstrumentClassCount = 17;
inline constexpr int kDrumInstrument = kInstrumentClassCount;  // instrument value for drums
inline constexpr int kVelocityBins = 32;
inline constexpr int kTempoBins = 16;
inline constexpr double kTempoMin = 50.0;
inline constexpr double kTempoMax = 200.0;
inline constexpr double kTempoBinWidth = (kTempoMax - kTempoMin) / kTempoBins;  // 9.375
inline constexpr int kGenreTagCount = 39;

/// Local token layouts within each sub-vocabulary.
namespace tok {

inline constexpr Token undefined(AttributeKind k) { return static_cast<Token>(subVocabSize(k) - 1); }

inline constexpr Token kDrumsInstrument = kDrumInstrument;  // 17
inline constexpr Token melodicPitch(int p) { return static_cast<Token>(p); }
inline constexpr Token drumPitch(int key) { return static_cast<Token>(kMelodicPitchCount + key - kDrumKeyLow); }
inline constexpr bool isDrumPitch(Token t) {
  return t >= kMelodicPitchCount && t < kMelodicPitchCount + kDrumKeyCount;
}
inline constexpr bool isMelodicPitch(Token t) { return t < kMelodicPitchCount; }
inline constexpr int drumKeyOf(Token t) { return static_cast<int>(t) - kMelodicPitchCount + kDrumKeyLow; }

inline constexpr Token kDrumOffsetBeat = 16;
inline constexpr Token kDrumOffsetTick = 24;
inline constexpr Token kOtherTag = kGenreTagCount;  // 39

static_assert(undefined(AttributeKind::Instrument) == 18);
static_assert(undefined(AttributeKind::Pitch) == 174);
static_assert(undefined(AttributeKind::OffsetBeat) == 17);
static_assert(undefined(AttributeKind::OffsetTick) == 25);
static_assert(undefined(AttributeKind::Tag) == 40);

}  // namespace tok

inline int velocityBin(int velocity) { return std::clamp(velocity, 0, 127) / 4; }
inline int velocityFromBin(int bin) { return 4 * bin + 2; }

inline int tempoBin(double bpm) {
  return std::clamp(static_cast<int>(std::floor((bpm - kTempoMin) / kTempoBinWidth)), 0, kTempoBins - 1);
}
inline double tempoFromBin(int bin) { return kTempoMin + kTempoBinWidth * (bin + 0.5); }

// ---------------------------------------------------------------------------
// Instrument classes and genre tags (configuration tables).

struct InstrumentClass {
  std::string name;
  std::vector<std::pair<int, int>> programRanges;  // inclusive GM program ranges
};

class InstrumentTable {
 public:
  explicit InstrumentTable(std::vector<InstrumentClass> classes) : classes_(std::move(classes)) {
    if (classes_.size() != static_cast<std::size_t>(kInstrumentClassCount))
      throw Error(Errc::InvalidArgument, "instrument table needs exactly 17 classes");
    programToClass_.fill(-1);
    for (std::size_t c = 0; c < classes_.size(); ++c) {
      for (auto [lo, hi] : classes_[c].programRanges) {
        if (lo < 0 || hi > 127 || lo > hi)
          throw Error(Errc::InvalidArgument, "bad program range in class " + classes_[c].name);
        for (int p = lo; p <= hi; ++p) {
          if (programToClass_[p] != -1)
            throw Error(Errc::InvalidArgument, "program " + std::to_string(p) + " mapped twice");
          programToClass_[p] = static_cast<int>(c);
        }
      }
    }
    for (int p = 0; p < 128; ++p)
      if (programToClass_[p] == -1)
        throw Error(Errc::InvalidArgument, "program " + std::to_string(p) + " is unmapped");
  }

  static InstrumentTable fromJson(const nlohmann::json& j) {
    std::vector<InstrumentClass> out;
    for (const auto& c : j.at("classes")) {
      InstrumentClass ic{c.at("name").get<std::string>(), {}};
      for (const auto& r : c.at("programs")) ic.programRanges.emplace_back(r.at(0).get<int>(), r.at(1).get<int>());
      out.push_back(std::move(ic));
    }
    return InstrumentTable(std::move(out));
  }

  nlohmann::json toJson() const {
    nlohmann::json classes = nlohmann::json::array();
    for (const auto& c : classes_) {
      nlohmann::json ranges = nlohmann::json::array();
      for (auto [lo, hi] : c.programRanges) ranges.push_back({lo, hi});
      classes.push_back({{"name", c.name}, {"programs", ranges}});
    }
    return {{"classes", classes}};
  }

  int classOfProgram(int program) const { return programToClass_.at(std::clamp(program, 0, 127)); }
  int representativeProgram(int cls) const { return classes_.at(cls).programRanges.front().first; }
  const std::string& name(int cls) const { return classes_.at(cls).name; }
  const std::vector<InstrumentClass>& classes() const { return classes_; }

  std::optional<int> classByName(std::string_view n) const {
    for (std::size_t c = 0; c < classes_.size(); ++c)
      if (classes_[c].name == n) return static_cast<int>(c);
    return std::nullopt;
  }

 private:
  std::vector<InstrumentClass> classes_;
  std::array<int, 128> programToClass_{};
};

/// General-MIDI families, with the ensemble family split into ensemble and choir.
/// Mirrors config/instrument_classes.json.
inline InstrumentTable defaultInstrumentTable() {
  return InstrumentTable({
      {"piano", {{0, 7}}},
      {"chromatic_percussion", {{8, 15}}},
      {"organ", {{16, 23}}},
      {"guitar", {{24, 31}}},
      {"bass", {{32, 39}}},
      {"strings", {{40, 47}}},
      {"ensemble", {{48, 51}, {55, 55}}},
      {"choir", {{52, 54}}},
      {"brass", {{56, 63}}},
      {"reed", {{64, 71}}},
      {"pipe", {{72, 79}}},
      {"synth_lead", {{80, 87}}},
      {"synth_pad", {{88, 95}}},
      {"synth_effects", {{96, 103}}},
      {"ethnic", {{104, 111}}},
      {"percussive", {{112, 119}}},
      {"sound_effects", {{120, 127}}},
  });
}

inline std::vector<std::string> defaultGenreTags() {
  return {"rock",       "pop",       "electronic", "jazz",      "classical",      "country",   "blues",
          "metal",      "hip_hop",   "rnb",        "soul",      "funk",           "folk",      "reggae",
          "latin",      "punk",      "disco",      "house",     "techno",         "trance",    "ambient",
          "new_age",    "world",     "soundtrack", "gospel",    "children",       "easy_listening",
          "dance",      "alternative", "indie",    "grunge",    "ska",            "swing",     "bossa_nova",
          "salsa",      "tango",     "holiday",    "comedy",    "experimental"};
}

inline constexpr std::string_view kVocabVersion = "symplex-vocab-1";

class Vocabulary {
 public:
  Vocabulary(InstrumentTable instruments, std::vector<std::string> genres)
      : instruments_(std::move(instruments)), genres_(std::move(genres)) {
    if (genres_.size() != static_cast<std::size_t>(kGenreTagCount))
      throw Error(Errc::InvalidArgument, "expected 39 genre tags");
    std::size_t off = 0;
    for (std::size_t a = 0; a < kAttributeCount; ++a) {
      offsets_[a] = off;
      off += kSubVocabSizes[a];
    }
    Fnv1a64 h;
    h.update(instruments_.toJson().dump());
    for (const auto& g : genres_) h.update(g);
    const auto defaultHash = [] {
      Fnv1a64 d;
      d.update(defaultInstrumentTable().toJson().dump());
      for (const auto& g : defaultGenreTags()) d.update(g);
      return d.digest();
    }();
    version_ = std::string(kVocabVersion);
    if (h.digest() != defaultHash) version_ += "+" + hexDigest(h.digest());
  }

  const std::string& version() const { return version_; }
  static constexpr std::size_t size() { return kVocabSize; }
  std::size_t offset(AttributeKind k) const { return offsets_[index(k)]; }

  std::size_t toGlobal(AttributeKind k, Token local) const {
    if (local >= subVocabSize(k)) throw Error(Errc::OutOfRange, "local token out of sub-vocabulary");
    return offsets_[index(k)] + local;
  }

  std::pair<AttributeKind, Token> fromGlobal(std::size_t global) const {
    if (global >= kVocabSize) throw Error(Errc::OutOfRange, "global token id out of range");
    std::size_t a = kAttributeCount - 1;
    while (offsets_[a] > global) --a;
    return {kAttributeOrder[a], static_cast<Token>(global - offsets_[a])};
  }

  std::string label(AttributeKind k, Token t) const {
    const std::string prefix = std::string(attributeName(k)) + ":";
    if (t == tok::undefined(k)) return prefix + "undefined";
    switch (k) {
      case AttributeKind::Instrument:
        return prefix + (t == tok::kDrumsInstrument ? std::string("drums") : instruments_.name(t));
      case AttributeKind::Pitch:
        return prefix + (tok::isDrumPitch(t) ? "drum" + std::to_string(tok::drumKeyOf(t)) : std::to_string(t));
      case AttributeKind::OffsetBeat:
        if (t == tok::kDrumOffsetBeat) return prefix + "drum";
        break;
      case AttributeKind::OffsetTick:
        if (t == tok::kDrumOffsetTick) return prefix + "drum";
        break;
      case AttributeKind::Tag:
        return prefix + (t == tok::kOtherTag ? std::string("other") : genres_.at(t));
      default:
        break;
    }
    return prefix + std::to_string(t);
  }

  std::optional<Token> tagToken(std::string_view name) const {
    if (name == "other") return tok::kOtherTag;
    for (std::size_t i = 0; i < genres_.size(); ++i)
      if (genres_[i] == name) return static_cast<Token>(i);
    return std::nullopt;
  }
  std::string tagName(Token t) const { return t == tok::kOtherTag ? "other" : genres_.at(t); }

  const InstrumentTable& instruments() const { return instruments_; }
  const std::vector<std::string>& genres() const { return genres_; }

 private:
  InstrumentTable instruments_;
  std::vector<std::string> genres_;
  std::array<std::size_t, kAttributeCount> offsets_{};
  std::string version_;
};

inline Vocabulary buildVocabulary() { return Vocabulary(defaultInstrumentTable(), defaultGenreTags()); }

/// Binary mask over the global vocabulary selecting one attribute's sub-vocabulary.
inline std::vector<std::uint8_t> syntaxMask(AttributeKind kind, const Vocabulary& vocab) {
  std::vector<std::uint8_t> mask(Vocabulary::size(), 0);
  const auto off = vocab.offset(kind);
  std::fill_n(mask.begin() + static_cast<std::ptrdiff_t>(off), subVocabSize(kind), 1);
  return mask;
}

// ---------------------------------------------------------------------------
// Note events and loops.

/// One quantized note. Times are on the 24-ticks-per-beat grid relative to the
/// loop start. For drums `offset` is ignored and canonically equals `onset`.
struct NoteEvent {
  int instrument = 0;  // 0..16 instrument class, or kDrumInstrument
  int pitch = 60;      // MIDI pitch, or GM drum key for drums
  int onset = 0;       // 0..383
  int offset = 24;     // onset+1..383 for melodic notes
  int velocity = 100;  // MIDI velocity 0..127

  bool isDrum() const { return instrument == kDrumInstrument; }
  auto operator<=>(const NoteEvent&) const = default;
};

struct Provenance {
  std::string fileHash;
  int barOffset = 0;
  bool operator==(const Provenance&) const = default;
};

struct LoopSample {
  std::vector<NoteEvent> events;
  double tempoBpm = 120.0;
  std::string tag = "other";
  Provenance provenance;
};

using TokenTuple = std::array<Token, kAttributeCount>;

struct TokenizedLoop {
  std::vector<TokenTuple> slots;

  std::size_t size() const { return slots.size(); }
  Token at(std::size_t slot, AttributeKind k) const { return slots.at(slot)[index(k)]; }
  bool operator==(const TokenizedLoop&) const = default;
};

inline TokenTuple inactiveTuple() {
  TokenTuple t{};
  for (auto k : kAttributeOrder) t[index(k)] = tok::undefined(k);
  return t;
}

inline std::size_t undefinedCount(const TokenTuple& t) {
  std::size_t n = 0;
  for (auto k : kAttributeOrder) n += t[index(k)] == tok::undefined(k);
  return n;
}

inline bool isInactive(const TokenTuple& t) { return undefinedCount(t) == kAttributeCount; }

inline std::size_t activeCount(const TokenizedLoop& loop) {
  return static_cast<std::size_t>(
      std::count_if(loop.slots.begin(), loop.slots.end(), [](const auto& t) { return !isInactive(t); }));
}

/// Sort key: onset time, then instrument, pitch, offset, velocity. Inactive slots last.
inline bool canonicalLess(const TokenTuple& a, const TokenTuple& b) {
  using K = AttributeKind;
  constexpr std::array order = {K::OnsetBeat, K::OnsetTick, K::Instrument, K::Pitch, K::OffsetBeat,
                                K::OffsetTick, K::Velocity, K::Tempo,     K::Tag};
  const bool ia = isInactive(a), ib = isInactive(b);
  if (ia != ib) return ib;
  for (auto k : order)
    if (a[index(k)] != b[index(k)]) return a[index(k)] < b[index(k)];
  return false;
}

/// Sorted active tuples; the order-free identity of a tokenized loop.
inline std::vector<TokenTuple> activeMultiset(const TokenizedLoop& loop) {
  std::vector<TokenTuple> out;
  for (const auto& t : loop.slots)
    if (!isInactive(t)) out.push_back(t);
  std::sort(out.begin(), out.end(), canonicalLess);
  return out;
}

inline TokenizedLoop canonicalize(TokenizedLoop loop) {
  std::stable_sort(loop.slots.begin(), loop.slots.end(), canonicalLess);
  return loop;
}

inline TokenizedLoop encodeLoop(const LoopSample& loop, std::size_t slotCount, const Vocabulary& vocab) {
  using K = AttributeKind;
  if (loop.events.size() > slotCount)
    throw Error(Errc::TooManyEvents, std::to_string(loop.events.size()) + " events exceed " +
                                         std::to_string(slotCount) + " slots");
  if (!(loop.tempoBpm >= kTempoMin && loop.tempoBpm <= kTempoMax))
    throw Error(Errc::OutOfRange, "tempo " + std::to_string(loop.tempoBpm) + " outside [50, 200]");
  const auto tag = vocab.tagToken(loop.tag);
  if (!tag) throw Error(Errc::OutOfRange, "unknown tag '" + loop.tag + "'");
  const auto tempo = static_cast<Token>(tempoBin(loop.tempoBpm));

  TokenizedLoop out;
  out.slots.assign(slotCount, inactiveTuple());
  for (std::size_t i = 0; i < loop.events.size(); ++i) {
    const auto& e = loop.events[i];
    const auto where = " (event " + std::to_string(i) + ")";
    if (e.onset < 0 || e.onset > kLastGridTick) throw Error(Errc::OutOfRange, "onset outside loop" + where);
    if (e.velocity < 0 || e.velocity > 127) throw Error(Errc::OutOfRange, "velocity" + where);
    TokenTuple t{};
    t[index(K::OnsetBeat)] = static_cast<Token>(e.onset / kTicksPerBeat);
    t[index(K::OnsetTick)] = static_cast<Token>(e.onset % kTicksPerBeat);
    t[index(K::Velocity)] = static_cast<Token>(velocityBin(e.velocity));
    t[index(K::Tempo)] = tempo;
    t[index(K::Tag)] = *tag;
    if (e.isDrum()) {
      if (e.pitch < kDrumKeyLow || e.pitch > kDrumKeyHigh) throw Error(Errc::OutOfRange, "drum key" + where);
      t[index(K::Instrument)] = tok::kDrumsInstrument;
      t[index(K::Pitch)] = tok::drumPitch(e.pitch);
      t[index(K::OffsetBeat)] = tok::kDrumOffsetBeat;
      t[index(K::OffsetTick)] = tok::kDrumOffsetTick;
    } else {
      if (e.instrument < 0 || e.instrument >= kInstrumentClassCount)
        throw Error(Errc::OutOfRange, "instrument class" + where);
      if (e.pitch < 0 || e.pitch > 127) throw Error(Errc::OutOfRange, "pitch" + where);
      if (e.offset <= e.onset || e.offset > kLastGridTick)
        throw Error(Errc::OutOfRange, "offset must lie in (onset, 383]" + where);
      t[index(K::Instrument)] = static_cast<Token>(e.instrument);
      t[index(K::Pitch)] = tok::melodicPitch(std::min(e.pitch, kMelodicPitchCount - 1));
      t[index(K::OffsetBeat)] = static_cast<Token>(e.offset / kTicksPerBeat);
      t[index(K::OffsetTick)] = static_cast<Token>(e.offset % kTicksPerBeat);
    }
    out.slots[i] = t;
  }
  std::sort(out.slots.begin(), out.slots.end(), canonicalLess);
  return out;
}

namespace detail {

inline Token modeToken(const std::vector<Token>& values) {
  std::map<Token, std::size_t> counts;
  for (auto v : values) ++counts[v];
  Token best = values.front();
  std::size_t bestCount = 0;
  for (auto [v, c] : counts)
    if (c > bestCount) best = v, bestCount = c;
  return best;
}

}  // namespace detail

/// Checks one slot; returns an empty string when it is well formed.
inline std::string slotProblem(const TokenTuple& t) {
  using K = AttributeKind;
  for (auto k : kAttributeOrder)
    if (t[index(k)] >= subVocabSize(k)) return "token out of sub-vocabulary for " + std::string(attributeName(k));
  const auto undef = undefinedCount(t);
  if (undef == kAttributeCount) return {};
  if (undef != 0) return "slot mixes defined and undefined attributes";
  const bool drumInst = t[index(K::Instrument)] == tok::kDrumsInstrument;
  const bool drumPitch = tok::isDrumPitch(t[index(K::Pitch)]);
  const bool drumOffBeat = t[index(K::OffsetBeat)] == tok::kDrumOffsetBeat;
  const bool drumOffTick = t[index(K::OffsetTick)] == tok::kDrumOffsetTick;
  if (!(drumInst == drumPitch && drumPitch == drumOffBeat && drumOffBeat == drumOffTick))
    return "inconsistent drum and melodic tokens";
  if (!drumInst) {
    const int on = t[index(K::OnsetBeat)] * kTicksPerBeat + t[index(K::OnsetTick)];
    const int off = t[index(K::OffsetBeat)] * kTicksPerBeat + t[index(K::OffsetTick)];
    if (off <= on) return "offset not after onset";
  }
  return {};
}

inline LoopSample decodeLoop(const TokenizedLoop& loop, const Vocabulary& vocab) {
  using K = AttributeKind;
  LoopSample out;
  std::vector<Token> tempos, tags;
  for (std::size_t s = 0; s < loop.slots.size(); ++s) {
    const auto& t = loop.slots[s];
    if (auto problem = slotProblem(t); !problem.empty())
      throw Error(Errc::MalformedSlot, "slot " + std::to_string(s) + ": " + problem);
    if (isInactive(t)) continue;
    NoteEvent e;
    e.onset = t[index(K::OnsetBeat)] * kTicksPerBeat + t[index(K::OnsetTick)];
    e.velocity = velocityFromBin(t[index(K::Velocity)]);
    if (t[index(K::Instrument)] == tok::kDrumsInstrument) {
      e.instrument = kDrumInstrument;
      e.pitch = tok::drumKeyOf(t[index(K::Pitch)]);
      e.offset = e.onset;
    } else {
      e.instrument = t[index(K::Instrument)];
      e.pitch = t[index(K::Pitch)];
      e.offset = t[index(K::OffsetBeat)] * kTicksPerBeat + t[index(K::OffsetTick)];
    }
    out.events.push_back(e);
    tempos.push_back(t[index(K::Tempo)]);
    tags.push_back(t[index(K::Tag)]);
  }
  if (!out.events.empty()) {
    out.tempoBpm = tempoFromBin(detail::modeToken(tempos));
    out.tag = vocab.tagName(detail::modeToken(tags));
  }
  std::sort(out.events.begin(), out.events.end());
  return out;
}

/// Picks one of a loop's genre annotations reproducibly; "other" when none are known.
inline std::string chooseTag(const std::vector<std::string>& genres, std::uint64_t seed, const Vocabulary& vocab) {
  std::vector<std::string> known;
  for (const auto& g : genres)
    if (vocab.tagToken(g) && g != "other") known.push_back(g);
  if (known.empty()) return "other";
  std::sort(known.begin(), known.end());
  std::mt19937_64 rng(seed);
  return known[std::uniform_int_distribution<std::size_t>(0, known.size() - 1)(rng)];
}

}  // namespace symplex
