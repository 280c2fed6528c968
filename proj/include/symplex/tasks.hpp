#pragma once

// Prior builders for the generation tasks, the TaskSpec description they are
// compiled from, and the named presets.

#include <algorithm>
#include <cmath>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "symplex/diffusion.hpp"
#include "symplex/prior.hpp"
#include "symplex/vocab.hpp"

namespace symplex {

/// Half-open tick interval [begin, end) on the 384-tick loop grid.
struct TickRange {
  int begin = 0;
  int end = kLoopTicks;
  bool operator==(const TickRange&) const = default;
};

/// Inclusive MIDI pitch interval.
struct PitchRange {
  int low = 0;
  int high = 127;
  bool operator==(const PitchRange&) const = default;
};

namespace detail {

inline std::vector<bool> allowAll(AttributeKind k, bool withUndefined) {
  std::vector<bool> v(subVocabSize(k), true);
  v[tok::undefined(k)] = withUndefined;
  return v;
}

inline void setRow(VocabularyPrior& p, std::size_t slot, AttributeKind k, const std::vector<bool>& allowed) {
  setSupportRow(p.rows.row(slot, k), allowed);
}

inline void pinSlot(VocabularyPrior& p, std::size_t slot, const TokenTuple& t) {
  for (std::size_t a = 0; a < kAttributeCount; ++a) setPointRow(p.rows.row(slot, a), t[a]);
}

/// Beat x tick rectangle lying inside a tick interval. Onsets and offsets
/// factor over separate beat and tick rows, so an arbitrary interval is
/// narrowed to the largest rectangle among: the beats it covers completely
/// with every tick, or a single beat with the ticks it covers there.
struct GridRect {
  std::vector<bool> beats = std::vector<bool>(kLoopBeats, false);
  std::vector<bool> ticks = std::vector<bool>(kTicksPerBeat, false);
  int beatCount = 0, tickCount = 0;
  int minTime = 0, maxTime = -1;

  std::size_t area() const { return static_cast<std::size_t>(beatCount) * tickCount; }
  bool contains(int time) const {
    return time >= 0 && time < kLoopTicks && beats[time / kTicksPerBeat] && ticks[time % kTicksPerBeat];
  }
};

inline GridRect rectInside(int begin, int end) {
  begin = std::max(begin, 0);
  end = std::min(end, kLoopTicks);
  GridRect best;
  auto consider = [&](int b0, int b1, int t0, int t1) {
    if (b1 <= b0 || t1 <= t0) return;
    const std::size_t area = static_cast<std::size_t>(b1 - b0) * (t1 - t0);
    if (area <= best.area()) return;
    GridRect r;
    for (int b = b0; b < b1; ++b) r.beats[b] = true;
    for (int t = t0; t < t1; ++t) r.ticks[t] = true;
    r.beatCount = b1 - b0;
    r.tickCount = t1 - t0;
    r.minTime = b0 * kTicksPerBeat + t0;
    r.maxTime = (b1 - 1) * kTicksPerBeat + t1 - 1;
    best = r;
  };
  if (end <= begin) return best;
  const int fullFirst = (begin + kTicksPerBeat - 1) / kTicksPerBeat;
  const int fullLast = end / kTicksPerBeat;  // exclusive
  consider(fullFirst, fullLast, 0, kTicksPerBeat);
  for (int b = begin / kTicksPerBeat; b * kTicksPerBeat < end; ++b) {
    const int t0 = std::max(begin - b * kTicksPerBeat, 0);
    const int t1 = std::min(end - b * kTicksPerBeat, kTicksPerBeat);
    consider(b, b + 1, t0, t1);
  }
  return best;
}

inline std::optional<TokenTuple> firstActive(const TokenizedLoop& loop) {
  for (const auto& t : loop.slots)
    if (!isInactive(t)) return t;
  return std::nullopt;
}

}  // namespace detail

/// Every row a point mass on the loop's token, inactive slots included.
inline VocabularyPrior priorFromLoop(const TokenizedLoop& loop) {
  VocabularyPrior p{AttributeTensor(loop.size(), 0.0), "fully_determined", {}};
  for (std::size_t s = 0; s < loop.size(); ++s) detail::pinSlot(p, s, loop.slots[s]);
  return p;
}

/// True when an active melodic slot has its onset and pitch inside the box.
inline bool slotInBox(const TokenTuple& t, TickRange time, PitchRange pitch) {
  using K = AttributeKind;
  if (isInactive(t) || t[index(K::Instrument)] == tok::kDrumsInstrument) return false;
  if (!tok::isMelodicPitch(t[index(K::Pitch)])) return false;
  const int onset = t[index(K::OnsetBeat)] * kTicksPerBeat + t[index(K::OnsetTick)];
  const int p = t[index(K::Pitch)];
  return onset >= time.begin && onset < time.end && p >= pitch.low && p <= pitch.high;
}

struct InfillOptions {
  bool pinTempo = true;
  bool pinTag = true;
};

/// Erases the melodic notes inside a time x pitch box and lets minNotes..maxNotes
/// new notes appear there. Drum notes are outside every pitch box.
inline VocabularyPrior priorInfillBox(const TokenizedLoop& loop, TickRange time, PitchRange pitch, int minNotes,
                                      int maxNotes, const InfillOptions& opts = {}) {
  using K = AttributeKind;
  if (time.begin < 0 || time.end > kLoopTicks || time.begin >= time.end)
    throw Error(Errc::InvalidArgument, "time range must lie inside the 16-beat grid");
  if (pitch.low < 0 || pitch.high > 127 || pitch.low > pitch.high)
    throw Error(Errc::InvalidArgument, "pitch range must lie inside 0..127");
  if (minNotes < 0 || minNotes > maxNotes) throw Error(Errc::InvalidArgument, "need 0 <= minNotes <= maxNotes");

  const int lowToken = std::min(pitch.low, kMelodicPitchCount - 1);
  const int highToken = std::min(pitch.high, kMelodicPitchCount - 1);
  const auto onsetRect = detail::rectInside(time.begin, time.end);
  const auto offsetRect = detail::rectInside(time.begin + 1, std::min(time.end, kLastGridTick) + 1);
  if (maxNotes > 0 && (onsetRect.area() == 0 || offsetRect.area() == 0 || offsetRect.maxTime <= onsetRect.minTime))
    throw Error(Errc::BoxTooSmall, "box admits no valid onset/offset pair");

  VocabularyPrior p{AttributeTensor(loop.size(), 0.0), "infill_box", {}};
  std::vector<std::size_t> free;
  for (std::size_t s = 0; s < loop.size(); ++s) {
    const auto& t = loop.slots[s];
    if (isInactive(t) || slotInBox(t, time, pitch)) free.push_back(s);
    else detail::pinSlot(p, s, t);
  }
  if (static_cast<std::size_t>(maxNotes) > free.size())
    throw Error(Errc::InvalidArgument, "maxNotes exceeds the " + std::to_string(free.size()) + " free slots");

  const auto source = detail::firstActive(loop);
  auto boxSupport = [&](K k, bool withUndefined) {
    std::vector<bool> v(subVocabSize(k), false);
    switch (k) {
      case K::Instrument:
        for (int c = 0; c < kInstrumentClassCount; ++c) v[c] = true;
        break;
      case K::Pitch:
        for (int q = lowToken; q <= highToken; ++q) v[tok::melodicPitch(q)] = true;
        break;
      case K::OnsetBeat:
        for (int b = 0; b < kLoopBeats; ++b) v[b] = onsetRect.beats[b];
        break;
      case K::OnsetTick:
        for (int t = 0; t < kTicksPerBeat; ++t) v[t] = onsetRect.ticks[t];
        break;
      case K::OffsetBeat:
        for (int b = 0; b < kLoopBeats; ++b) v[b] = offsetRect.beats[b];
        break;
      case K::OffsetTick:
        for (int t = 0; t < kTicksPerBeat; ++t) v[t] = offsetRect.ticks[t];
        break;
      case K::Velocity:
        v = detail::allowAll(k, false);
        break;
      case K::Tempo:
      case K::Tag:
        if (source && ((k == K::Tempo && opts.pinTempo) || (k == K::Tag && opts.pinTag))) v[(*source)[index(k)]] = true;
        else v = detail::allowAll(k, false);
        break;
    }
    v[tok::undefined(k)] = withUndefined;
    return v;
  };

  for (std::size_t i = 0; i < free.size(); ++i) {
    const std::size_t s = free[i];
    const int role = static_cast<int>(i) < minNotes ? 0 : (static_cast<int>(i) < maxNotes ? 1 : 2);
    if (role == 2) {
      detail::pinSlot(p, s, inactiveTuple());
      continue;
    }
    for (auto k : kAttributeOrder) detail::setRow(p, s, k, boxSupport(k, role == 1));
  }
  return p;
}

/// Instrument rows restricted to `instruments` (class ids, kDrumInstrument for
/// drums) plus undefined; pitch and offset rows follow the drum choice.
inline VocabularyPrior priorInstrumentation(const std::set<int>& instruments, std::size_t slots) {
  using K = AttributeKind;
  if (instruments.empty()) throw Error(Errc::InvalidArgument, "instrument set is empty");
  std::vector<bool> inst(subVocabSize(K::Instrument), false);
  for (int i : instruments) {
    if (i < 0 || i > kDrumInstrument) throw Error(Errc::InvalidArgument, "unknown instrument " + std::to_string(i));
    inst[i] = true;
  }
  inst[tok::undefined(K::Instrument)] = true;
  const bool drums = instruments.count(kDrumInstrument) > 0;
  const bool melodic = instruments.size() > (drums ? 1u : 0u);

  std::vector<bool> pitch(subVocabSize(K::Pitch), false), offBeat(subVocabSize(K::OffsetBeat), false),
      offTick(subVocabSize(K::OffsetTick), false);
  for (Token t = 0; t < subVocabSize(K::Pitch); ++t)
    pitch[t] = t == tok::undefined(K::Pitch) || (tok::isDrumPitch(t) ? drums : melodic);
  for (Token t = 0; t < subVocabSize(K::OffsetBeat); ++t)
    offBeat[t] = t == tok::undefined(K::OffsetBeat) || (t == tok::kDrumOffsetBeat ? drums : melodic);
  for (Token t = 0; t < subVocabSize(K::OffsetTick); ++t)
    offTick[t] = t == tok::undefined(K::OffsetTick) || (t == tok::kDrumOffsetTick ? drums : melodic);

  VocabularyPrior p = priorUninformative(slots);
  p.task = "instrumentation";
  for (std::size_t s = 0; s < slots; ++s) {
    detail::setRow(p, s, K::Instrument, inst);
    detail::setRow(p, s, K::Pitch, pitch);
    detail::setRow(p, s, K::OffsetBeat, offBeat);
    detail::setRow(p, s, K::OffsetTick, offTick);
  }
  return p;
}

/// Melodic pitches outside the range are forbidden; drum pitches stay allowed.
inline VocabularyPrior priorPitchRange(PitchRange range, std::size_t slots) {
  using K = AttributeKind;
  std::vector<bool> pitch(subVocabSize(K::Pitch), true);
  for (int q = 0; q < kMelodicPitchCount; ++q) pitch[q] = q >= range.low && q <= range.high;
  VocabularyPrior p = priorUninformative(slots);
  p.task = "pitch_range";
  for (std::size_t s = 0; s < slots; ++s) detail::setRow(p, s, K::Pitch, pitch);
  return p;
}

/// Melodic pitches whose class is outside the set are forbidden.
inline VocabularyPrior priorTonality(const std::set<int>& pitchClasses, std::size_t slots) {
  using K = AttributeKind;
  if (pitchClasses.empty()) throw Error(Errc::InvalidArgument, "pitch-class set is empty");
  for (int pc : pitchClasses)
    if (pc < 0 || pc > 11) throw Error(Errc::InvalidArgument, "pitch class must lie in 0..11");
  std::vector<bool> pitch(subVocabSize(K::Pitch), true);
  for (int q = 0; q < kMelodicPitchCount; ++q) pitch[q] = pitchClasses.count(q % 12) > 0;
  VocabularyPrior p = priorUninformative(slots);
  p.task = "tonality";
  for (std::size_t s = 0; s < slots; ++s) detail::setRow(p, s, K::Pitch, pitch);
  return p;
}

/// Onset rows restricted to the beats and ticks present in `onsets`. The rows
/// factor, so the admitted set is the beat x tick product.
inline VocabularyPrior priorRhythm(const std::set<std::pair<int, int>>& onsets, std::size_t slots) {
  using K = AttributeKind;
  if (onsets.empty()) throw Error(Errc::InvalidArgument, "onset set is empty");
  std::vector<bool> beats(subVocabSize(K::OnsetBeat), false), ticks(subVocabSize(K::OnsetTick), false);
  for (auto [b, t] : onsets) {
    if (b < 0 || b >= kLoopBeats || t < 0 || t >= kTicksPerBeat)
      throw Error(Errc::InvalidArgument, "onset outside the grid");
    beats[b] = true;
    ticks[t] = true;
  }
  beats[tok::undefined(K::OnsetBeat)] = true;
  ticks[tok::undefined(K::OnsetTick)] = true;
  VocabularyPrior p = priorUninformative(slots);
  p.task = "rhythm";
  for (std::size_t s = 0; s < slots; ++s) {
    detail::setRow(p, s, K::OnsetBeat, beats);
    detail::setRow(p, s, K::OnsetTick, ticks);
  }
  return p;
}

/// Chooses slots of a source loop. Empty criteria select every active slot.
struct SlotSelector {
  std::set<int> instruments;        // instrument tokens; empty = any
  std::vector<std::size_t> slots;   // explicit slot indices; empty = any
  bool includeInactive = false;

  bool matches(std::size_t s, const TokenTuple& t) const {
    if (!slots.empty() && std::find(slots.begin(), slots.end(), s) == slots.end()) return false;
    if (isInactive(t)) return includeInactive && instruments.empty();
    return instruments.empty() || instruments.count(t[index(AttributeKind::Instrument)]) > 0;
  }
};

/// Frees `attributes` on the selected slots and pins everything else.
inline VocabularyPrior priorRegenerateAttributes(const TokenizedLoop& loop, const std::set<AttributeKind>& attributes,
                                                 const SlotSelector& selector) {
  VocabularyPrior p = priorFromLoop(loop);
  p.task = "regenerate_attributes";
  std::size_t selected = 0;
  for (std::size_t s = 0; s < loop.size(); ++s) {
    if (!selector.matches(s, loop.slots[s])) continue;
    ++selected;
    for (auto k : attributes) {
      auto r = p.rows.row(s, k);
      std::fill(r.begin(), r.end(), 1.0);
    }
  }
  if (selected == 0) throw Error(Errc::EmptySelection, "slot selector matches no slot");
  return p;
}

/// Uninformative prior plus a start state: the source loop noised to t_reveal.
struct VariationPlan {
  VocabularyPrior prior;
  SimplexState start;
  int startStep = 1;
};

inline VariationPlan priorVariation(const TokenizedLoop& loop, double tReveal, const DiffusionConfig& cfg) {
  if (!(tReveal > 0.0 && tReveal <= 1.0)) throw Error(Errc::InvalidArgument, "t_reveal must lie in (0, 1]");
  cfg.validate();
  VariationPlan plan{priorUninformative(loop.size()), {}, 1};
  plan.prior.task = "variation";
  plan.startStep = std::max(1, static_cast<int>(std::lround(tReveal * cfg.T)));
  RandomStream rng(cfg.seed, StreamPurpose::Variation, 0);
  const double t = static_cast<double>(plan.startStep) / cfg.T;
  plan.start = softmax(forwardNoise(logitGeneration(loop, cfg.K), t, cfg.schedule, cfg.K, rng));
  return plan;
}

// ---------------------------------------------------------------------------
// Task specifications.

enum class TaskKind {
  Unconditional,
  FullyDetermined,
  InfillBox,
  Instrumentation,
  Tonality,
  Rhythm,
  RegenerateAttributes,
  Variation
};

inline constexpr std::array<std::pair<TaskKind, std::string_view>, 8> kTaskKindNames = {{
    {TaskKind::Unconditional, "unconditional"},
    {TaskKind::FullyDetermined, "fully_determined"},
    {TaskKind::InfillBox, "infill_box"},
    {TaskKind::Instrumentation, "instrumentation"},
    {TaskKind::Tonality, "tonality"},
    {TaskKind::Rhythm, "rhythm"},
    {TaskKind::RegenerateAttributes, "regenerate_attributes"},
    {TaskKind::Variation, "variation"},
}};

inline std::string_view taskKindName(TaskKind k) {
  for (auto [kind, name] : kTaskKindNames)
    if (kind == k) return name;
  return "?";
}

inline std::optional<TaskKind> parseTaskKind(std::string_view s) {
  for (auto [kind, name] : kTaskKindNames)
    if (name == s) return kind;
  return std::nullopt;
}

inline bool taskNeedsSource(TaskKind k) {
  return k == TaskKind::FullyDetermined || k == TaskKind::InfillBox || k == TaskKind::RegenerateAttributes ||
         k == TaskKind::Variation;
}

/// A generation task. Beats are given in quarter notes (fractional allowed,
/// rounded to the tick grid). Only the fields used by `kind` matter.
struct TaskSpec {
  std::string name;
  TaskKind kind = TaskKind::Unconditional;
  double beginBeat = 0.0, endBeat = 16.0;
  PitchRange pitchRange{};
  std::optional<PitchRange> pitchLimit;  // extra melodic range for instrumentation
  int minNotes = 1, maxNotes = 4;
  std::set<int> instruments;             // instrument tokens
  std::set<int> pitchClasses;
  std::set<std::pair<int, int>> onsets;  // (beat, tick)
  std::set<AttributeKind> attributes;
  SlotSelector selector;
  double tReveal = 0.5;
  bool pinTempo = true;
  bool pinTag = true;
  int T = 100;
  double topP = 0.9;

  TickRange timeRange() const {
    return {static_cast<int>(std::lround(beginBeat * kTicksPerBeat)),
            static_cast<int>(std::lround(endBeat * kTicksPerBeat))};
  }
};

/// Field-level problem found while reading or checking a TaskSpec.
struct FieldError {
  std::string field;
  std::string message;
};

class TaskSpecError : public Error {
 public:
  explicit TaskSpecError(std::vector<FieldError> errors)
      : Error(Errc::InvalidArgument, summarize(errors)), errors_(std::move(errors)) {}
  TaskSpecError(std::string field, std::string message)
      : TaskSpecError(std::vector<FieldError>{{std::move(field), std::move(message)}}) {}
  const std::vector<FieldError>& errors() const { return errors_; }

 private:
  static std::string summarize(const std::vector<FieldError>& errors) {
    std::string s = "invalid task";
    for (const auto& e : errors) s += "; " + e.field + ": " + e.message;
    return s;
  }
  std::vector<FieldError> errors_;
};

/// Instrument token from "drums", a class name, or a number.
inline std::optional<int> instrumentFromJson(const nlohmann::json& j, const Vocabulary& vocab) {
  if (j.is_number_integer()) {
    const int v = j.get<int>();
    if (v >= 0 && v <= kDrumInstrument) return v;
    return std::nullopt;
  }
  if (!j.is_string()) return std::nullopt;
  const auto s = j.get<std::string>();
  if (s == "drums") return kDrumInstrument;
  return vocab.instruments().classByName(s);
}

inline nlohmann::json instrumentToJson(int token, const Vocabulary& vocab) {
  return token == kDrumInstrument ? std::string("drums") : vocab.instruments().name(token);
}

inline nlohmann::json taskSpecToJson(const TaskSpec& t, const Vocabulary& vocab) {
  nlohmann::json j = {{"name", t.name}, {"kind", taskKindName(t.kind)}, {"T", t.T}, {"top_p", t.topP}};
  switch (t.kind) {
    case TaskKind::InfillBox:
      j["time_range"] = {t.beginBeat, t.endBeat};
      j["pitch_range"] = {t.pitchRange.low, t.pitchRange.high};
      j["min_notes"] = t.minNotes;
      j["max_notes"] = t.maxNotes;
      j["pin_tempo"] = t.pinTempo;
      j["pin_tag"] = t.pinTag;
      break;
    case TaskKind::Instrumentation: {
      auto a = nlohmann::json::array();
      for (int i : t.instruments) a.push_back(instrumentToJson(i, vocab));
      j["instruments"] = a;
      if (t.pitchLimit) j["pitch_range"] = {t.pitchLimit->low, t.pitchLimit->high};
      break;
    }
    case TaskKind::Tonality:
      j["pitch_classes"] = t.pitchClasses;
      break;
    case TaskKind::Rhythm: {
      auto a = nlohmann::json::array();
      for (auto [b, tk] : t.onsets) a.push_back({b, tk});
      j["onsets"] = a;
      break;
    }
    case TaskKind::RegenerateAttributes: {
      auto attrs = nlohmann::json::array();
      for (auto k : t.attributes) attrs.push_back(attributeName(k));
      j["attributes"] = attrs;
      auto inst = nlohmann::json::array();
      for (int i : t.selector.instruments) inst.push_back(instrumentToJson(i, vocab));
      j["slot_selector"] = {{"instruments", inst}, {"slots", t.selector.slots},
                            {"include_inactive", t.selector.includeInactive}};
      j["pin_tempo"] = t.pinTempo;
      j["pin_tag"] = t.pinTag;
      break;
    }
    case TaskKind::Variation:
      j["t_reveal"] = t.tReveal;
      break;
    default:
      break;
  }
  return j;
}

/// Reads a TaskSpec, collecting every field problem before throwing.
inline TaskSpec taskSpecFromJson(const nlohmann::json& j, const Vocabulary& vocab) {
  std::vector<FieldError> errs;
  TaskSpec t;
  if (!j.is_object()) throw TaskSpecError("task", "must be an object");

  static const std::set<std::string> known = {"name",      "kind",          "T",          "top_p",
                                              "time_range", "pitch_range",  "min_notes",  "max_notes",
                                              "instruments", "pitch_classes", "onsets",   "attributes",
                                              "slot_selector", "t_reveal",  "pin_tempo",  "pin_tag"};
  for (const auto& [key, value] : j.items())
    if (!known.count(key)) errs.push_back({key, "unknown field"});

  auto read = [&](const char* key, auto& dst, auto check, const char* msg) {
    if (!j.contains(key)) return;
    try {
      auto v = j.at(key).get<std::decay_t<decltype(dst)>>();
      if (!check(v)) errs.push_back({key, msg});
      else dst = v;
    } catch (const nlohmann::json::exception&) {
      errs.push_back({key, "has the wrong type"});
    }
  };
  auto any = [](const auto&) { return true; };

  read("name", t.name, any, "");
  if (!j.contains("kind")) {
    errs.push_back({"kind", "is required"});
  } else if (!j.at("kind").is_string() || !parseTaskKind(j.at("kind").get<std::string>())) {
    errs.push_back({"kind", "unknown task kind"});
  } else {
    t.kind = *parseTaskKind(j.at("kind").get<std::string>());
  }
  read("T", t.T, [](int v) { return v >= 1; }, "must be at least 1");
  read("top_p", t.topP, [](double v) { return v > 0.0 && v <= 1.0; }, "must lie in (0, 1]");
  read("min_notes", t.minNotes, [](int v) { return v >= 0; }, "must be non-negative");
  read("max_notes", t.maxNotes, [](int v) { return v >= 0; }, "must be non-negative");
  read("pin_tempo", t.pinTempo, any, "");
  read("pin_tag", t.pinTag, any, "");
  read("t_reveal", t.tReveal, [](double v) { return v > 0.0 && v <= 1.0; }, "must lie in (0, 1]");

  if (j.contains("time_range")) {
    std::array<double, 2> r{};
    read("time_range", r, [](const std::array<double, 2>& v) { return v[0] >= 0 && v[1] <= 16 && v[0] < v[1]; },
         "must be [begin, end) beats with 0 <= begin < end <= 16");
    t.beginBeat = r[0], t.endBeat = r[1];
    if (!(r[0] >= 0 && r[1] <= 16 && r[0] < r[1])) t.beginBeat = 0, t.endBeat = 16;
  }
  if (j.contains("pitch_range")) {
    std::array<int, 2> r{0, 127};
    read("pitch_range", r, [](const std::array<int, 2>& v) { return v[0] >= 0 && v[1] <= 127 && v[0] <= v[1]; },
         "must be [low, high] with 0 <= low <= high <= 127");
    t.pitchRange = {r[0], r[1]};
    if (t.kind == TaskKind::Instrumentation) t.pitchLimit = t.pitchRange;
  }
  if (j.contains("pitch_classes")) {
    read("pitch_classes", t.pitchClasses,
         [](const std::set<int>& v) { return std::all_of(v.begin(), v.end(), [](int pc) { return pc >= 0 && pc < 12; }); },
         "entries must lie in 0..11");
  }
  if (j.contains("onsets")) {
    std::vector<std::array<int, 2>> on;
    read("onsets", on,
         [](const auto& v) {
           return std::all_of(v.begin(), v.end(), [](const std::array<int, 2>& o) {
             return o[0] >= 0 && o[0] < kLoopBeats && o[1] >= 0 && o[1] < kTicksPerBeat;
           });
         },
         "entries must be [beat 0..15, tick 0..23]");
    for (const auto& o : on) t.onsets.insert({o[0], o[1]});
  }
  auto readInstruments = [&](const nlohmann::json& arr, const std::string& field, std::set<int>& dst) {
    if (!arr.is_array()) {
      errs.push_back({field, "must be an array"});
      return;
    }
    for (const auto& v : arr) {
      if (auto i = instrumentFromJson(v, vocab)) dst.insert(*i);
      else errs.push_back({field, "unknown instrument " + v.dump()});
    }
  };
  if (j.contains("instruments")) readInstruments(j.at("instruments"), "instruments", t.instruments);
  if (j.contains("attributes")) {
    if (!j.at("attributes").is_array()) errs.push_back({"attributes", "must be an array"});
    else
      for (const auto& v : j.at("attributes")) {
        auto k = v.is_string() ? parseAttribute(v.get<std::string>()) : std::nullopt;
        if (k) t.attributes.insert(*k);
        else errs.push_back({"attributes", "unknown attribute " + v.dump()});
      }
  }
  if (j.contains("slot_selector")) {
    const auto& sel = j.at("slot_selector");
    if (!sel.is_object()) {
      errs.push_back({"slot_selector", "must be an object"});
    } else {
      for (const auto& [key, value] : sel.items()) {
        if (key == "instruments") readInstruments(value, "slot_selector.instruments", t.selector.instruments);
        else if (key == "slots" && value.is_array() &&
                 std::all_of(value.begin(), value.end(), [](const auto& x) { return x.is_number_unsigned(); }))
          t.selector.slots = value.get<std::vector<std::size_t>>();
        else if (key == "include_inactive" && value.is_boolean()) t.selector.includeInactive = value.get<bool>();
        else errs.push_back({"slot_selector." + key, "unknown field or wrong type"});
      }
    }
  }

  if (errs.empty()) {
    if (t.minNotes > t.maxNotes) errs.push_back({"min_notes", "must not exceed max_notes"});
    if (t.kind == TaskKind::Instrumentation && t.instruments.empty())
      errs.push_back({"instruments", "must name at least one instrument"});
    if (t.kind == TaskKind::Tonality && t.pitchClasses.empty())
      errs.push_back({"pitch_classes", "must name at least one pitch class"});
    if (t.kind == TaskKind::Rhythm && t.onsets.empty()) errs.push_back({"onsets", "must list at least one onset"});
  }
  if (!errs.empty()) throw TaskSpecError(std::move(errs));
  return t;
}

/// Named presets, each with its own step count and top-p.
inline std::vector<TaskSpec> taskPresets() {
  using K = AttributeKind;
  std::vector<TaskSpec> out;
  auto add = [&](std::string name, TaskKind kind, int T, double topP) -> TaskSpec& {
    TaskSpec t;
    t.name = std::move(name);
    t.kind = kind;
    t.T = T;
    t.topP = topP;
    out.push_back(t);
    return out.back();
  };
  add("unconditional", TaskKind::Unconditional, 100, 0.9);
  add("fully_determined", TaskKind::FullyDetermined, 50, 0.9);
  {
    auto& t = add("infill_box", TaskKind::InfillBox, 100, 0.9);
    t.beginBeat = 4, t.endBeat = 8;
    t.pitchRange = {48, 84};
    t.minNotes = 1, t.maxNotes = 4;
  }
  add("drums_only", TaskKind::Instrumentation, 100, 0.9).instruments = {kDrumInstrument};
  add("c_major", TaskKind::Tonality, 100, 0.9).pitchClasses = {0, 2, 4, 5, 7, 9, 11};
  {
    auto& t = add("quarter_note_rhythm", TaskKind::Rhythm, 100, 0.9);
    for (int b = 0; b < kLoopBeats; ++b) t.onsets.insert({b, 0});
  }
  {
    auto& t = add("regenerate_bass", TaskKind::RegenerateAttributes, 150, 0.8);
    t.attributes = {kAttributeOrder.begin(), kAttributeOrder.end()};
    t.selector.instruments = {4};  // bass class
  }
  add("replace_pitches", TaskKind::RegenerateAttributes, 100, 0.8).attributes = {K::Pitch};
  add("variation", TaskKind::Variation, 200, 0.95).tReveal = 0.5;
  return out;
}

inline std::optional<TaskSpec> findPreset(std::string_view name) {
  for (auto& t : taskPresets())
    if (t.name == name) return t;
  return std::nullopt;
}

/// A prior ready for generation, with the start state variations need.
struct CompiledTask {
  VocabularyPrior prior;
  std::optional<SimplexState> start;
  int startStep = 0;
};

/// Builds the prior for `spec`. `cfg` supplies K, T and the seed used by
/// variations; `source` is required by editing tasks.
inline CompiledTask compileTask(const TaskSpec& spec, const TokenizedLoop* source, std::size_t slots,
                                const DiffusionConfig& cfg) {
  using K = AttributeKind;
  if (taskNeedsSource(spec.kind) && !source)
    throw TaskSpecError("loop", "task '" + std::string(taskKindName(spec.kind)) + "' needs a source loop");
  if (source && source->size() != slots)
    throw TaskSpecError("loop", "source loop has " + std::to_string(source->size()) + " slots, model expects " +
                                      std::to_string(slots));
  CompiledTask out;
  switch (spec.kind) {
    case TaskKind::Unconditional:
      out.prior = priorUninformative(slots);
      break;
    case TaskKind::FullyDetermined:
      out.prior = priorFromLoop(*source);
      break;
    case TaskKind::InfillBox:
      out.prior = priorInfillBox(*source, spec.timeRange(), spec.pitchRange, spec.minNotes, spec.maxNotes,
                                 {spec.pinTempo, spec.pinTag});
      break;
    case TaskKind::Instrumentation:
      out.prior = priorInstrumentation(spec.instruments, slots);
      if (spec.pitchLimit) out.prior = combine(out.prior, priorPitchRange(*spec.pitchLimit, slots));
      break;
    case TaskKind::Tonality:
      out.prior = priorTonality(spec.pitchClasses, slots);
      break;
    case TaskKind::Rhythm:
      out.prior = priorRhythm(spec.onsets, slots);
      break;
    case TaskKind::RegenerateAttributes: {
      auto attrs = spec.attributes;
      if (spec.pinTempo) attrs.erase(K::Tempo);
      if (spec.pinTag) attrs.erase(K::Tag);
      out.prior = priorRegenerateAttributes(*source, attrs, spec.selector);
      break;
    }
    case TaskKind::Variation: {
      auto plan = priorVariation(*source, spec.tReveal, cfg);
      out.prior = std::move(plan.prior);
      out.start = std::move(plan.start);
      out.startStep = plan.startStep;
      break;
    }
  }
  out.prior.task = spec.name.empty() ? std::string(taskKindName(spec.kind)) : spec.name;
  return out;
}

}  // namespace symplex
