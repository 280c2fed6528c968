#pragma once

// MIDI <-> LoopSample conversion on the 24-ticks-per-beat grid.

#include <cmath>
#include <map>
#include <set>

#include "symplex/hash.hpp"
#include "symplex/midi.hpp"
#include "symplex/vocab.hpp"

namespace symplex {

inline constexpr int kDrumChannel = 9;
inline constexpr int kRenderPpq = 96;
inline constexpr std::string_view kTagTextPrefix = "symplex-tag:";

/// Tempo in bpm of the first tempo event (120 when absent).
inline double firstTempoBpm(const midi::Timeline& tl) {
  if (tl.tempos.empty()) return 120.0;
  return 6e7 / static_cast<double>(std::max<std::uint32_t>(tl.tempos.front().second, 1));
}

inline bool allFourFour(const midi::Timeline& tl) {
  return std::all_of(tl.timeSignatures.begin(), tl.timeSignatures.end(),
                     [](const auto& ts) { return ts.second.first == 4 && ts.second.second == 4; });
}

/// Tag stored by renderMidi, "other" when absent.
inline std::string tagFromTexts(const midi::Timeline& tl, const Vocabulary& vocab) {
  for (const auto& t : tl.texts)
    if (t.rfind(kTagTextPrefix, 0) == 0) {
      auto name = t.substr(kTagTextPrefix.size());
      if (vocab.tagToken(name)) return name;
    }
  return "other";
}

/// Quantizes the notes whose onset falls in [startBeat, startBeat + 16) beats.
/// Offsets past the window clip to its last tick; drum keys outside 35..81 are
/// dropped. A missing time signature counts as 4/4; tempo is clamped to 50..200.
inline LoopSample windowFromTimeline(const midi::Timeline& tl, int startBeat, const Vocabulary& vocab) {
  if (!allFourFour(tl)) throw Error(Errc::UnsupportedTimeSignature, "only 4/4 is supported");
  LoopSample loop;
  loop.tempoBpm = std::clamp(firstTempoBpm(tl), kTempoMin, kTempoMax);
  loop.tag = tagFromTexts(tl, vocab);
  loop.provenance.barOffset = startBeat / 4;
  const long begin = static_cast<long>(startBeat) * tl.ppq;
  const long end = begin + static_cast<long>(kLoopBeats) * tl.ppq;
  auto grid = [&](long tick) {
    return static_cast<int>(std::lround(static_cast<double>(tick - begin) * kTicksPerBeat / tl.ppq));
  };
  for (const auto& n : tl.notes) {
    if (n.start < begin || n.start >= end) continue;
    NoteEvent e;
    e.onset = grid(n.start);
    if (e.onset > kLastGridTick) continue;
    e.velocity = n.velocity;
    if (n.channel == kDrumChannel) {
      if (n.pitch < kDrumKeyLow || n.pitch > kDrumKeyHigh) continue;
      e.instrument = kDrumInstrument;
      e.pitch = n.pitch;
      e.offset = e.onset;
    } else {
      e.instrument = vocab.instruments().classOfProgram(n.program);
      e.pitch = n.pitch;
      e.offset = std::min(grid(n.end), kLastGridTick);
      if (e.offset <= e.onset) e.offset = e.onset + 1;
      if (e.offset > kLastGridTick) continue;
    }
    loop.events.push_back(e);
  }
  std::sort(loop.events.begin(), loop.events.end());
  return loop;
}

inline LoopSample parseMidiWindow(std::span<const std::uint8_t> bytes, int startBeat, const Vocabulary& vocab) {
  auto loop = windowFromTimeline(midi::timeline(midi::parse(bytes)), startBeat, vocab);
  loop.provenance.fileHash = hexDigest(fnv1a64(bytes));
  return loop;
}

/// One track per instrument class (plus a percussion track) after a conductor
/// track holding the tempo. Melodic classes take channels 0..8, 10..15 in class
/// order. Beyond 15 classes channels are shared, and those notes do not survive
/// a re-parse with their class. Drum hits last one grid tick.
inline std::vector<std::uint8_t> renderMidi(const LoopSample& loop, const Vocabulary& vocab) {
  using midi::Event;
  using midi::EventType;
  constexpr int scale = kRenderPpq / kTicksPerBeat;
  midi::File f;
  f.format = 1;
  f.ppq = kRenderPpq;

  midi::Track conductor;
  Event tempo;
  tempo.type = EventType::Tempo;
  tempo.tempo = static_cast<std::uint32_t>(std::lround(6e7 / tempoFromBin(tempoBin(loop.tempoBpm))));
  conductor.events.push_back(tempo);
  if (loop.tag != "other") {
    Event text;
    text.type = EventType::Text;
    text.data1 = 0x01;
    text.text = std::string(kTagTextPrefix) + loop.tag;
    conductor.events.push_back(text);
  }
  f.tracks.push_back(conductor);

  std::map<int, std::vector<NoteEvent>> byClass;
  for (const auto& e : loop.events) byClass[e.instrument].push_back(e);
  constexpr std::array<int, 15> channels = {0, 1, 2, 3, 4, 5, 6, 7, 8, 10, 11, 12, 13, 14, 15};
  std::size_t nextChannel = 0;
  for (auto& [cls, notes] : byClass) {
    const bool drums = cls == kDrumInstrument;
    const int channel = drums ? kDrumChannel : channels[nextChannel++ % channels.size()];
    std::vector<Event> offs, ons;
    for (const auto& n : notes) {
      Event on;
      on.type = EventType::NoteOn;
      on.channel = channel;
      on.data1 = n.pitch;
      on.data2 = std::clamp(n.velocity, 1, 127);
      on.tick = static_cast<long>(n.onset) * scale;
      Event off = on;
      off.type = EventType::NoteOff;
      off.data2 = 0;
      off.tick = drums ? on.tick + scale : static_cast<long>(n.offset) * scale;
      ons.push_back(on);
      offs.push_back(off);
    }
    midi::Track t;
    if (!drums) {
      Event pc;
      pc.type = EventType::ProgramChange;
      pc.channel = channel;
      pc.data1 = vocab.instruments().representativeProgram(cls);
      t.events.push_back(pc);
    }
    // At equal ticks note-offs precede note-ons (stable sort keeps this order).
    std::vector<Event> all = offs;
    all.insert(all.end(), ons.begin(), ons.end());
    std::stable_sort(all.begin(), all.end(), [](const Event& a, const Event& b) { return a.tick < b.tick; });
    t.events.insert(t.events.end(), all.begin(), all.end());
    f.tracks.push_back(std::move(t));
  }
  return midi::write(f);
}

}  // namespace symplex
