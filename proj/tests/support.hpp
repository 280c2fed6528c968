#pragma once

// Shared fixtures for the test suites: random quantized loops, the 8-loop toy
// dataset, a scripted denoiser and scratch directories.

#include <filesystem>
#include <random>
#include <set>
#include <string>

#include "symplex/denoiser.hpp"
#include "symplex/diffusion.hpp"
#include "symplex/midi.hpp"
#include "symplex/vocab.hpp"

namespace symplex::fixtures {

/// Random loop whose every value already sits on the token grid, so decoding
/// its encoding must give it back unchanged. At least one event.
inline LoopSample randomQuantizedLoop(std::mt19937_64& rng, const Vocabulary& vocab, std::size_t maxEvents) {
  auto uni = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  LoopSample l;
  l.tempoBpm = tempoFromBin(uni(0, kTempoBins - 1));
  const int tag = uni(0, kGenreTagCount);
  l.tag = tag == kGenreTagCount ? "other" : vocab.genres()[tag];
  const int n = uni(1, static_cast<int>(maxEvents));
  for (int i = 0; i < n; ++i) {
    NoteEvent e;
    e.velocity = velocityFromBin(uni(0, kVelocityBins - 1));
    e.onset = uni(0, kLastGridTick - 1);
    if (uni(0, 3) == 0) {
      e.instrument = kDrumInstrument;
      e.pitch = uni(kDrumKeyLow, kDrumKeyHigh);
      e.offset = e.onset;
    } else {
      e.instrument = uni(0, kInstrumentClassCount - 1);
      e.pitch = uni(0, kMelodicPitchCount - 1);
      e.offset = uni(e.onset + 1, kLastGridTick);
    }
    l.events.push_back(e);
  }
  std::sort(l.events.begin(), l.events.end());
  return l;
}

/// Eight small loops differing in tempo, tag, bass pitch and piano rhythm.
inline std::vector<LoopSample> toyLoops(const Vocabulary& vocab) {
  std::vector<LoopSample> out;
  for (int i = 0; i < 8; ++i) {
    LoopSample l;
    l.tempoBpm = tempoFromBin(2 * i);
    l.tag = vocab.genres()[i];
    l.events = {{4, 36 + i, 0, 4 * kTicksPerBeat, 90},
                {kDrumInstrument, 36, 0, 0, 102},
                {0, 60 + i, 2 * kTicksPerBeat + 12 * (i % 2), 3 * kTicksPerBeat + 12, 70},
                {kDrumInstrument, 38, 4 * kTicksPerBeat, 4 * kTicksPerBeat, 102}};
    for (auto& e : l.events) e.velocity = velocityFromBin(velocityBin(e.velocity));
    std::sort(l.events.begin(), l.events.end());
    out.push_back(l);
  }
  return out;
}

inline std::vector<TokenizedLoop> toyDataset(const Vocabulary& vocab, std::size_t slots = 32) {
  std::vector<TokenizedLoop> out;
  for (const auto& l : toyLoops(vocab)) out.push_back(encodeLoop(l, slots, vocab));
  return out;
}

/// A denoiser that always predicts one fixed loop with confidence `K`.
struct FixedDenoiser {
  TokenizedLoop target;
  double K = 5.0;
  LogitTensor operator()(const SimplexState&, double) const { return logitGeneration(target, K); }
};

/// Predicts uniform logits: the prior alone decides.
struct UniformDenoiser {
  LogitTensor operator()(const SimplexState& p, double) const { return {AttributeTensor(p.slots(), 0.0)}; }
};

inline DenoiserConfig tinyConfig(int slots = 6) {
  DenoiserConfig c;
  c.layers = 1;
  c.heads = 2;
  c.hidden = 8;
  c.feedforward = 12;
  c.slots = slots;
  c.timeDim = 4;
  return c;
}

/// Fresh directory under the system temp dir, removed on destruction.
class ScratchDir {
 public:
  explicit ScratchDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("symplex-" + tag + "-" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~ScratchDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  ScratchDir(const ScratchDir&) = delete;
  ScratchDir& operator=(const ScratchDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

/// Single-track MIDI file with the given notes (channel, pitch, start, end) at `ppq`.
struct SimpleNote {
  int channel, pitch;
  long start, end;
  int velocity = 100;
  int program = 0;
};

inline std::vector<std::uint8_t> simpleMidi(const std::vector<SimpleNote>& notes, int ppq = 96,
                                            std::uint32_t tempo = 500000, bool withTimeSig = true) {
  midi::File f;
  f.format = 0;
  f.ppq = ppq;
  midi::Track t;
  midi::Event te;
  te.type = midi::EventType::Tempo;
  te.tempo = tempo;
  t.events.push_back(te);
  if (withTimeSig) {
    midi::Event ts;
    ts.type = midi::EventType::TimeSignature;
    t.events.push_back(ts);
  }
  std::set<std::pair<int, int>> programs;
  for (const auto& n : notes)
    if (n.channel != 9 && programs.insert({n.channel, n.program}).second) {
      midi::Event pc;
      pc.type = midi::EventType::ProgramChange;
      pc.channel = n.channel;
      pc.data1 = n.program;
      t.events.push_back(pc);
    }
  std::vector<midi::Event> offs, ons;
  for (const auto& n : notes) {
    midi::Event on;
    on.type = midi::EventType::NoteOn;
    on.channel = n.channel;
    on.data1 = n.pitch;
    on.data2 = n.velocity;
    on.tick = n.start;
    auto off = on;
    off.type = midi::EventType::NoteOff;
    off.data2 = 0;
    off.tick = n.end;
    ons.push_back(on);
    offs.push_back(off);
  }
  offs.insert(offs.end(), ons.begin(), ons.end());
  std::stable_sort(offs.begin(), offs.end(), [](const auto& a, const auto& b) { return a.tick < b.tick; });
  t.events.insert(t.events.end(), offs.begin(), offs.end());
  f.tracks.push_back(t);
  return midi::write(f);
}

}  // namespace symplex::fixtures
