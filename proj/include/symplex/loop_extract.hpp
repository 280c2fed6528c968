#pragma once

// 4-bar loop extraction: prefilter, downbeat crop, eighth-note piano roll,
// bookended-section scan, metrical filtering, and windowed tokenization.

#include <bitset>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "symplex/codec_midi.hpp"

namespace symplex {

inline constexpr int kRollChannels = 140;  // 12 pitch classes + 128 drum keys
inline constexpr int kFramesPerBeat = 2;
inline constexpr int kLoopFrames = kLoopBeats * kFramesPerBeat;  // 32
inline constexpr int kMetricalLevels = 8;

using Frame = std::bitset<kRollChannels>;

struct PianoRoll {
  std::vector<Frame> frames;
  std::size_t size() const { return frames.size(); }
};

/// boundary[b][L-1]: probability of a level-L boundary at beat b.
struct MetricalAnalysis {
  std::vector<std::array<double, kMetricalLevels>> boundary;
  std::size_t beats() const { return boundary.size(); }
  double at(std::size_t beat, int level) const {
    return beat < boundary.size() ? boundary[beat][level - 1] : 0.0;
  }
};

struct LoopCandidate {
  int startFrame = 0;
  int endFrame = 0;  // exclusive
  int bookendLength = 2;
  int startBeat() const { return startFrame / kFramesPerBeat; }
  int length() const { return endFrame - startFrame; }
  auto operator<=>(const LoopCandidate&) const = default;
};

enum class PrefilterReason { Accepted, MultipleTempi, TimeSignature };

inline std::string_view prefilterReasonName(PrefilterReason r) {
  switch (r) {
    case PrefilterReason::Accepted: return "Accepted";
    case PrefilterReason::MultipleTempi: return "MultipleTempi";
    case PrefilterReason::TimeSignature: return "TimeSignature";
  }
  return "?";
}

/// Accepts files with at most one distinct tempo and only 4/4 signatures.
inline PrefilterReason prefilterMidi(const midi::Timeline& tl) {
  std::set<std::uint32_t> tempi;
  for (const auto& [tick, t] : tl.tempos) tempi.insert(t);
  if (tempi.size() > 1) return PrefilterReason::MultipleTempi;
  if (!allFourFour(tl)) return PrefilterReason::TimeSignature;
  return PrefilterReason::Accepted;
}

inline PrefilterReason prefilterMidi(std::span<const std::uint8_t> bytes) {
  return prefilterMidi(midi::timeline(midi::parse(bytes)));
}

/// Beat count covered by the notes (a partial last beat counts).
inline std::size_t pieceBeats(const std::vector<midi::Note>& notes, int ppq) {
  long last = 0;
  for (const auto& n : notes) last = std::max({last, n.end, n.start + 1});
  return static_cast<std::size_t>((last + ppq - 1) / ppq);
}

/// Level L is certain at beat b iff 2^(L-1) divides b, otherwise impossible.
inline MetricalAnalysis heuristicAnalysis(std::size_t beats) {
  MetricalAnalysis a;
  a.boundary.resize(beats);
  for (std::size_t b = 0; b < beats; ++b)
    for (int L = 1; L <= kMetricalLevels; ++L) a.boundary[b][L - 1] = b % (std::size_t{1} << (L - 1)) == 0 ? 1.0 : 0.0;
  return a;
}

/// Reads a sidecar analysis: one line per beat with 8 probabilities (levels
/// 1..8) separated by whitespace. Blank lines and '#' comments are skipped.
inline MetricalAnalysis parseAnalysis(std::istream& in) {
  MetricalAnalysis a;
  std::string line;
  std::size_t lineNo = 0;
  while (std::getline(in, line)) {
    ++lineNo;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    std::array<double, kMetricalLevels> row{};
    std::size_t n = 0;
    double v;
    while (ls >> v) {
      if (n == kMetricalLevels || !(v >= 0.0 && v <= 1.0))
        throw Error(Errc::ParseError, "analysis line " + std::to_string(lineNo) + ": need 8 values in [0, 1]");
      row[n++] = v;
    }
    if (!ls.eof()) throw Error(Errc::ParseError, "analysis line " + std::to_string(lineNo) + ": not a number");
    if (n == 0) continue;
    if (n != kMetricalLevels)
      throw Error(Errc::ParseError, "analysis line " + std::to_string(lineNo) + ": need 8 values in [0, 1]");
    a.boundary.push_back(row);
  }
  return a;
}

struct CropResult {
  std::vector<midi::Note> notes;
  MetricalAnalysis analysis;
  int beatOffset = 0;
};

/// Drops everything before the first beat with level-4 probability > 0.5 and
/// shifts notes and analysis to start there.
inline CropResult cropToFirstDownbeat(const std::vector<midi::Note>& notes, const MetricalAnalysis& analysis,
                                      int ppq) {
  std::size_t beat = 0;
  while (beat < analysis.beats() && !(analysis.boundary[beat][3] > 0.5)) ++beat;
  if (beat == analysis.beats()) throw Error(Errc::NoDownbeat, "no beat has a level-4 boundary above 0.5");
  CropResult r;
  r.beatOffset = static_cast<int>(beat);
  const long shift = static_cast<long>(beat) * ppq;
  for (auto n : notes) {
    if (n.start < shift) continue;
    n.start -= shift;
    n.end -= shift;
    r.notes.push_back(n);
  }
  r.analysis.boundary.assign(analysis.boundary.begin() + static_cast<std::ptrdiff_t>(beat), analysis.boundary.end());
  return r;
}

/// Melodic notes mark their pitch class over every frame they sound in; drum
/// notes mark channel 12 + key at their onset frame only. `beats` fixes the
/// length (0: derive it from the notes).
inline PianoRoll buildPianoRoll(const std::vector<midi::Note>& notes, int ppq, std::size_t beats = 0) {
  if (beats == 0) beats = pieceBeats(notes, ppq);
  if (notes.empty() && beats == 0) return {};
  PianoRoll roll;
  roll.frames.resize(beats * kFramesPerBeat);
  const double frameTicks = static_cast<double>(ppq) / kFramesPerBeat;
  for (const auto& n : notes) {
    const auto first = static_cast<long>(std::floor(n.start / frameTicks));
    if (first < 0 || first >= static_cast<long>(roll.size())) continue;
    if (n.channel == kDrumChannel) {
      roll.frames[first].set(12 + n.pitch);
      continue;
    }
    long last = static_cast<long>(std::ceil(n.end / frameTicks)) - 1;
    last = std::clamp(last, first, static_cast<long>(roll.size()) - 1);
    for (long f = first; f <= last; ++f) roll.frames[f].set(n.pitch % 12);
  }
  return roll;
}

/// All [s, e) with frames [s, s+L) == [e, e+L), s < e, e + L <= F, and a
/// bookend that is not entirely silent. Sorted by (s, e).
inline std::vector<LoopCandidate> findBookended(const PianoRoll& roll, int bookendLength = 2) {
  std::vector<LoopCandidate> out;
  const int F = static_cast<int>(roll.size());
  const int L = bookendLength;
  if (L < 1 || F < L) return out;
  auto windowHash = [&](int s) {
    std::size_t h = 0;
    for (int i = 0; i < L; ++i) h = h * 1000003u ^ std::hash<Frame>{}(roll.frames[s + i]);
    return h;
  };
  auto silent = [&](int s) {
    for (int i = 0; i < L; ++i)
      if (roll.frames[s + i].any()) return false;
    return true;
  };
  auto equal = [&](int a, int b) {
    for (int i = 0; i < L; ++i)
      if (roll.frames[a + i] != roll.frames[b + i]) return false;
    return true;
  };
  std::unordered_map<std::size_t, std::vector<int>> groups;
  for (int s = 0; s + L <= F; ++s)
    if (!silent(s)) groups[windowHash(s)].push_back(s);
  for (const auto& [h, starts] : groups)
    for (std::size_t i = 0; i < starts.size(); ++i)
      for (std::size_t j = i + 1; j < starts.size(); ++j)
        if (equal(starts[i], starts[j])) out.push_back({starts[i], starts[j], L});
  std::sort(out.begin(), out.end());
  return out;
}

/// Keeps 4-bar, beat-aligned candidates starting on a level-5 boundary with no
/// level 6..8 boundary on any interior beat (probabilities above 0.5).
inline std::vector<LoopCandidate> filterCandidates(const std::vector<LoopCandidate>& cands,
                                                   const MetricalAnalysis& analysis) {
  std::vector<LoopCandidate> out;
  for (const auto& c : cands) {
    if (c.length() != kLoopFrames || c.startFrame % kFramesPerBeat != 0) continue;
    const auto start = static_cast<std::size_t>(c.startBeat());
    if (!(analysis.at(start, 5) > 0.5)) continue;
    bool quiet = true;
    for (std::size_t b = start + 1; b < start + kLoopBeats && quiet; ++b)
      for (int L = 6; L <= kMetricalLevels; ++L)
        if (analysis.at(b, L) > 0.5) quiet = false;
    if (quiet) out.push_back(c);
  }
  return out;
}

struct ExtractedLoop {
  LoopSample loop;
  TokenizedLoop tokens;
  int startBeat = 0;  // in the uncropped file
};

struct ExtractResult {
  std::vector<ExtractedLoop> loops;
  std::size_t candidates = 0;
  std::size_t accepted = 0;     // after metrical filtering
  std::size_t duplicates = 0;
  std::size_t skipped = 0;      // windows that failed to encode
  std::vector<std::string> notes;  // skip reasons
};

/// Full pipeline for one file. `analysis` (uncropped, per beat) falls back to
/// heuristicAnalysis when absent. An empty `tag` keeps the one stored in the
/// file. Throws on prefilter rejection.
inline ExtractResult extractLoops(std::span<const std::uint8_t> bytes, const std::optional<MetricalAnalysis>& analysis,
                                  std::size_t slots, const Vocabulary& vocab, const std::string& tag = {}) {
  const auto tl = midi::timeline(midi::parse(bytes));
  if (auto r = prefilterMidi(tl); r != PrefilterReason::Accepted) {
    throw Error(r == PrefilterReason::TimeSignature ? Errc::UnsupportedTimeSignature : Errc::InvalidArgument,
                "prefilter rejected: " + std::string(prefilterReasonName(r)));
  }
  const auto beats = pieceBeats(tl.notes, tl.ppq);
  MetricalAnalysis full = analysis ? *analysis : heuristicAnalysis(beats);
  if (full.beats() < beats) full.boundary.resize(beats, std::array<double, kMetricalLevels>{});

  ExtractResult out;
  const auto crop = cropToFirstDownbeat(tl.notes, full, tl.ppq);
  const auto croppedBeats = beats > static_cast<std::size_t>(crop.beatOffset) ? beats - crop.beatOffset : 0;
  const auto roll = buildPianoRoll(crop.notes, tl.ppq, croppedBeats);
  const auto cands = findBookended(roll, 2);
  out.candidates = cands.size();
  const auto kept = filterCandidates(cands, crop.analysis);
  out.accepted = kept.size();

  const auto fileHash = hexDigest(fnv1a64(bytes));
  std::set<std::vector<TokenTuple>> seen;
  for (const auto& c : kept) {
    const int startBeat = crop.beatOffset + c.startBeat();
    LoopSample loop = windowFromTimeline(tl, startBeat, vocab);
    if (!tag.empty()) loop.tag = tag;
    loop.provenance.fileHash = fileHash;
    if (loop.events.empty()) continue;
    TokenizedLoop tokens;
    try {
      tokens = encodeLoop(loop, slots, vocab);
    } catch (const Error& e) {
      ++out.skipped;
      out.notes.push_back("beat " + std::to_string(startBeat) + ": " + e.what());
      continue;
    }
    if (!seen.insert(activeMultiset(tokens)).second) {
      ++out.duplicates;
      continue;
    }
    out.loops.push_back({std::move(loop), std::move(tokens), startBeat});
  }
  return out;
}

}  // namespace symplex
