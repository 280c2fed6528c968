#pragma once

// Standard MIDI file (format 0/1) reading and writing. Events keep absolute
// tick times; channel voice, tempo, time-signature and text meta events are
// decoded, everything else is kept as raw bytes or skipped.

#include <algorithm>
#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "symplex/error.hpp"

namespace symplex::midi {

enum class EventType : std::uint8_t {
  NoteOn,
  NoteOff,
  ProgramChange,
  Controller,
  Tempo,
  TimeSignature,
  Text,
  EndOfTrack,
  Other
};

struct Event {
  long tick = 0;
  EventType type = EventType::Other;
  int channel = 0;
  int data1 = 0;  // pitch, program, controller
  int data2 = 0;  // velocity, value
  std::uint32_t tempo = 500000;  // microseconds per quarter note
  int numerator = 4, denominator = 4;
  std::string text;
};

struct Track {
  std::vector<Event> events;  // sorted by tick
};

struct File {
  int format = 1;
  int ppq = 96;
  std::vector<Track> tracks;
};

namespace detail {

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}
  bool done() const { return pos_ >= b_.size(); }
  std::size_t pos() const { return pos_; }
  std::uint8_t u8() {
    if (pos_ >= b_.size()) throw Error(Errc::ParseError, "unexpected end of MIDI data");
    return b_[pos_++];
  }
  std::uint8_t peek() const {
    if (pos_ >= b_.size()) throw Error(Errc::ParseError, "unexpected end of MIDI data");
    return b_[pos_];
  }
  std::uint32_t be(int n) {
    std::uint32_t v = 0;
    for (int i = 0; i < n; ++i) v = (v << 8) | u8();
    return v;
  }
  std::uint32_t vlq() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      const auto c = u8();
      v = (v << 7) | (c & 0x7F);
      if (!(c & 0x80)) return v;
    }
    throw Error(Errc::ParseError, "variable-length quantity too long");
  }
  std::span<const std::uint8_t> take(std::size_t n) {
    if (pos_ + n > b_.size()) throw Error(Errc::ParseError, "chunk runs past end of file");
    auto s = b_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

inline Track parseTrack(std::span<const std::uint8_t> data) {
  Reader r(data);
  Track t;
  long tick = 0;
  std::uint8_t status = 0;
  while (!r.done()) {
    tick += r.vlq();
    std::uint8_t b = r.peek();
    if (b & 0x80) {
      r.u8();
      if (b < 0xF0) status = b;
    } else if (status == 0) {
      throw Error(Errc::ParseError, "running status without a status byte");
    } else {
      b = status;
    }
    Event e;
    e.tick = tick;
    if (b == 0xFF) {
      const auto type = r.u8();
      const auto len = r.vlq();
      const auto payload = r.take(len);
      if (type == 0x51 && len == 3) {
        e.type = EventType::Tempo;
        e.tempo = (std::uint32_t(payload[0]) << 16) | (std::uint32_t(payload[1]) << 8) | payload[2];
      } else if (type == 0x58 && len >= 2) {
        e.type = EventType::TimeSignature;
        e.numerator = payload[0];
        e.denominator = 1 << std::min<int>(payload[1], 30);
      } else if (type >= 0x01 && type <= 0x07) {
        e.type = EventType::Text;
        e.data1 = type;
        e.text.assign(payload.begin(), payload.end());
      } else if (type == 0x2F) {
        e.type = EventType::EndOfTrack;
        t.events.push_back(e);
        break;
      } else {
        continue;
      }
      t.events.push_back(e);
      continue;
    }
    if (b == 0xF0 || b == 0xF7) {
      r.take(r.vlq());
      continue;
    }
    if (b >= 0xF0) throw Error(Errc::ParseError, "unexpected system message in track");
    e.channel = b & 0x0F;
    switch (b & 0xF0) {
      case 0x80:
        e.type = EventType::NoteOff;
        e.data1 = r.u8() & 0x7F;
        e.data2 = r.u8() & 0x7F;
        break;
      case 0x90:
        e.data1 = r.u8() & 0x7F;
        e.data2 = r.u8() & 0x7F;
        e.type = e.data2 == 0 ? EventType::NoteOff : EventType::NoteOn;
        break;
      case 0xB0:
        e.type = EventType::Controller;
        e.data1 = r.u8() & 0x7F;
        e.data2 = r.u8() & 0x7F;
        break;
      case 0xC0:
        e.type = EventType::ProgramChange;
        e.data1 = r.u8() & 0x7F;
        break;
      case 0xD0:
        e.type = EventType::Other;
        r.u8();
        break;
      default:  // 0xA0 poly pressure, 0xE0 pitch bend
        e.type = EventType::Other;
        r.u8();
        r.u8();
        break;
    }
    t.events.push_back(e);
  }
  return t;
}

inline void putVlq(std::vector<std::uint8_t>& out, std::uint32_t v) {
  std::uint8_t buf[5];
  int n = 0;
  buf[n++] = v & 0x7F;
  while (v >>= 7) buf[n++] = static_cast<std::uint8_t>(0x80 | (v & 0x7F));
  while (n) out.push_back(buf[--n]);
}

inline void putBe(std::vector<std::uint8_t>& out, std::uint32_t v, int n) {
  for (int i = n - 1; i >= 0; --i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

}  // namespace detail

inline File parse(std::span<const std::uint8_t> bytes) {
  detail::Reader r(bytes);
  if (bytes.size() < 14) throw Error(Errc::ParseError, "file too short for a MIDI header");
  const auto id = r.take(4);
  if (std::string(id.begin(), id.end()) != "MThd") throw Error(Errc::ParseError, "missing MThd header");
  const auto hlen = r.be(4);
  if (hlen < 6) throw Error(Errc::ParseError, "MThd chunk too short");
  File f;
  f.format = static_cast<int>(r.be(2));
  const auto ntracks = r.be(2);
  const auto division = r.be(2);
  r.take(hlen - 6);
  if (f.format > 2) throw Error(Errc::ParseError, "unknown MIDI format " + std::to_string(f.format));
  if (f.format == 2) throw Error(Errc::ParseError, "format 2 files are not supported");
  if (division & 0x8000) throw Error(Errc::ParseError, "SMPTE time division is not supported");
  if (division == 0) throw Error(Errc::ParseError, "zero ticks per quarter note");
  f.ppq = static_cast<int>(division);
  while (!r.done() && f.tracks.size() < ntracks) {
    const auto cid = r.take(4);
    const auto len = r.be(4);
    const auto body = r.take(len);
    if (std::string(cid.begin(), cid.end()) == "MTrk") f.tracks.push_back(detail::parseTrack(body));
  }
  if (f.tracks.size() != ntracks) throw Error(Errc::ParseError, "header announces more tracks than present");
  return f;
}

/// Serializes with running status off. Events are stably sorted by tick.
inline std::vector<std::uint8_t> write(const File& f) {
  std::vector<std::uint8_t> out = {'M', 'T', 'h', 'd'};
  detail::putBe(out, 6, 4);
  detail::putBe(out, static_cast<std::uint32_t>(f.format), 2);
  detail::putBe(out, static_cast<std::uint32_t>(f.tracks.size()), 2);
  detail::putBe(out, static_cast<std::uint32_t>(f.ppq), 2);
  for (const auto& track : f.tracks) {
    auto events = track.events;
    std::stable_sort(events.begin(), events.end(), [](const Event& a, const Event& b) { return a.tick < b.tick; });
    std::vector<std::uint8_t> body;
    long last = 0;
    for (const auto& e : events) {
      if (e.type == EventType::EndOfTrack || e.type == EventType::Other) continue;
      detail::putVlq(body, static_cast<std::uint32_t>(e.tick - last));
      last = e.tick;
      const auto ch = static_cast<std::uint8_t>(e.channel & 0x0F);
      switch (e.type) {
        case EventType::NoteOn:
          body.insert(body.end(), {static_cast<std::uint8_t>(0x90 | ch), static_cast<std::uint8_t>(e.data1),
                                   static_cast<std::uint8_t>(e.data2)});
          break;
        case EventType::NoteOff:
          body.insert(body.end(), {static_cast<std::uint8_t>(0x80 | ch), static_cast<std::uint8_t>(e.data1),
                                   static_cast<std::uint8_t>(e.data2)});
          break;
        case EventType::ProgramChange:
          body.insert(body.end(), {static_cast<std::uint8_t>(0xC0 | ch), static_cast<std::uint8_t>(e.data1)});
          break;
        case EventType::Controller:
          body.insert(body.end(), {static_cast<std::uint8_t>(0xB0 | ch), static_cast<std::uint8_t>(e.data1),
                                   static_cast<std::uint8_t>(e.data2)});
          break;
        case EventType::Tempo:
          body.insert(body.end(), {0xFF, 0x51, 0x03});
          detail::putBe(body, e.tempo, 3);
          break;
        case EventType::TimeSignature: {
          int pow2 = 0;
          while ((1 << pow2) < e.denominator) ++pow2;
          body.insert(body.end(), {0xFF, 0x58, 0x04, static_cast<std::uint8_t>(e.numerator),
                                   static_cast<std::uint8_t>(pow2), 24, 8});
          break;
        }
        case EventType::Text:
          body.insert(body.end(), {0xFF, static_cast<std::uint8_t>(e.data1 ? e.data1 : 1)});
          detail::putVlq(body, static_cast<std::uint32_t>(e.text.size()));
          body.insert(body.end(), e.text.begin(), e.text.end());
          break;
        default:
          break;
      }
    }
    body.insert(body.end(), {0x00, 0xFF, 0x2F, 0x00});
    out.insert(out.end(), {'M', 'T', 'r', 'k'});
    detail::putBe(out, static_cast<std::uint32_t>(body.size()), 4);
    out.insert(out.end(), body.begin(), body.end());
  }
  return out;
}

/// A sounding note recovered from note-on/note-off pairs.
struct Note {
  int channel = 0;
  int program = 0;  // program active on the channel at note-on
  int pitch = 60;
  int velocity = 100;
  long start = 0;
  long end = 0;
  auto operator<=>(const Note&) const = default;
};

/// Everything the loop pipeline needs from a file, on one merged timeline.
struct Timeline {
  int ppq = 96;
  std::vector<Note> notes;  // sorted by (start, channel, pitch)
  std::vector<std::pair<long, std::uint32_t>> tempos;
  std::vector<std::pair<long, std::pair<int, int>>> timeSignatures;
  std::vector<std::string> texts;
  long lastTick = 0;
};

/// Pairs note-ons with note-offs first-in first-out per (channel, pitch).
/// Notes still sounding at the end close at the last event tick.
inline Timeline timeline(const File& f) {
  struct Ref {
    const Event* e;
    std::size_t track, order;
  };
  std::vector<Ref> all;
  for (std::size_t t = 0; t < f.tracks.size(); ++t)
    for (std::size_t i = 0; i < f.tracks[t].events.size(); ++i) all.push_back({&f.tracks[t].events[i], t, i});
  // Same tick: note-offs first, then program changes, then note-ons.
  auto rank = [](EventType t) { return t == EventType::NoteOff ? 0 : (t == EventType::NoteOn ? 2 : 1); };
  std::stable_sort(all.begin(), all.end(), [&](const Ref& a, const Ref& b) {
    if (a.e->tick != b.e->tick) return a.e->tick < b.e->tick;
    return rank(a.e->type) < rank(b.e->type);
  });

  Timeline tl;
  tl.ppq = f.ppq;
  std::array<int, 16> program{};
  std::vector<std::vector<Note>> open(16 * 128);
  for (const auto& ref : all) {
    const auto& e = *ref.e;
    tl.lastTick = std::max(tl.lastTick, e.tick);
    switch (e.type) {
      case EventType::ProgramChange:
        program[e.channel] = e.data1;
        break;
      case EventType::NoteOn:
        open[e.channel * 128 + e.data1].push_back({e.channel, program[e.channel], e.data1, e.data2, e.tick, e.tick});
        break;
      case EventType::NoteOff: {
        auto& q = open[e.channel * 128 + e.data1];
        if (q.empty()) break;
        Note n = q.front();
        q.erase(q.begin());
        n.end = e.tick;
        tl.notes.push_back(n);
        break;
      }
      case EventType::Tempo:
        tl.tempos.emplace_back(e.tick, e.tempo);
        break;
      case EventType::TimeSignature:
        tl.timeSignatures.push_back({e.tick, {e.numerator, e.denominator}});
        break;
      case EventType::Text:
        tl.texts.push_back(e.text);
        break;
      default:
        break;
    }
  }
  for (auto& q : open)
    for (auto n : q) {
      n.end = tl.lastTick;
      tl.notes.push_back(n);
    }
  std::sort(tl.notes.begin(), tl.notes.end(), [](const Note& a, const Note& b) {
    return std::tie(a.start, a.channel, a.pitch, a.end) < std::tie(b.start, b.channel, b.pitch, b.end);
  });
  return tl;
}

}  // namespace symplex::midi
