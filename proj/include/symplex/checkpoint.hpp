#pragma once

// Checkpoint layout (all integers little-endian):
//   "SYMPLXCK" | u32 format version | u32 header length | header JSON
//   | u32 block count | blocks { u32 name length, name, u32 rows, u32 cols, values }
//   | u64 FNV-1a checksum of everything before it
// Values are IEEE-754 in the dtype named by the header ("f32" or "f64").

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "symplex/denoiser.hpp"
#include "symplex/hash.hpp"

namespace symplex {

inline constexpr char kCheckpointMagic[8] = {'S', 'Y', 'M', 'P', 'L', 'X', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

struct TrainingState {
  long step = 0;
  int epoch = 0;
};

template <class S>
struct Checkpoint {
  DenoiserParams<S> params;
  std::optional<AdamState<S>> adam;
  TrainingState state;
};

template <class S>
constexpr const char* dtypeName() {
  static_assert(std::is_same_v<S, float> || std::is_same_v<S, double>);
  return std::is_same_v<S, float> ? "f32" : "f64";
}

namespace detail {

class ByteWriter {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  template <class U>
  void le(U v) {
    using Bits = std::conditional_t<sizeof(U) == 8, std::uint64_t, std::uint32_t>;
    auto bits = std::bit_cast<Bits>(v);
    for (std::size_t i = 0; i < sizeof(U); ++i) out_.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
  }
  void str(const std::string& s) {
    le<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  std::vector<std::uint8_t>& data() { return out_; }

 private:
  std::vector<std::uint8_t> out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> in) : in_(in) {}
  void need(std::size_t n) const {
    if (pos_ + n > in_.size()) throw Error(Errc::CorruptCheckpoint, "truncated checkpoint");
  }
  template <class U>
  U le() {
    using Bits = std::conditional_t<sizeof(U) == 8, std::uint64_t, std::uint32_t>;
    need(sizeof(U));
    Bits bits = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) bits |= static_cast<Bits>(in_[pos_ + i]) << (8 * i);
    pos_ += sizeof(U);
    return std::bit_cast<U>(bits);
  }
  std::string str() {
    const auto n = le<std::uint32_t>();
    need(n);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::span<const std::uint8_t> take(std::size_t n) {
    need(n);
    auto s = in_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

template <class S>
void writeBlock(ByteWriter& w, const std::string& name, const ag::Matrix<S>& m) {
  w.str(name);
  w.template le<std::uint32_t>(static_cast<std::uint32_t>(m.rows()));
  w.template le<std::uint32_t>(static_cast<std::uint32_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.size(); ++i) w.le(m.data()[i]);
}

}  // namespace detail

template <class S>
std::vector<std::uint8_t> serializeCheckpoint(const DenoiserParams<S>& params, const AdamState<S>* adam = nullptr,
                                              TrainingState state = {}) {
  nlohmann::json header = {{"format_version", kCheckpointFormatVersion},
                           {"dtype", dtypeName<S>()},
                           {"config", params.config},
                           {"vocab_version", params.config.vocabVersion},
                           {"training", {{"step", state.step}, {"epoch", state.epoch}}},
                           {"optimizer", adam && !adam->m.empty() ? nlohmann::json{{"adam_step", adam->step}}
                                                                   : nlohmann::json(nullptr)}};
  detail::ByteWriter w;
  w.bytes(kCheckpointMagic, sizeof(kCheckpointMagic));
  w.le<std::uint32_t>(kCheckpointFormatVersion);
  w.str(header.dump());

  std::vector<std::pair<std::string, const ag::Matrix<S>*>> blocks;
  params.forEach([&](const ag::Parameter<S>& p) { blocks.emplace_back(p.name, &p.value); });
  if (adam && !adam->m.empty()) {
    std::size_t i = 0;
    params.forEach([&](const ag::Parameter<S>& p) {
      blocks.emplace_back("adam.m." + p.name, &adam->m[i]);
      blocks.emplace_back("adam.v." + p.name, &adam->v[i]);
      ++i;
    });
  }
  w.le<std::uint32_t>(static_cast<std::uint32_t>(blocks.size()));
  for (const auto& [name, m] : blocks) detail::writeBlock<S>(w, name, *m);
  w.le<std::uint64_t>(fnv1a64(w.data()));
  return std::move(w.data());
}

/// Parses a checkpoint, converting values to S if the stored dtype differs.
template <class S>
Checkpoint<S> deserializeCheckpoint(std::span<const std::uint8_t> bytes,
                                    const std::string& expectedVocab = std::string(kVocabVersion)) {
  if (bytes.size() < sizeof(kCheckpointMagic) + 8 ||
      std::memcmp(bytes.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0)
    throw Error(Errc::CorruptCheckpoint, "not a checkpoint (bad magic)");
  {
    detail::ByteReader tail(bytes.subspan(bytes.size() - 8));
    if (tail.le<std::uint64_t>() != fnv1a64(bytes.first(bytes.size() - 8)))
      throw Error(Errc::CorruptCheckpoint, "checksum mismatch");
  }
  detail::ByteReader r(bytes.first(bytes.size() - 8));
  r.take(sizeof(kCheckpointMagic));
  const auto version = r.le<std::uint32_t>();
  if (version != kCheckpointFormatVersion)
    throw Error(Errc::VersionMismatch, "checkpoint format " + std::to_string(version) + " is not supported");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(r.str());
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::CorruptCheckpoint, std::string("bad header: ") + e.what());
  }
  const auto vocab = header.at("vocab_version").get<std::string>();
  if (vocab != expectedVocab)
    throw Error(Errc::VersionMismatch, "checkpoint vocabulary '" + vocab + "' does not match '" + expectedVocab + "'");
  const auto dtype = header.at("dtype").get<std::string>();
  if (dtype != "f32" && dtype != "f64") throw Error(Errc::CorruptCheckpoint, "unknown dtype " + dtype);

  Checkpoint<S> ck;
  ck.params = DenoiserParams<S>::shaped(header.at("config").get<DenoiserConfig>());
  ck.state.step = header.at("training").at("step").get<long>();
  ck.state.epoch = header.at("training").at("epoch").get<int>();

  std::map<std::string, ag::Matrix<S>> blocks;
  const auto count = r.le<std::uint32_t>();
  for (std::uint32_t b = 0; b < count; ++b) {
    auto name = r.str();
    const auto rows = r.le<std::uint32_t>();
    const auto cols = r.le<std::uint32_t>();
    ag::Matrix<S> m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i)
      m.data()[i] = dtype == "f32" ? static_cast<S>(r.le<float>()) : static_cast<S>(r.le<double>());
    blocks.emplace(std::move(name), std::move(m));
  }
  auto take = [&](const std::string& name, ag::Matrix<S>& dst) {
    auto it = blocks.find(name);
    if (it == blocks.end()) throw Error(Errc::CorruptCheckpoint, "missing block " + name);
    if (it->second.rows() != dst.rows() || it->second.cols() != dst.cols())
      throw Error(Errc::CorruptCheckpoint, "block " + name + " has the wrong shape");
    dst = std::move(it->second);
  };
  ck.params.forEach([&](ag::Parameter<S>& p) { take(p.name, p.value); });
  if (!header.at("optimizer").is_null()) {
    AdamState<S> adam;
    adam.ensure(ck.params);
    adam.step = header.at("optimizer").at("adam_step").get<long>();
    std::size_t i = 0;
    ck.params.forEach([&](const ag::Parameter<S>& p) {
      take("adam.m." + p.name, adam.m[i]);
      take("adam.v." + p.name, adam.v[i]);
      ++i;
    });
    ck.adam = std::move(adam);
  }
  return ck;
}

inline std::vector<std::uint8_t> readFileBytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoError, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void writeFileBytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::IoError, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

template <class S>
void saveParams(const DenoiserParams<S>& params, const std::filesystem::path& path, const AdamState<S>* adam = nullptr,
                TrainingState state = {}) {
  writeFileBytes(path, serializeCheckpoint(params, adam, state));
}

template <class S>
Checkpoint<S> loadCheckpoint(const std::filesystem::path& path,
                             const std::string& expectedVocab = std::string(kVocabVersion)) {
  const auto bytes = readFileBytes(path);
  return deserializeCheckpoint<S>(bytes, expectedVocab);
}

template <class S>
DenoiserParams<S> loadParams(const std::filesystem::path& path,
                             const std::string& expectedVocab = std::string(kVocabVersion)) {
  return loadCheckpoint<S>(path, expectedVocab).params;
}

/// Short identity of a checkpoint file, echoed with every generation.
inline std::string checkpointId(std::span<const std::uint8_t> bytes) { return hexDigest(fnv1a64(bytes)); }

}  // namespace symplex
