#pragma once

// Tokenized loop datasets.
//
// Text form (JSON lines): a header line
//   {"format":"symplex.tokens","version":1,"vocab":...,"n_slots":N,"attributes":[...]}
// followed by one record per line
//   {"id":...,"tokens":[[9 ints] x N],"source":...,"bar":...,"split":...}
//
// Packed form: "SYMPLXTK", u32 version, string vocab, u32 N, u32 count, then per
// record: string id, string source, u32 bar, string split, N*9 bytes.
// Strings are u32 length + bytes; integers little-endian.

#include <filesystem>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "symplex/checkpoint.hpp"
#include "symplex/vocab.hpp"

namespace symplex {

inline constexpr std::string_view kTokensFormat = "symplex.tokens";
inline constexpr int kTokensFormatVersion = 1;
inline constexpr char kPackedTokensMagic[8] = {'S', 'Y', 'M', 'P', 'L', 'X', 'T', 'K'};

struct TokenRecord {
  std::string id;
  TokenizedLoop tokens;
  Provenance provenance;
  std::string split;  // empty when unassigned
  bool operator==(const TokenRecord&) const = default;
};

struct TokenDataset {
  std::string vocabVersion = std::string(kVocabVersion);
  std::size_t slots = 0;
  std::vector<TokenRecord> records;
  bool operator==(const TokenDataset&) const = default;

  std::vector<TokenizedLoop> loops(std::string_view split = {}) const {
    std::vector<TokenizedLoop> out;
    for (const auto& r : records)
      if (split.empty() || r.split == split) out.push_back(r.tokens);
    return out;
  }
};

namespace detail {

inline void checkRecordTokens(const TokenizedLoop& loop, std::size_t slots, const std::string& id) {
  if (loop.size() != slots) throw Error(Errc::ParseError, "record " + id + " has the wrong slot count");
  for (const auto& t : loop.slots)
    for (std::size_t a = 0; a < kAttributeCount; ++a)
      if (t[a] >= kSubVocabSizes[a]) throw Error(Errc::ParseError, "record " + id + " has an out-of-range token");
}

}  // namespace detail

inline void writeTokensJsonl(std::ostream& out, const TokenDataset& ds) {
  nlohmann::json attrs = nlohmann::json::array();
  for (auto k : kAttributeOrder) attrs.push_back(attributeName(k));
  out << nlohmann::json{{"format", kTokensFormat},
                        {"version", kTokensFormatVersion},
                        {"vocab", ds.vocabVersion},
                        {"n_slots", ds.slots},
                        {"attributes", attrs}}
             .dump()
      << '\n';
  for (const auto& r : ds.records) {
    nlohmann::json j = {{"id", r.id}, {"tokens", r.tokens.slots}};
    if (!r.provenance.fileHash.empty()) {
      j["source"] = r.provenance.fileHash;
      j["bar"] = r.provenance.barOffset;
    }
    if (!r.split.empty()) j["split"] = r.split;
    out << j.dump() << '\n';
  }
}

inline TokenDataset readTokensJsonl(std::istream& in) {
  TokenDataset ds;
  std::string line;
  std::size_t lineNo = 0;
  bool header = false;
  try {
    while (std::getline(in, line)) {
      ++lineNo;
      if (line.empty()) continue;
      const auto j = nlohmann::json::parse(line);
      if (!header) {
        if (j.value("format", std::string()) != kTokensFormat) throw Error(Errc::ParseError, "missing dataset header");
        if (j.at("version").get<int>() != kTokensFormatVersion)
          throw Error(Errc::VersionMismatch, "unsupported dataset version");
        ds.vocabVersion = j.at("vocab").get<std::string>();
        ds.slots = j.at("n_slots").get<std::size_t>();
        std::vector<std::string> attrs = j.at("attributes").get<std::vector<std::string>>();
        for (std::size_t a = 0; a < kAttributeCount; ++a)
          if (attrs.size() != kAttributeCount || attrs[a] != attributeName(kAttributeOrder[a]))
            throw Error(Errc::ParseError, "dataset attribute order differs from the canonical order");
        header = true;
        continue;
      }
      TokenRecord r;
      r.id = j.at("id").get<std::string>();
      r.tokens.slots = j.at("tokens").get<std::vector<TokenTuple>>();
      r.provenance.fileHash = j.value("source", std::string());
      r.provenance.barOffset = j.value("bar", 0);
      r.split = j.value("split", std::string());
      detail::checkRecordTokens(r.tokens, ds.slots, r.id);
      ds.records.push_back(std::move(r));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ParseError, "line " + std::to_string(lineNo) + ": " + e.what());
  }
  if (!header) throw Error(Errc::ParseError, "empty dataset file");
  return ds;
}

inline std::vector<std::uint8_t> packTokens(const TokenDataset& ds) {
  detail::ByteWriter w;
  w.bytes(kPackedTokensMagic, sizeof(kPackedTokensMagic));
  w.le<std::uint32_t>(kTokensFormatVersion);
  w.str(ds.vocabVersion);
  w.le<std::uint32_t>(static_cast<std::uint32_t>(ds.slots));
  w.le<std::uint32_t>(static_cast<std::uint32_t>(ds.records.size()));
  for (const auto& r : ds.records) {
    w.str(r.id);
    w.str(r.provenance.fileHash);
    w.le<std::uint32_t>(static_cast<std::uint32_t>(r.provenance.barOffset));
    w.str(r.split);
    for (const auto& t : r.tokens.slots)
      for (auto v : t) w.data().push_back(static_cast<std::uint8_t>(v));
  }
  return std::move(w.data());
}

inline TokenDataset unpackTokens(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < sizeof(kPackedTokensMagic) ||
      std::memcmp(bytes.data(), kPackedTokensMagic, sizeof(kPackedTokensMagic)) != 0)
    throw Error(Errc::ParseError, "not a packed token dataset");
  try {
    detail::ByteReader r(bytes);
    r.take(sizeof(kPackedTokensMagic));
    if (r.le<std::uint32_t>() != kTokensFormatVersion) throw Error(Errc::VersionMismatch, "unsupported dataset version");
    TokenDataset ds;
    ds.vocabVersion = r.str();
    ds.slots = r.le<std::uint32_t>();
    const auto count = r.le<std::uint32_t>();
    for (std::uint32_t i = 0; i < count; ++i) {
      TokenRecord rec;
      rec.id = r.str();
      rec.provenance.fileHash = r.str();
      rec.provenance.barOffset = static_cast<int>(r.le<std::uint32_t>());
      rec.split = r.str();
      const auto raw = r.take(ds.slots * kAttributeCount);
      rec.tokens.slots.resize(ds.slots);
      for (std::size_t s = 0; s < ds.slots; ++s)
        for (std::size_t a = 0; a < kAttributeCount; ++a) rec.tokens.slots[s][a] = raw[s * kAttributeCount + a];
      detail::checkRecordTokens(rec.tokens, ds.slots, rec.id);
      ds.records.push_back(std::move(rec));
    }
    return ds;
  } catch (const Error& e) {
    if (e.code() == Errc::CorruptCheckpoint) throw Error(Errc::ParseError, "truncated packed dataset");
    throw;
  }
}

/// Loads either form, detected from the leading bytes.
inline TokenDataset loadTokenDataset(const std::filesystem::path& path) {
  const auto bytes = readFileBytes(path);
  if (bytes.size() >= sizeof(kPackedTokensMagic) &&
      std::memcmp(bytes.data(), kPackedTokensMagic, sizeof(kPackedTokensMagic)) == 0)
    return unpackTokens(bytes);
  std::istringstream in(std::string(bytes.begin(), bytes.end()));
  return readTokensJsonl(in);
}

/// Writes the packed form for a ".bin" extension, JSON lines otherwise.
inline void saveTokenDataset(const TokenDataset& ds, const std::filesystem::path& path) {
  if (path.extension() == ".bin") {
    writeFileBytes(path, packTokens(ds));
    return;
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::IoError, "cannot write " + path.string());
  writeTokensJsonl(out, ds);
}

}  // namespace symplex
