#pragma once

// Prior documents (JSON). Rows not listed are all-ones. Listed rows carry one of
//   {"point": token}            hard pin
//   {"support": [tokens...]}    equal weights over the tokens
//   {"weights": [w0, w1, ...]}  explicit dense weights
// The header names the vocabulary version and slot count.

#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "symplex/prior.hpp"
#include "symplex/tasks.hpp"

namespace symplex {

inline constexpr std::string_view kPriorFormat = "symplex.prior";
inline constexpr int kPriorFormatVersion = 1;

inline nlohmann::json priorToJson(const VocabularyPrior& prior, const Vocabulary& vocab,
                                  const std::optional<TaskSpec>& spec = std::nullopt) {
  nlohmann::json rows = nlohmann::json::array();
  prior.rows.forEachRow([&](std::size_t s, std::size_t a, std::span<const double> r) {
    if (isUninformativeRow(r)) return;
    nlohmann::json e = {{"slot", s}, {"attribute", attributeName(kAttributeOrder[a])}};
    std::vector<std::size_t> nz;
    bool equal = true;
    for (std::size_t i = 0; i < r.size(); ++i)
      if (r[i] > 0.0) {
        if (!nz.empty() && r[i] != r[nz.front()]) equal = false;
        nz.push_back(i);
      }
    if (nz.size() == 1 && r[nz.front()] == 1.0) {
      e["point"] = nz.front();
    } else if (equal && !nz.empty() && r[nz.front()] == 1.0 / static_cast<double>(nz.size())) {
      e["support"] = nz;
    } else {
      e["weights"] = std::vector<double>(r.begin(), r.end());
    }
    rows.push_back(std::move(e));
  });
  nlohmann::json j = {{"format", kPriorFormat},          {"version", kPriorFormatVersion},
                      {"vocab", vocab.version()},        {"n_slots", prior.slots()},
                      {"task", prior.task},              {"provenance", prior.provenance},
                      {"rows", std::move(rows)}};
  if (spec) j["task_spec"] = taskSpecToJson(*spec, vocab);
  return j;
}

/// Parses a prior document; ParseError for malformed input, VersionMismatch
/// when the vocabulary differs.
inline VocabularyPrior priorFromJson(const nlohmann::json& j, const Vocabulary& vocab) {
  try {
    if (j.at("format").get<std::string>() != kPriorFormat) throw Error(Errc::ParseError, "not a prior document");
    if (j.at("version").get<int>() != kPriorFormatVersion)
      throw Error(Errc::VersionMismatch, "unsupported prior document version");
    const auto v = j.at("vocab").get<std::string>();
    if (v != vocab.version())
      throw Error(Errc::VersionMismatch, "prior vocabulary '" + v + "' does not match '" + vocab.version() + "'");
    const auto slots = j.at("n_slots").get<std::size_t>();
    VocabularyPrior p = priorUninformative(slots);
    p.task = j.value("task", std::string("custom"));
    p.provenance = j.value("provenance", std::string());
    for (const auto& e : j.at("rows")) {
      const auto s = e.at("slot").get<std::size_t>();
      const auto k = parseAttribute(e.at("attribute").get<std::string>());
      if (!k) throw Error(Errc::ParseError, "unknown attribute " + e.at("attribute").dump());
      if (s >= slots) throw Error(Errc::ParseError, "slot " + std::to_string(s) + " out of range");
      auto r = p.rows.row(s, *k);
      const auto size = subVocabSize(*k);
      auto checkToken = [&](std::size_t t) {
        if (t >= size) throw Error(Errc::ParseError, "token " + std::to_string(t) + " outside sub-vocabulary");
        return t;
      };
      if (e.contains("point")) {
        setPointRow(r, checkToken(e.at("point").get<std::size_t>()));
      } else if (e.contains("support")) {
        std::vector<bool> allowed(size, false);
        for (const auto& t : e.at("support")) allowed[checkToken(t.get<std::size_t>())] = true;
        setSupportRow(r, allowed);
      } else if (e.contains("weights")) {
        const auto w = e.at("weights").get<std::vector<double>>();
        if (w.size() != size) throw Error(Errc::ParseError, "weights row has the wrong length");
        std::copy(w.begin(), w.end(), r.begin());
      } else {
        throw Error(Errc::ParseError, "row entry needs point, support or weights");
      }
    }
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ParseError, std::string("malformed prior document: ") + e.what());
  }
}

}  // namespace symplex
