#pragma once

// Vocabulary priors: per-slot, per-attribute non-negative weights in [0, 1].
//
// Row conventions:
//   * all entries exactly 1      -> uninformative (no-op everywhere)
//   * exactly one non-zero entry -> stored as 1.0, a hard pin (point mass)
//   * any other support          -> weights strictly below 1
// An entry equal to 1 in a row that is not all-ones is a hard one; two of them
// in the same row conflict.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "symplex/error.hpp"
#include "symplex/simplex.hpp"

namespace symplex {

struct VocabularyPrior {
  AttributeTensor rows;
  std::string task = "custom";
  std::string provenance;

  std::size_t slots() const { return rows.slots(); }
};

inline bool isUninformativeRow(std::span<const double> r) {
  return std::all_of(r.begin(), r.end(), [](double v) { return v == 1.0; });
}

/// Index of the single hard-one entry, nullopt if none; throws on conflicts.
inline std::optional<std::size_t> hardOne(std::span<const double> r, std::size_t slot, std::size_t attr) {
  if (isUninformativeRow(r)) return std::nullopt;
  std::optional<std::size_t> found;
  for (std::size_t i = 0; i < r.size(); ++i) {
    if (r[i] == 1.0) {
      if (found)
        throw Error(Errc::ConflictingPrior, "two hard-one entries at slot " + std::to_string(slot) +
                                                ", attribute " + std::string(attributeName(kAttributeOrder[attr])));
      found = i;
    }
  }
  return found;
}

/// Writes the canonical weights for an allowed-token mask into `row`.
inline void setSupportRow(std::span<double> row, const std::vector<bool>& allowed) {
  std::size_t count = 0;
  for (bool b : allowed) count += b;
  if (count == 0) {
    std::fill(row.begin(), row.end(), 0.0);
    return;
  }
  const double w = count == row.size() ? 1.0 : (count == 1 ? 1.0 : 1.0 / static_cast<double>(count));
  for (std::size_t i = 0; i < row.size(); ++i) row[i] = allowed[i] ? w : 0.0;
}

inline void setPointRow(std::span<double> row, std::size_t token) {
  std::fill(row.begin(), row.end(), 0.0);
  row[token] = 1.0;
}

/// Re-expresses arbitrary non-negative weights in canonical form.
inline void canonicalizeRow(std::span<double> row) {
  std::size_t nz = 0;
  double sum = 0.0;
  bool equal = true;
  double first = -1.0;
  for (double v : row) {
    if (v > 0.0) {
      ++nz;
      sum += v;
      if (first < 0.0) first = v;
      else if (v != first) equal = false;
    }
  }
  if (nz == 0) return;
  if (nz == 1) {
    for (auto& v : row) v = v > 0.0 ? 1.0 : 0.0;
    return;
  }
  if (nz == row.size() && equal) {
    std::fill(row.begin(), row.end(), 1.0);
    return;
  }
  for (auto& v : row) v /= sum;
}

inline VocabularyPrior priorUninformative(std::size_t slots) {
  return VocabularyPrior{AttributeTensor(slots, 1.0), "unconditional", {}};
}

/// Elementwise product of two priors, re-canonicalized row by row.
inline VocabularyPrior combine(const VocabularyPrior& a, const VocabularyPrior& b) {
  if (a.slots() != b.slots()) throw Error(Errc::InvalidArgument, "prior slot counts differ");
  VocabularyPrior out = a;
  out.task = a.task + "*" + b.task;
  out.rows.forEachRow([&](std::size_t s, std::size_t at, std::span<double> r) {
    const auto rb = b.rows.row(s, at);
    for (std::size_t i = 0; i < r.size(); ++i) r[i] *= rb[i];
    canonicalizeRow(r);
  });
  return out;
}

/// normalize(p_t * prior) row by row; uninformative rows are copied untouched.
inline SimplexState applyPrior(const SimplexState& p, const VocabularyPrior& prior) {
  if (p.slots() != prior.slots()) throw Error(Errc::InvalidArgument, "prior shape does not match state");
  SimplexState out = p;
  out.probs.forEachRow([&](std::size_t s, std::size_t a, std::span<double> r) {
    const auto w = prior.rows.row(s, a);
    if (isUninformativeRow(w)) return;
    double sum = 0.0;
    for (std::size_t i = 0; i < r.size(); ++i) {
      r[i] *= w[i];
      sum += r[i];
    }
    if (!(sum > 0.0)) throw UnsatisfiablePriorError(s, a);
    for (auto& v : r) v /= sum;
  });
  return out;
}

/// Hard safeguard: prior-zero tokens get probability 0, a prior-one token
/// becomes a point mass. If no mass survives, the row falls back to uniform
/// over the prior's support.
inline SimplexState enforceHard(const SimplexState& p0, const VocabularyPrior& prior) {
  if (p0.slots() != prior.slots()) throw Error(Errc::InvalidArgument, "prior shape does not match state");
  SimplexState out = p0;
  out.probs.forEachRow([&](std::size_t s, std::size_t a, std::span<double> r) {
    const auto w = prior.rows.row(s, a);
    if (isUninformativeRow(w)) return;
    if (auto one = hardOne(w, s, a)) {
      setPointRow(r, *one);
      return;
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < r.size(); ++i) {
      if (w[i] == 0.0) r[i] = 0.0;
      sum += r[i];
    }
    if (sum > 0.0) {
      for (auto& v : r) v /= sum;
      return;
    }
    std::size_t support = 0;
    for (double v : w) support += v > 0.0;
    if (support == 0) throw UnsatisfiablePriorError(s, a);
    for (std::size_t i = 0; i < r.size(); ++i) r[i] = w[i] > 0.0 ? 1.0 / static_cast<double>(support) : 0.0;
  });
  return out;
}

enum class PriorIssueKind { AllZeroRow, ConflictingHardOnes, MalformedShape, InvalidWeight };

inline std::string_view priorIssueName(PriorIssueKind k) {
  switch (k) {
    case PriorIssueKind::AllZeroRow: return "AllZeroRow";
    case PriorIssueKind::ConflictingHardOnes: return "ConflictingHardOnes";
    case PriorIssueKind::MalformedShape: return "MalformedShape";
    case PriorIssueKind::InvalidWeight: return "InvalidWeight";
  }
  return "?";
}

struct PriorIssue {
  PriorIssueKind kind;
  std::size_t slot = 0;
  std::size_t attribute = 0;
  std::string message;
};

/// Reports every problem found; an empty result means the prior is usable.
inline std::vector<PriorIssue> validatePrior(const VocabularyPrior& prior,
                                             std::optional<std::size_t> expectedSlots = std::nullopt) {
  std::vector<PriorIssue> issues;
  if (expectedSlots && prior.slots() != *expectedSlots)
    issues.push_back({PriorIssueKind::MalformedShape, 0, 0,
                      "prior has " + std::to_string(prior.slots()) + " slots, expected " +
                          std::to_string(*expectedSlots)});
  for (std::size_t a = 0; a < kAttributeCount; ++a)
    if (prior.rows.attribute(a).size() != prior.slots() * kSubVocabSizes[a])
      issues.push_back({PriorIssueKind::MalformedShape, 0, a, "row storage has the wrong length"});
  if (!issues.empty()) return issues;

  prior.rows.forEachRow([&](std::size_t s, std::size_t a, std::span<const double> r) {
    bool anyPositive = false, badWeight = false;
    std::size_t ones = 0;
    for (double v : r) {
      if (!std::isfinite(v) || v < 0.0 || v > 1.0) badWeight = true;
      anyPositive |= v > 0.0;
      ones += v == 1.0;
    }
    if (badWeight) issues.push_back({PriorIssueKind::InvalidWeight, s, a, "weights must lie in [0, 1]"});
    if (!anyPositive) issues.push_back({PriorIssueKind::AllZeroRow, s, a, "row has no allowed token"});
    if (ones > 1 && !isUninformativeRow(r))
      issues.push_back({PriorIssueKind::ConflictingHardOnes, s, a, "row has several hard-one entries"});
  });
  return issues;
}

/// True when `tokens` lies inside the prior's support at every position.
inline bool respectsPrior(const TokenizedLoop& tokens, const VocabularyPrior& prior) {
  for (std::size_t s = 0; s < tokens.size(); ++s)
    for (std::size_t a = 0; a < kAttributeCount; ++a)
      if (!(prior.rows.row(s, a)[tokens.slots[s][a]] > 0.0)) return false;
  return true;
}

}  // namespace symplex
