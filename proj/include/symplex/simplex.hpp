#pragma once

// Per-slot, per-attribute real vectors. Each attribute is stored over its own
// sub-vocabulary, so out-of-syntax entries simply do not exist.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "symplex/vocab.hpp"

namespace symplex {

class AttributeTensor {
 public:
  AttributeTensor() = default;
  explicit AttributeTensor(std::size_t slots, double fill = 0.0) : slots_(slots) {
    for (std::size_t a = 0; a < kAttributeCount; ++a) data_[a].assign(slots * kSubVocabSizes[a], fill);
  }

  std::size_t slots() const { return slots_; }

  std::span<double> row(std::size_t slot, std::size_t attr) {
    return {data_[attr].data() + slot * kSubVocabSizes[attr], kSubVocabSizes[attr]};
  }
  std::span<const double> row(std::size_t slot, std::size_t attr) const {
    return {data_[attr].data() + slot * kSubVocabSizes[attr], kSubVocabSizes[attr]};
  }
  std::span<double> row(std::size_t slot, AttributeKind k) { return row(slot, index(k)); }
  std::span<const double> row(std::size_t slot, AttributeKind k) const { return row(slot, index(k)); }

  /// Contiguous N x |V_a| row-major block of one attribute.
  std::vector<double>& attribute(std::size_t attr) { return data_[attr]; }
  const std::vector<double>& attribute(std::size_t attr) const { return data_[attr]; }

  template <class F>
  void forEachRow(F&& f) {
    for (std::size_t s = 0; s < slots_; ++s)
      for (std::size_t a = 0; a < kAttributeCount; ++a) f(s, a, row(s, a));
  }
  template <class F>
  void forEachRow(F&& f) const {
    for (std::size_t s = 0; s < slots_; ++s)
      for (std::size_t a = 0; a < kAttributeCount; ++a) f(s, a, row(s, a));
  }

  bool operator==(const AttributeTensor&) const = default;

 private:
  std::size_t slots_ = 0;
  std::array<std::vector<double>, kAttributeCount> data_;
};

/// Logits: one real per token of each attribute's sub-vocabulary.
struct LogitTensor {
  AttributeTensor values;
  bool operator==(const LogitTensor&) const = default;
};

/// Probability vectors p_t; every row is a distribution over its sub-vocabulary.
struct SimplexState {
  AttributeTensor probs;
  std::size_t slots() const { return probs.slots(); }
  bool operator==(const SimplexState&) const = default;
};

inline void softmaxInPlace(std::span<double> row) {
  const double m = *std::max_element(row.begin(), row.end());
  if (!std::isfinite(m)) {
    // All entries -inf (or NaN input); leave a uniform row rather than NaNs.
    std::fill(row.begin(), row.end(), 1.0 / static_cast<double>(row.size()));
    return;
  }
  double sum = 0.0;
  for (auto& v : row) {
    v = std::exp(v - m);
    sum += v;
  }
  for (auto& v : row) v /= sum;
}

inline SimplexState softmax(const LogitTensor& logits) {
  SimplexState out{logits.values};
  out.probs.forEachRow([](std::size_t, std::size_t, std::span<double> r) { softmaxInPlace(r); });
  return out;
}

/// Largest |sum - 1| and whether any entry is negative or non-finite.
struct SimplexCheck {
  double maxSumError = 0.0;
  std::size_t badRows = 0;
};

inline SimplexCheck checkSimplex(const SimplexState& p, double tol = 1e-6) {
  SimplexCheck c;
  p.probs.forEachRow([&](std::size_t, std::size_t, std::span<const double> r) {
    double sum = 0.0;
    bool bad = false;
    for (double v : r) {
      if (!(v >= 0.0) || !std::isfinite(v)) bad = true;
      sum += v;
    }
    const double err = std::abs(sum - 1.0);
    c.maxSumError = std::max(c.maxSumError, err);
    if (bad || !(err <= tol)) ++c.badRows;
  });
  return c;
}

inline std::size_t argmax(std::span<const double> r) {
  return static_cast<std::size_t>(std::max_element(r.begin(), r.end()) - r.begin());
}

/// Point-mass state for a tokenized loop.
inline SimplexState oneHotState(const TokenizedLoop& loop) {
  SimplexState p{AttributeTensor(loop.size(), 0.0)};
  for (std::size_t s = 0; s < loop.size(); ++s)
    for (std::size_t a = 0; a < kAttributeCount; ++a) p.probs.row(s, a)[loop.slots[s][a]] = 1.0;
  return p;
}

inline TokenizedLoop argmaxTokens(const AttributeTensor& t) {
  TokenizedLoop out;
  out.slots.resize(t.slots());
  for (std::size_t s = 0; s < t.slots(); ++s)
    for (std::size_t a = 0; a < kAttributeCount; ++a) out.slots[s][a] = static_cast<Token>(argmax(t.row(s, a)));
  return out;
}

}  // namespace symplex
