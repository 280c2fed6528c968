#pragma once

// Simplex diffusion: logit generation, Gaussian noising in logit space,
// training-example construction, cross-entropy, and the iterative
// denoise / top-p sample / renoise inference loop.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <functional>
#include <numbers>
#include <numeric>
#include <optional>
#include <string>

#include "symplex/prior.hpp"
#include "symplex/rng.hpp"
#include "symplex/simplex.hpp"

namespace symplex {

/// Signal-retention coefficient alpha-bar(t) on t in [0, 1].
class NoiseSchedule {
 public:
  NoiseSchedule() : NoiseSchedule(cosine()) {}
  NoiseSchedule(std::string name, std::function<double(double)> f) : name_(std::move(name)), f_(std::move(f)) {}

  /// cos^2(pi t / 2) clamped to [1e-5, 1].
  static NoiseSchedule cosine() {
    return {"cosine", [](double t) {
              const double c = std::cos(std::numbers::pi * std::clamp(t, 0.0, 1.0) / 2.0);
              return std::clamp(c * c, 1e-5, 1.0);
            }};
  }

  /// Linear decay 1 - t, clamped like the cosine schedule.
  static NoiseSchedule linear() {
    return {"linear", [](double t) { return std::clamp(1.0 - std::clamp(t, 0.0, 1.0), 1e-5, 1.0); }};
  }

  static NoiseSchedule byName(const std::string& name) {
    if (name == "cosine") return cosine();
    if (name == "linear") return linear();
    throw Error(Errc::InvalidArgument, "unknown noise schedule '" + name + "'");
  }

  double alphaBar(double t) const { return f_(t); }
  const std::string& name() const { return name_; }

 private:
  std::string name_;
  std::function<double(double)> f_;
};

struct DiffusionConfig {
  double K = 5.0;
  int T = 100;
  double topP = 0.9;
  NoiseSchedule schedule = NoiseSchedule::cosine();
  std::uint64_t seed = 0;

  void validate() const {
    if (!(K > 0.0)) throw Error(Errc::InvalidArgument, "K must be positive");
    if (T < 1) throw Error(Errc::InvalidArgument, "T must be at least 1");
    if (!(topP > 0.0 && topP <= 1.0)) throw Error(Errc::InvalidArgument, "top-p must lie in (0, 1]");
  }
};

/// +K at each slot's token, -K elsewhere in the attribute's sub-vocabulary.
inline LogitTensor logitGeneration(const TokenizedLoop& tokens, double K) {
  LogitTensor out{AttributeTensor(tokens.size(), -K)};
  for (std::size_t s = 0; s < tokens.size(); ++s)
    for (std::size_t a = 0; a < kAttributeCount; ++a) out.values.row(s, a)[tokens.slots[s][a]] = K;
  return out;
}

/// w0 * sqrt(abar) + eps * sqrt(1 - abar), eps ~ N(0, K^2 I).
inline LogitTensor noiseLogits(const LogitTensor& logits0, double alphaBar, double K, RandomStream& rng) {
  LogitTensor out = logits0;
  const double signal = std::sqrt(alphaBar);
  const double noise = std::sqrt(std::max(0.0, 1.0 - alphaBar)) * K;
  out.values.forEachRow([&](std::size_t, std::size_t, std::span<double> r) {
    for (auto& v : r) v = v * signal + noise * rng.normal();
  });
  return out;
}

inline LogitTensor forwardNoise(const LogitTensor& logits0, double t, const NoiseSchedule& schedule, double K,
                                RandomStream& rng) {
  if (!(t >= 0.0 && t <= 1.0)) throw Error(Errc::InvalidArgument, "t must lie in [0, 1]");
  return noiseLogits(logits0, schedule.alphaBar(t), K, rng);
}

struct TrainingExample {
  SimplexState noisy;
  double t = 0.0;
  TokenizedLoop target;
};

/// Draws t ~ U[0, 1] (unless forced) and returns softmax of the noised logits.
inline TrainingExample makeTrainingExample(const TokenizedLoop& tokens, const DiffusionConfig& cfg,
                                           RandomStream& rng, std::optional<double> forcedT = std::nullopt) {
  TrainingExample ex;
  ex.t = forcedT ? *forcedT : rng.uniform();
  ex.noisy = softmax(forwardNoise(logitGeneration(tokens, cfg.K), ex.t, cfg.schedule, cfg.K, rng));
  ex.target = tokens;
  return ex;
}

inline double logSumExp(std::span<const double> r) {
  const double m = *std::max_element(r.begin(), r.end());
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double v : r) s += std::exp(v - m);
  return m + std::log(s);
}

/// Mean over all N x 9 positions of -log softmax(logits)[target].
inline double crossEntropyLoss(const LogitTensor& pred, const TokenizedLoop& target) {
  if (pred.values.slots() != target.size()) throw Error(Errc::InvalidArgument, "loss shape mismatch");
  if (target.size() == 0) return 0.0;
  double total = 0.0;
  for (std::size_t s = 0; s < target.size(); ++s)
    for (std::size_t a = 0; a < kAttributeCount; ++a) {
      const auto r = pred.values.row(s, a);
      total += logSumExp(r) - r[target.slots[s][a]];
    }
  return total / static_cast<double>(target.size() * kAttributeCount);
}

/// softmax of N(0, K^2 I) logits, drawn from the seed's init stream.
inline SimplexState initInference(std::size_t slots, const DiffusionConfig& cfg) {
  RandomStream rng(cfg.seed, StreamPurpose::Init, 0);
  return softmax(noiseLogits(LogitTensor{AttributeTensor(slots, 0.0)}, 0.0, cfg.K, rng));
}

/// Nucleus of one row: indices sorted by descending probability (ties: lower
/// index first), truncated to the minimal prefix reaching `topP`.
inline std::vector<std::size_t> nucleus(std::span<const double> row, double topP) {
  std::vector<std::size_t> order(row.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return row[a] > row[b]; });
  double cum = 0.0;
  std::size_t keep = order.size();
  for (std::size_t i = 0; i < order.size(); ++i) {
    cum += row[order[i]];
    if (cum >= topP) {
      keep = i + 1;
      break;
    }
  }
  order.resize(keep);
  // Zero-probability tokens never enter the nucleus.
  while (order.size() > 1 && !(row[order.back()] > 0.0)) order.pop_back();
  return order;
}

inline std::size_t sampleTopP(std::span<const double> row, double topP, RandomStream& rng) {
  const auto keep = nucleus(row, topP);
  double mass = 0.0;
  for (auto i : keep) mass += row[i];
  const double u = rng.uniform() * mass;
  double cum = 0.0;
  for (auto i : keep) {
    cum += row[i];
    if (u < cum) return i;
  }
  return keep.back();
}

inline TokenizedLoop topPSample(const SimplexState& p0, double topP, RandomStream& rng) {
  if (!(topP > 0.0 && topP <= 1.0)) throw Error(Errc::InvalidArgument, "top-p must lie in (0, 1]");
  TokenizedLoop out;
  out.slots.resize(p0.slots());
  for (std::size_t s = 0; s < p0.slots(); ++s)
    for (std::size_t a = 0; a < kAttributeCount; ++a)
      out.slots[s][a] = static_cast<Token>(sampleTopP(p0.probs.row(s, a), topP, rng));
  return out;
}

/// Anything mapping (p_t, t) to denoised logits.
template <class D>
concept Denoiser = requires(const D& d, const SimplexState& p, double t) {
  { d(p, t) } -> std::convertible_to<LogitTensor>;
};

struct StepTrace {
  int step;
  const SimplexState& conditioned;  // prior-injected denoiser input
  const SimplexState& denoised;     // p0 after the hard safeguard
  const SimplexState& next;         // p_{t-1}
  const TokenizedLoop& sample;
};

using StepObserver = std::function<void(const StepTrace&)>;

struct StepResult {
  SimplexState next;
  TokenizedLoop sample;
};

namespace detail {

inline SimplexState injectPrior(const SimplexState& pt, const VocabularyPrior& prior, const DiffusionConfig& cfg,
                                int step) {
  try {
    return applyPrior(pt, prior);
  } catch (const UnsatisfiablePriorError& e) {
    // One fresh pure-noise draw for the offending row, then give up.
    SimplexState retry = pt;
    RandomStream rng(cfg.seed, StreamPurpose::Retry, static_cast<std::uint64_t>(step));
    auto row = retry.probs.row(e.slot(), e.attribute());
    for (auto& v : row) v = cfg.K * rng.normal();
    softmaxInPlace(row);
    return applyPrior(retry, prior);
  }
}

}  // namespace detail

/// One reverse step s (T >= s >= 1). The prior may be null.
template <Denoiser D>
StepResult inferenceStep(const SimplexState& pt, int s, const D& denoiser, const VocabularyPrior* prior,
                         const DiffusionConfig& cfg, const StepObserver& observer = {}) {
  if (s < 1 || s > cfg.T) throw Error(Errc::InvalidArgument, "step index outside [1, T]");
  const double t = static_cast<double>(s) / cfg.T;
  const SimplexState conditioned = prior ? detail::injectPrior(pt, *prior, cfg, s) : pt;
  SimplexState p0 = softmax(denoiser(conditioned, t));
  if (prior) p0 = enforceHard(p0, *prior);

  RandomStream sampleRng(cfg.seed, StreamPurpose::Sample, static_cast<std::uint64_t>(s));
  StepResult out;
  out.sample = topPSample(p0, cfg.topP, sampleRng);

  RandomStream noiseRng(cfg.seed, StreamPurpose::Noise, static_cast<std::uint64_t>(s));
  const double tPrev = static_cast<double>(s - 1) / cfg.T;
  out.next = softmax(noiseLogits(logitGeneration(out.sample, cfg.K), cfg.schedule.alphaBar(tPrev), cfg.K, noiseRng));
  if (observer) observer(StepTrace{s, conditioned, p0, out.next, out.sample});
  return out;
}

struct GenerateOptions {
  std::optional<SimplexState> start;  // replaces initInference (used by variations)
  int startStep = 0;                  // 0 means T
  StepObserver observer;
};

/// Runs steps s = start..1 and returns the final sample.
template <Denoiser D>
TokenizedLoop generate(const D& denoiser, const VocabularyPrior* prior, const DiffusionConfig& cfg,
                       std::size_t slots, const GenerateOptions& opts = {}) {
  cfg.validate();
  if (prior && prior->slots() != slots) throw Error(Errc::InvalidArgument, "prior slot count mismatch");
  const int first = opts.startStep > 0 ? std::min(opts.startStep, cfg.T) : cfg.T;
  SimplexState p = opts.start ? *opts.start : initInference(slots, cfg);
  TokenizedLoop sample;
  for (int s = first; s >= 1; --s) {
    auto r = inferenceStep(p, s, denoiser, prior, cfg, opts.observer);
    p = std::move(r.next);
    sample = std::move(r.sample);
  }
  return sample;
}

}  // namespace symplex
