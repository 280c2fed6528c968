#include <chrono>
#include <cmath>

#include <gtest/gtest.h>

#include "support.hpp"
#include "symplex/diffusion.hpp"

using namespace symplex;
using K = AttributeKind;

namespace {

TokenizedLoop smallLoop(const Vocabulary& v, std::size_t slots = 8) {
  return fixtures::toyDataset(v, slots).front();
}

// Two-sample Kolmogorov-Smirnov statistic.
double ksStatistic(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / a.size() - static_cast<double>(j) / b.size()));
  }
  return d;
}

double maxOfSoftmax(std::vector<double> logits) {
  softmaxInPlace(logits);
  return *std::max_element(logits.begin(), logits.end());
}

}  // namespace

TEST(Schedule, EndpointsAndMonotone) {
  for (const auto& s : {NoiseSchedule::cosine(), NoiseSchedule::linear()}) {
    EXPECT_GE(s.alphaBar(0.0), 1.0 - 1e-6);
    EXPECT_LE(s.alphaBar(1.0), 1e-3);
    double prev = 2.0;
    for (int i = 0; i <= 1000; ++i) {
      const double a = s.alphaBar(i / 1000.0);
      EXPECT_LE(a, prev);
      prev = a;
    }
  }
  EXPECT_NEAR(NoiseSchedule::cosine().alphaBar(0.5), 0.5, 1e-12);
  EXPECT_THROW(NoiseSchedule::byName("sigmoid"), Error);
}

TEST(LogitGeneration, SignsAndSoftmax) {
  TokenizedLoop t;
  t.slots.push_back(inactiveTuple());
  t.slots[0][index(K::Tempo)] = 2;
  const auto l = logitGeneration(t, 5.0);
  const auto r = l.values.row(0, K::Tempo);
  for (std::size_t i = 0; i < r.size(); ++i) EXPECT_EQ(r[i], i == 2 ? 5.0 : -5.0);
  const auto zero = logitGeneration(t, 0.0);
  for (double v : zero.values.row(0, K::Pitch)) EXPECT_EQ(v, 0.0);

  std::vector<double> row = {5, -5, -5, -5};
  softmaxInPlace(row);
  EXPECT_NEAR(row[0], std::exp(5.0) / (std::exp(5.0) + 3 * std::exp(-5.0)), 1e-12);
  EXPECT_NEAR(row[0], 0.99986, 1e-5);
}

TEST(ForwardNoise, NoNoiseAtAlphaBarOne) {
  const auto v = buildVocabulary();
  const auto l0 = logitGeneration(smallLoop(v), 5.0);
  RandomStream rng(1, StreamPurpose::Test, 0);
  EXPECT_EQ(forwardNoise(l0, 0.0, NoiseSchedule::cosine(), 5.0, rng), l0);
}

TEST(ForwardNoise, MomentsMatchTheClosedForm) {
  const double kappa = 5.0, c = 3.0;
  constexpr int n = 100000;
  for (double abar : {0.0, 0.5}) {
    LogitTensor in{AttributeTensor(1, c)};
    RandomStream rng(7, StreamPurpose::Test, static_cast<std::uint64_t>(abar * 10));
    double sum = 0, sq = 0;
    int count = 0;
    while (count < n) {
      const auto out = noiseLogits(in, abar, kappa, rng);
      for (double x : out.values.row(0, K::Pitch)) {
        sum += x, sq += x * x, ++count;
      }
    }
    const double mean = sum / count, var = sq / count - mean * mean;
    EXPECT_NEAR(mean, c * std::sqrt(abar), 0.05);
    EXPECT_NEAR(var, kappa * kappa * (1 - abar), 0.05 * kappa * kappa * (1 - abar));
  }
}

TEST(ForwardNoise, ArgmaxSurvivesNearZeroTime) {
  const auto v = buildVocabulary();
  const auto target = smallLoop(v, 32);
  const auto l0 = logitGeneration(target, 5.0);
  const auto sched = NoiseSchedule::cosine();
  double t = 0.0;
  while (sched.alphaBar(t + 1e-4) >= 0.999) t += 1e-4;
  std::size_t ok = 0, total = 0;
  for (int rep = 0; total < 100000; ++rep) {
    RandomStream rng(3, StreamPurpose::Test, rep);
    const auto p = softmax(forwardNoise(l0, t, sched, 5.0, rng));
    const auto am = argmaxTokens(p.probs);
    for (std::size_t s = 0; s < target.size(); ++s)
      for (std::size_t a = 0; a < kAttributeCount; ++a) ok += am.slots[s][a] == target.slots[s][a], ++total;
  }
  EXPECT_GE(static_cast<double>(ok) / total, 0.999);
}

TEST(TrainingExample, ForcedTimes) {
  const auto v = buildVocabulary();
  const auto target = smallLoop(v);
  DiffusionConfig cfg;
  RandomStream rng(2, StreamPurpose::Test, 0);
  const auto ex0 = makeTrainingExample(target, cfg, rng, 0.0);
  EXPECT_EQ(argmaxTokens(ex0.noisy.probs).slots, target.slots);
  EXPECT_TRUE((checkSimplex(ex0.noisy).badRows == 0));
  const auto ex = makeTrainingExample(target, cfg, rng);
  EXPECT_GE(ex.t, 0.0);
  EXPECT_LE(ex.t, 1.0);
  EXPECT_EQ(ex.target.slots, target.slots);
}

// At t = 1 the noisy simplex looks like softmax of pure N(0, K^2) logits; the
// reference sample comes from an independent generator.
TEST(TrainingExample, FullNoiseMatchesPureNoise) {
  const auto v = buildVocabulary();
  const auto target = smallLoop(v, 4);
  DiffusionConfig cfg;
  std::vector<double> ours, ref;
  RandomStream rng(9, StreamPurpose::Test, 0);
  while (ours.size() < 10000) {
    const auto ex = makeTrainingExample(target, cfg, rng, 1.0);
    const auto r = ex.noisy.probs.row(0, K::OnsetTick);
    ours.push_back(*std::max_element(r.begin(), r.end()));
  }
  std::mt19937_64 mt(1234);
  std::normal_distribution<double> nd(0.0, cfg.K);
  while (ref.size() < 10000) {
    std::vector<double> logits(subVocabSize(K::OnsetTick));
    for (auto& x : logits) x = nd(mt);
    ref.push_back(maxOfSoftmax(logits));
  }
  // Critical value at alpha = 0.001.
  const double crit = std::sqrt(-0.5 * std::log(0.0005)) * std::sqrt(2.0 / 10000);
  EXPECT_LT(ksStatistic(ours, ref), crit);
}

TEST(Loss, KnownValues) {
  const auto v = buildVocabulary();
  const auto target = smallLoop(v);
  EXPECT_LT(crossEntropyLoss(logitGeneration(target, 50.0), target), 1e-8);
  double prev = 1e9;
  for (double k : {1.0, 2.0, 5.0, 10.0}) {
    const double loss = crossEntropyLoss(logitGeneration(target, k), target);
    EXPECT_LT(loss, prev);
    prev = loss;
  }
  // Uniform logits: per-position loss is ln |sub-vocabulary|.
  const double uniform = crossEntropyLoss(LogitTensor{AttributeTensor(target.size(), 0.0)}, target);
  double expected = 0;
  for (auto n : kSubVocabSizes) expected += std::log(static_cast<double>(n));
  EXPECT_NEAR(uniform, expected / kAttributeCount, 1e-12);
  EXPECT_NEAR(std::log(25.0), 3.2189, 1e-4);
}

TEST(InitInference, DeterministicAndMaxProbMatchesSimulation) {
  DiffusionConfig cfg;
  cfg.seed = 77;
  const auto a = initInference(64, cfg), b = initInference(64, cfg);
  EXPECT_EQ(a, b);
  EXPECT_TRUE((checkSimplex(a).badRows == 0));

  double ours = 0;
  int n = 0;
  for (std::uint64_t seed = 0; n < 20000; ++seed) {
    cfg.seed = seed;
    const auto p = initInference(100, cfg);
    for (std::size_t s = 0; s < 100; ++s, ++n) {
      const auto r = p.probs.row(s, K::OnsetTick);
      ours += *std::max_element(r.begin(), r.end());
    }
  }
  std::mt19937_64 mt(42);
  std::normal_distribution<double> nd(0.0, 5.0);
  double ref = 0;
  for (int i = 0; i < 20000; ++i) {
    std::vector<double> logits(25);
    for (auto& x : logits) x = nd(mt);
    ref += maxOfSoftmax(logits);
  }
  EXPECT_NEAR(ours / n, ref / 20000, 0.02 * ref / 20000);
}

TEST(TopP, NucleusRule) {
  const std::vector<double> p = {0.5, 0.3, 0.2};
  EXPECT_EQ(nucleus(p, 0.6), (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(nucleus(p, 1e-9), (std::vector<std::size_t>{0}));
  EXPECT_EQ(nucleus(p, 1.0), (std::vector<std::size_t>{0, 1, 2}));
  const std::vector<double> tie = {0.25, 0.25, 0.25, 0.25};
  EXPECT_EQ(nucleus(tie, 0.5), (std::vector<std::size_t>{0, 1}));
  const std::vector<double> zeros = {0.0, 1.0, 0.0};
  EXPECT_EQ(nucleus(zeros, 1.0), (std::vector<std::size_t>{1}));
}

TEST(TopP, FrequenciesWithinThreeSigma) {
  auto check = [](const std::vector<double>& p, double topP, const std::vector<double>& expected) {
    constexpr int n = 100000;
    std::vector<int> counts(p.size(), 0);
    RandomStream rng(5, StreamPurpose::Test, static_cast<std::uint64_t>(topP * 100));
    for (int i = 0; i < n; ++i) ++counts[sampleTopP(p, topP, rng)];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double sigma = std::sqrt(n * expected[i] * (1 - expected[i]));
      EXPECT_NEAR(counts[i], n * expected[i], 3 * sigma + 1e-9) << "token " << i << " topP " << topP;
    }
  };
  check({0.5, 0.3, 0.2}, 0.6, {0.625, 0.375, 0.0});
  check({0.1, 0.2, 0.3, 0.4}, 1.0, {0.1, 0.2, 0.3, 0.4});
  check({0.7, 0.2, 0.1}, 1e-6, {1.0, 0.0, 0.0});
}

TEST(TopP, SampleAlwaysInNucleus) {
  RandomStream rng(8, StreamPurpose::Test, 1);
  std::mt19937_64 mt(3);
  for (int i = 0; i < 2000; ++i) {
    std::vector<double> row(10);
    for (auto& x : row) x = std::uniform_real_distribution<double>(0, 1)(mt);
    softmaxInPlace(row);
    const double topP = std::uniform_real_distribution<double>(0.05, 1.0)(mt);
    const auto keep = nucleus(row, topP);
    const auto s = sampleTopP(row, topP, rng);
    EXPECT_NE(std::find(keep.begin(), keep.end(), s), keep.end());
  }
  EXPECT_THROW(topPSample(SimplexState{AttributeTensor(1, 0.0)}, 0.0, rng), Error);
}

TEST(Generate, OracleDenoiserConvergesToItsTarget) {
  const auto v = buildVocabulary();
  const fixtures::FixedDenoiser oracle{smallLoop(v, 12), 5.0};
  for (int T : {1, 2, 10, 60}) {
    DiffusionConfig cfg;
    cfg.T = T;
    cfg.seed = static_cast<std::uint64_t>(T);
    EXPECT_EQ(generate(oracle, nullptr, cfg, 12).slots, oracle.target.slots) << "T=" << T;
  }
}

TEST(Generate, SimplexClosureAndDeterminism) {
  const auto v = buildVocabulary();
  const fixtures::FixedDenoiser oracle{smallLoop(v, 8), 2.0};
  DiffusionConfig cfg;
  cfg.T = 20;
  cfg.seed = 4;
  std::size_t violations = 0;
  GenerateOptions opts;
  opts.observer = [&](const StepTrace& s) {
    violations += !(checkSimplex(s.conditioned).badRows == 0) + !(checkSimplex(s.denoised).badRows == 0) + !(checkSimplex(s.next).badRows == 0);
  };
  const auto a = generate(oracle, nullptr, cfg, 8, opts);
  EXPECT_EQ(violations, 0u);
  EXPECT_EQ(generate(oracle, nullptr, cfg, 8).slots, a.slots);
}

TEST(Generate, UninformativePriorIsBitwiseNeutral) {
  const fixtures::UniformDenoiser flat;
  DiffusionConfig cfg;
  cfg.T = 15;
  cfg.seed = 99;
  const auto prior = priorUninformative(6);
  std::vector<SimplexState> withPrior, without;
  GenerateOptions a, b;
  a.observer = [&](const StepTrace& s) { withPrior.push_back(s.next); };
  b.observer = [&](const StepTrace& s) { without.push_back(s.next); };
  EXPECT_EQ(generate(flat, &prior, cfg, 6, a).slots, generate(flat, nullptr, cfg, 6, b).slots);
  EXPECT_EQ(withPrior, without);
}

TEST(Generate, InferenceStepRejectsBadIndex) {
  const fixtures::UniformDenoiser flat;
  DiffusionConfig cfg;
  cfg.T = 5;
  const auto p = initInference(2, cfg);
  EXPECT_THROW(inferenceStep(p, 0, flat, nullptr, cfg), Error);
  EXPECT_THROW(inferenceStep(p, 6, flat, nullptr, cfg), Error);
  cfg.T = 0;
  EXPECT_THROW(generate(flat, nullptr, cfg, 2), Error);
}

TEST(Rng, StreamsAreIndependentAndReproducible) {
  RandomStream a(1, StreamPurpose::Noise, 3), b(1, StreamPurpose::Noise, 3), c(1, StreamPurpose::Sample, 3);
  for (int i = 0; i < 100; ++i) {
    const auto x = a();
    EXPECT_EQ(x, b());
    EXPECT_NE(x, c());
  }
  RandomStream u(5, StreamPurpose::Test, 0);
  double sum = 0;
  for (int i = 0; i < 100000; ++i) sum += u.uniform();
  EXPECT_NEAR(sum / 100000, 0.5, 0.005);
}
