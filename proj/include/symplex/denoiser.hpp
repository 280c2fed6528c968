#pragma once

// The denoising network: probability-weighted token embeddings summed per
// note, an additive time embedding, a pre-norm transformer encoder over the N
// notes (no positional encoding: the note set is unordered), and one linear
// head per attribute over that attribute's sub-vocabulary.

#include <array>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "symplex/autograd.hpp"
#include "symplex/diffusion.hpp"
#include "symplex/rng.hpp"
#include "symplex/simplex.hpp"

namespace symplex {

struct DenoiserConfig {
  int layers = 2;
  int heads = 4;
  int hidden = 64;
  int feedforward = 128;
  int slots = 32;
  int timeDim = 32;
  std::string vocabVersion = std::string(kVocabVersion);

  /// Laptop-sized default used by tests and the acceptance suite.
  static DenoiserConfig desk() { return {}; }
  /// Encoder size of the full-scale model (8 layers, 8 heads, 512 hidden, 1024 feedforward).
  static DenoiserConfig large() { return {8, 8, 512, 1024, 128, 64, std::string(kVocabVersion)}; }

  void validate() const {
    if (layers < 0 || heads < 1 || hidden < 1 || feedforward < 1 || slots < 1 || timeDim < 2 || timeDim % 2)
      throw Error(Errc::InvalidArgument, "denoiser dimensions must be positive (time dim even)");
    if (hidden % heads != 0) throw Error(Errc::InvalidArgument, "hidden size must be divisible by heads");
  }

  bool operator==(const DenoiserConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const DenoiserConfig& c) {
  j = {{"layers", c.layers},           {"heads", c.heads}, {"hidden", c.hidden},
       {"feedforward", c.feedforward}, {"slots", c.slots}, {"time_dim", c.timeDim},
       {"vocab_version", c.vocabVersion}};
}

inline void from_json(const nlohmann::json& j, DenoiserConfig& c) {
  j.at("layers").get_to(c.layers);
  j.at("heads").get_to(c.heads);
  j.at("hidden").get_to(c.hidden);
  j.at("feedforward").get_to(c.feedforward);
  j.at("slots").get_to(c.slots);
  j.at("time_dim").get_to(c.timeDim);
  j.at("vocab_version").get_to(c.vocabVersion);
}

template <class S>
struct EncoderLayer {
  ag::Parameter<S> ln1Gamma, ln1Beta;
  ag::Parameter<S> wq, bq, wk, bk, wv, bv, wo, bo;
  ag::Parameter<S> ln2Gamma, ln2Beta;
  ag::Parameter<S> w1, b1, w2, b2;
};

struct InitOptions {
  std::uint64_t seed = 0;
  /// Zero output heads give exactly uniform logits at initialization.
  bool zeroHeads = true;
};

template <class S>
class DenoiserParams {
 public:
  DenoiserConfig config;
  ag::Parameter<S> tokenEmbedding;  // |V| x hidden
  ag::Parameter<S> timeW1, timeB1, timeW2, timeB2;
  std::vector<EncoderLayer<S>> layers;
  ag::Parameter<S> finalGamma, finalBeta;
  std::array<ag::Parameter<S>, kAttributeCount> headW, headB;

  /// Visits every parameter block in checkpoint order.
  template <class F>
  void forEach(F&& f) {
    visit(*this, f);
  }
  template <class F>
  void forEach(F&& f) const {
    visit(*this, f);
  }

  std::size_t parameterCount() const {
    std::size_t n = 0;
    forEach([&](const ag::Parameter<S>& p) { n += static_cast<std::size_t>(p.value.size()); });
    return n;
  }

  void zeroGrad() {
    forEach([](ag::Parameter<S>& p) { p.zeroGrad(); });
  }

  /// Allocates every block with its name and shape, values zero.
  static DenoiserParams shaped(const DenoiserConfig& cfg) {
    cfg.validate();
    DenoiserParams p;
    p.config = cfg;
    const int H = cfg.hidden, F = cfg.feedforward;
    auto mk = [](ag::Parameter<S>& prm, std::string name, int r, int c) {
      prm.name = std::move(name);
      prm.value.setZero(r, c);
    };
    mk(p.tokenEmbedding, "embedding.token", static_cast<int>(kVocabSize), H);
    mk(p.timeW1, "time.w1", cfg.timeDim, H);
    mk(p.timeB1, "time.b1", 1, H);
    mk(p.timeW2, "time.w2", H, H);
    mk(p.timeB2, "time.b2", 1, H);
    p.layers.resize(static_cast<std::size_t>(cfg.layers));
    for (int l = 0; l < cfg.layers; ++l) {
      auto& L = p.layers[static_cast<std::size_t>(l)];
      const std::string pre = "layer" + std::to_string(l) + ".";
      mk(L.ln1Gamma, pre + "ln1.gamma", 1, H);
      mk(L.ln1Beta, pre + "ln1.beta", 1, H);
      mk(L.wq, pre + "attn.wq", H, H);
      mk(L.bq, pre + "attn.bq", 1, H);
      mk(L.wk, pre + "attn.wk", H, H);
      mk(L.bk, pre + "attn.bk", 1, H);
      mk(L.wv, pre + "attn.wv", H, H);
      mk(L.bv, pre + "attn.bv", 1, H);
      mk(L.wo, pre + "attn.wo", H, H);
      mk(L.bo, pre + "attn.bo", 1, H);
      mk(L.ln2Gamma, pre + "ln2.gamma", 1, H);
      mk(L.ln2Beta, pre + "ln2.beta", 1, H);
      mk(L.w1, pre + "ff.w1", H, F);
      mk(L.b1, pre + "ff.b1", 1, F);
      mk(L.w2, pre + "ff.w2", F, H);
      mk(L.b2, pre + "ff.b2", 1, H);
    }
    mk(p.finalGamma, "final.gamma", 1, H);
    mk(p.finalBeta, "final.beta", 1, H);
    for (std::size_t a = 0; a < kAttributeCount; ++a) {
      const std::string pre = "head." + std::string(attributeName(kAttributeOrder[a])) + ".";
      mk(p.headW[a], pre + "weight", H, static_cast<int>(kSubVocabSizes[a]));
      mk(p.headB[a], pre + "bias", 1, static_cast<int>(kSubVocabSizes[a]));
    }
    return p;
  }

  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases, unit norms.
  static DenoiserParams initialize(const DenoiserConfig& cfg, const InitOptions& opts = {}) {
    DenoiserParams p = shaped(cfg);
    RandomStream rng(opts.seed, StreamPurpose::ParamInit, 0);
    auto uniform = [&](ag::Parameter<S>& prm, double bound) {
      for (Eigen::Index i = 0; i < prm.value.size(); ++i)
        prm.value.data()[i] = static_cast<S>((2.0 * rng.uniform() - 1.0) * bound);
    };
    auto fanIn = [&](ag::Parameter<S>& prm) { uniform(prm, 1.0 / std::sqrt(static_cast<double>(prm.value.rows()))); };
    uniform(p.tokenEmbedding, 1.0);
    fanIn(p.timeW1);
    fanIn(p.timeW2);
    for (auto& L : p.layers) {
      L.ln1Gamma.value.setOnes();
      L.ln2Gamma.value.setOnes();
      for (auto* w : {&L.wq, &L.wk, &L.wv, &L.wo, &L.w1, &L.w2}) fanIn(*w);
    }
    p.finalGamma.value.setOnes();
    if (!opts.zeroHeads)
      for (auto& w : p.headW) fanIn(w);
    return p;
  }

 private:
  template <class Self, class F>
  static void visit(Self& self, F& f) {
    f(self.tokenEmbedding);
    f(self.timeW1);
    f(self.timeB1);
    f(self.timeW2);
    f(self.timeB2);
    for (auto& L : self.layers) {
      for (auto* prm : {&L.ln1Gamma, &L.ln1Beta, &L.wq, &L.bq, &L.wk, &L.bk, &L.wv, &L.bv, &L.wo, &L.bo,
                        &L.ln2Gamma, &L.ln2Beta, &L.w1, &L.b1, &L.w2, &L.b2})
        f(*prm);
    }
    f(self.finalGamma);
    f(self.finalBeta);
    for (std::size_t a = 0; a < kAttributeCount; ++a) {
      f(self.headW[a]);
      f(self.headB[a]);
    }
  }
};

/// Sinusoidal features of t with angular frequencies log-spaced on [1, 64].
template <class S>
ag::Matrix<S> timeFeatures(const std::vector<double>& ts, int dim) {
  const int half = dim / 2;
  ag::Matrix<S> out(static_cast<Eigen::Index>(ts.size()), dim);
  for (std::size_t b = 0; b < ts.size(); ++b) {
    for (int i = 0; i < half; ++i) {
      const double freq = half > 1 ? std::exp(std::log(64.0) * i / (half - 1)) : 1.0;
      out(static_cast<Eigen::Index>(b), i) = static_cast<S>(std::sin(ts[b] * freq));
      out(static_cast<Eigen::Index>(b), half + i) = static_cast<S>(std::cos(ts[b] * freq));
    }
  }
  return out;
}

/// Stacks states into a (batch*N) x |V| matrix. Each attribute segment is
/// renormalized over its own sub-vocabulary (the syntax prior).
template <class S>
ag::Matrix<S> stackStates(const std::vector<const SimplexState*>& states) {
  const std::size_t N = states.front()->slots();
  ag::Matrix<S> P = ag::Matrix<S>::Zero(static_cast<Eigen::Index>(states.size() * N), static_cast<Eigen::Index>(kVocabSize));
  for (std::size_t b = 0; b < states.size(); ++b) {
    if (states[b]->slots() != N) throw Error(Errc::InvalidArgument, "batch states differ in slot count");
    for (std::size_t s = 0; s < N; ++s) {
      std::size_t off = 0;
      for (std::size_t a = 0; a < kAttributeCount; ++a) {
        const auto r = states[b]->probs.row(s, a);
        double sum = 0.0;
        for (double v : r) sum += v;
        const double inv = sum > 0.0 ? 1.0 / sum : 0.0;
        for (std::size_t i = 0; i < r.size(); ++i)
          P(static_cast<Eigen::Index>(b * N + s), static_cast<Eigen::Index>(off + i)) = static_cast<S>(r[i] * inv);
        off += r.size();
      }
    }
  }
  return P;
}

/// Projects a distribution over the global vocabulary onto one attribute's
/// sub-vocabulary (syntax mask, then renormalize).
inline std::vector<double> syntaxProject(std::span<const double> global, AttributeKind kind, const Vocabulary& vocab) {
  const auto off = vocab.offset(kind);
  std::vector<double> out(global.begin() + static_cast<std::ptrdiff_t>(off),
                          global.begin() + static_cast<std::ptrdiff_t>(off + subVocabSize(kind)));
  double sum = 0.0;
  for (double v : out) sum += v;
  if (sum > 0.0)
    for (auto& v : out) v /= sum;
  return out;
}

template <class S>
struct GraphOutputs {
  ag::Var noteEmbeddings;  // (batch*N) x hidden, before the encoder
  ag::Var timeEmbedding;   // batch x hidden
  std::array<ag::Var, kAttributeCount> logits;
};

/// Builds the forward graph. `P` is any DenoiserParams<S> (const for inference).
template <class S, class P>
GraphOutputs<S> buildGraph(ag::Tape<S>& tape, P& params, ag::Matrix<S> stackedProbs, const std::vector<double>& ts) {
  const auto& cfg = params.config;
  const int N = static_cast<int>(stackedProbs.rows()) / static_cast<int>(ts.size());
  GraphOutputs<S> out;

  out.noteEmbeddings = tape.matmul(tape.constant(std::move(stackedProbs)), tape.param(params.tokenEmbedding));

  auto tf = tape.constant(timeFeatures<S>(ts, cfg.timeDim));
  auto th = tape.gelu(tape.linear(tf, tape.param(params.timeW1), tape.param(params.timeB1)));
  out.timeEmbedding = tape.linear(th, tape.param(params.timeW2), tape.param(params.timeB2));

  auto x = tape.addGroupRows(out.noteEmbeddings, out.timeEmbedding, N);
  for (auto& L : params.layers) {
    auto h = tape.layerNorm(x, tape.param(L.ln1Gamma), tape.param(L.ln1Beta));
    auto q = tape.linear(h, tape.param(L.wq), tape.param(L.bq));
    auto k = tape.linear(h, tape.param(L.wk), tape.param(L.bk));
    auto v = tape.linear(h, tape.param(L.wv), tape.param(L.bv));
    auto att = tape.attention(q, k, v, N, cfg.heads);
    x = tape.add(x, tape.linear(att, tape.param(L.wo), tape.param(L.bo)));
    h = tape.layerNorm(x, tape.param(L.ln2Gamma), tape.param(L.ln2Beta));
    auto f = tape.gelu(tape.linear(h, tape.param(L.w1), tape.param(L.b1)));
    x = tape.add(x, tape.linear(f, tape.param(L.w2), tape.param(L.b2)));
  }
  x = tape.layerNorm(x, tape.param(params.finalGamma), tape.param(params.finalBeta));
  for (std::size_t a = 0; a < kAttributeCount; ++a)
    out.logits[a] = tape.linear(x, tape.param(params.headW[a]), tape.param(params.headB[a]));
  return out;
}

/// Inference wrapper satisfying the Denoiser concept.
template <class S>
class DenoiserModel {
 public:
  DenoiserModel() = default;
  explicit DenoiserModel(DenoiserParams<S> params) : params_(std::move(params)) {}

  const DenoiserParams<S>& params() const { return params_; }
  DenoiserParams<S>& params() { return params_; }
  const DenoiserConfig& config() const { return params_.config; }

  LogitTensor operator()(const SimplexState& p, double t) const { return forwardBatch({&p}, {t}).front(); }

  std::vector<LogitTensor> forwardBatch(const std::vector<const SimplexState*>& states,
                                        const std::vector<double>& ts) const {
    if (states.empty()) return {};
    const std::size_t N = states.front()->slots();
    ag::Tape<S> tape(false);
    auto g = buildGraph(tape, params_, stackStates<S>(states), ts);
    std::vector<LogitTensor> out(states.size(), LogitTensor{AttributeTensor(N)});
    for (std::size_t a = 0; a < kAttributeCount; ++a) {
      const auto& L = tape.value(g.logits[a]);
      for (std::size_t b = 0; b < states.size(); ++b) {
        auto& dst = out[b].values.attribute(a);
        for (std::size_t s = 0; s < N; ++s)
          for (std::size_t i = 0; i < kSubVocabSizes[a]; ++i) {
            const double v = static_cast<double>(L(static_cast<Eigen::Index>(b * N + s), static_cast<Eigen::Index>(i)));
            if (!std::isfinite(v))
              throw Error(Errc::NonFiniteActivation, "non-finite logit at batch " + std::to_string(b) + ", slot " +
                                                         std::to_string(s) + ", attribute " +
                                                         std::string(attributeName(kAttributeOrder[a])));
            dst[s * kSubVocabSizes[a] + i] = v;
          }
      }
    }
    return out;
  }

  /// Sum of the nine probability-weighted attribute embeddings per note.
  ag::Matrix<S> embedState(const SimplexState& p) const {
    ag::Tape<S> tape(false);
    auto v = tape.matmul(tape.constant(stackStates<S>({&p})), tape.param(params_.tokenEmbedding));
    return tape.value(v);
  }

  /// Learned embedding of the diffusion time t.
  ag::Matrix<S> timeEmbed(double t) const {
    ag::Tape<S> tape(false);
    auto tf = tape.constant(timeFeatures<S>({t}, params_.config.timeDim));
    auto th = tape.gelu(tape.linear(tf, tape.param(params_.timeW1), tape.param(params_.timeB1)));
    return tape.value(tape.linear(th, tape.param(params_.timeW2), tape.param(params_.timeB2)));
  }

 private:
  DenoiserParams<S> params_;
};

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  double learningRate = 1e-3;
  double decay = 0.99;
  int batchSize = 200;
  int epochs = 1;
  long maxSteps = 0;     // 0: run all epochs
  int epochRepeats = 1;  // passes over the dataset per epoch
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double clipNorm = 1.0;
  std::uint64_t seed = 0;
  double K = 5.0;
  std::string schedule = "cosine";
  long checkpointEvery = 0;  // steps; 0 disables periodic checkpoints

  void validate() const {
    if (!(learningRate >= 0.0)) throw Error(Errc::InvalidArgument, "learning rate must be non-negative");
    if (!(decay > 0.0 && decay <= 1.0)) throw Error(Errc::InvalidArgument, "decay must lie in (0, 1]");
    if (batchSize < 1 || epochs < 1 || epochRepeats < 1 || maxSteps < 0)
      throw Error(Errc::InvalidArgument, "batch size, epochs and repeats must be positive");
    if (!(K > 0.0)) throw Error(Errc::InvalidArgument, "K must be positive");
  }
};

template <class S>
struct AdamState {
  std::vector<ag::Matrix<S>> m, v;
  long step = 0;

  void ensure(const DenoiserParams<S>& params) {
    if (!m.empty()) return;
    params.forEach([&](const ag::Parameter<S>& p) {
      m.push_back(ag::Matrix<S>::Zero(p.value.rows(), p.value.cols()));
      v.push_back(ag::Matrix<S>::Zero(p.value.rows(), p.value.cols()));
    });
  }
};

/// Mean cross-entropy graph for a batch; returns the scalar loss variable.
template <class S>
ag::Var lossGraph(ag::Tape<S>& tape, DenoiserParams<S>& params, const std::vector<TrainingExample>& batch) {
  std::vector<const SimplexState*> states;
  std::vector<double> ts;
  for (const auto& ex : batch) {
    states.push_back(&ex.noisy);
    ts.push_back(ex.t);
  }
  const std::size_t N = batch.front().target.size();
  auto g = buildGraph(tape, params, stackStates<S>(states), ts);
  const S scale = S(1) / static_cast<S>(batch.size() * N * kAttributeCount);
  std::vector<ag::Var> parts;
  for (std::size_t a = 0; a < kAttributeCount; ++a) {
    std::vector<int> targets;
    targets.reserve(batch.size() * N);
    for (const auto& ex : batch)
      for (std::size_t s = 0; s < N; ++s) targets.push_back(ex.target.slots[s][a]);
    parts.push_back(tape.crossEntropy(g.logits[a], std::move(targets), scale));
  }
  return tape.sum(parts);
}

/// Loss and gradients (accumulated into params' grad buffers, zeroed first).
template <class S>
double lossAndGradient(DenoiserParams<S>& params, const std::vector<TrainingExample>& batch) {
  if (batch.empty()) throw Error(Errc::InvalidArgument, "empty batch");
  params.zeroGrad();
  ag::Tape<S> tape(true);
  auto loss = lossGraph(tape, params, batch);
  tape.backward(loss);
  return static_cast<double>(tape.value(loss)(0, 0));
}

/// One Adam step on the batch's mean cross-entropy with global-norm clipping.
template <class S>
double trainStep(DenoiserParams<S>& params, AdamState<S>& adam, const std::vector<TrainingExample>& batch, double lr,
                 const TrainConfig& cfg) {
  const double loss = lossAndGradient(params, batch);
  double sq = 0.0;
  params.forEach([&](const ag::Parameter<S>& p) { sq += static_cast<double>(p.grad.squaredNorm()); });
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm) || !std::isfinite(loss))
    throw Error(Errc::NonFiniteGradient, "gradient norm " + std::to_string(norm) + ", loss " + std::to_string(loss));
  const double clip = (cfg.clipNorm > 0.0 && norm > cfg.clipNorm) ? cfg.clipNorm / norm : 1.0;

  adam.ensure(params);
  ++adam.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(adam.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(adam.step));
  const S b1 = static_cast<S>(cfg.beta1), b2 = static_cast<S>(cfg.beta2);
  const S stepSize = static_cast<S>(lr / bc1);
  const S invBc2 = static_cast<S>(1.0 / bc2);
  const S eps = static_cast<S>(cfg.epsilon);
  const S c = static_cast<S>(clip);
  std::size_t i = 0;
  params.forEach([&](ag::Parameter<S>& p) {
    auto& m = adam.m[i];
    auto& v = adam.v[i];
    ++i;
    const auto g = (p.grad.array() * c).eval();
    m.array() = b1 * m.array() + (S(1) - b1) * g;
    v.array() = b2 * v.array() + (S(1) - b2) * g.square();
    if (lr != 0.0) p.value.array() -= stepSize * m.array() / ((v.array() * invBc2).sqrt() + eps);
  });
  return loss;
}

}  // namespace symplex
