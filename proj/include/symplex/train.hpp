#pragma once

// Training loop: shuffled epochs, epoch-wise learning-rate decay, metrics log,
// periodic checkpoints and deterministic resume.
//
// Step k belongs to epoch k / stepsPerEpoch. The epoch order is a shuffle of
// |dataset| * epochRepeats example indices drawn from (seed, Shuffle, epoch);
// the noise and times of step k come from (seed, TrainNoise, k). Nothing else
// carries state across steps, so resuming from step k reproduces the run.

#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>

#include <nlohmann/json.hpp>

#include "symplex/checkpoint.hpp"
#include "symplex/denoiser.hpp"
#include "symplex/diffusion.hpp"

namespace symplex {

struct MetricRecord {
  long step = 0;
  int epoch = 0;
  double loss = 0.0;
  double lr = 0.0;
};

inline nlohmann::json metricToJson(const MetricRecord& m) {
  return {{"step", m.step}, {"epoch", m.epoch}, {"loss", m.loss}, {"lr", m.lr}};
}

struct TrainLoopOptions {
  std::filesystem::path checkpointPath;  // empty: no checkpoints
  std::filesystem::path metricsPath;     // empty: no log file
  std::function<void(const MetricRecord&)> onStep;
};

template <class S>
struct TrainResult {
  DenoiserParams<S> params;
  AdamState<S> adam;
  TrainingState state;
  std::vector<MetricRecord> metrics;  // steps run by this call
};

inline long stepsPerEpoch(std::size_t datasetSize, const TrainConfig& cfg) {
  const auto examples = static_cast<long>(datasetSize) * cfg.epochRepeats;
  return (examples + cfg.batchSize - 1) / cfg.batchSize;
}

inline long totalSteps(std::size_t datasetSize, const TrainConfig& cfg) {
  const long all = stepsPerEpoch(datasetSize, cfg) * cfg.epochs;
  return cfg.maxSteps > 0 ? std::min(all, cfg.maxSteps) : all;
}

inline double learningRateAt(int epoch, const TrainConfig& cfg) {
  return cfg.learningRate * std::pow(cfg.decay, epoch);
}

/// Example order for one epoch.
inline std::vector<std::size_t> epochOrder(std::size_t datasetSize, int epoch, const TrainConfig& cfg) {
  std::vector<std::size_t> order(datasetSize * static_cast<std::size_t>(cfg.epochRepeats));
  std::iota(order.begin(), order.end(), std::size_t{0});
  RandomStream rng(cfg.seed, StreamPurpose::Shuffle, static_cast<std::uint64_t>(epoch));
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  for (auto& v : order) v %= datasetSize;
  return order;
}

/// The noisy batch used at global step k.
inline std::vector<TrainingExample> batchAt(const std::vector<TokenizedLoop>& dataset, long step,
                                            const TrainConfig& cfg, const std::vector<std::size_t>& order) {
  const long spe = stepsPerEpoch(dataset.size(), cfg);
  const auto j = static_cast<std::size_t>(step % spe);
  const auto begin = j * static_cast<std::size_t>(cfg.batchSize);
  const auto end = std::min(order.size(), begin + static_cast<std::size_t>(cfg.batchSize));
  DiffusionConfig dc;
  dc.K = cfg.K;
  dc.schedule = NoiseSchedule::byName(cfg.schedule);
  RandomStream rng(cfg.seed, StreamPurpose::TrainNoise, static_cast<std::uint64_t>(step));
  std::vector<TrainingExample> batch;
  for (auto i = begin; i < end; ++i) batch.push_back(makeTrainingExample(dataset[order[i]], dc, rng));
  return batch;
}

/// Runs (or resumes) training. The model is freshly initialized from cfg.seed
/// unless `resume` is given.
template <class S>
TrainResult<S> trainLoop(const std::vector<TokenizedLoop>& dataset, const DenoiserConfig& model,
                         const TrainConfig& cfg, const TrainLoopOptions& opts = {},
                         std::optional<Checkpoint<S>> resume = std::nullopt) {
  if (dataset.empty()) throw Error(Errc::InvalidArgument, "training dataset is empty");
  cfg.validate();
  model.validate();
  for (const auto& loop : dataset)
    if (loop.size() != static_cast<std::size_t>(model.slots))
      throw Error(Errc::InvalidArgument, "dataset slot count does not match the model");

  TrainResult<S> r;
  if (resume) {
    r.params = std::move(resume->params);
    if (resume->adam) r.adam = std::move(*resume->adam);
    r.state = resume->state;
  } else {
    r.params = DenoiserParams<S>::initialize(model, {cfg.seed, true});
  }

  std::ofstream metrics;
  if (!opts.metricsPath.empty()) {
    metrics.open(opts.metricsPath, std::ios::app);
    if (!metrics) throw Error(Errc::IoError, "cannot open metrics log " + opts.metricsPath.string());
  }
  auto checkpoint = [&] {
    if (!opts.checkpointPath.empty()) saveParams(r.params, opts.checkpointPath, &r.adam, r.state);
  };

  const long spe = stepsPerEpoch(dataset.size(), cfg);
  const long total = totalSteps(dataset.size(), cfg);
  int orderEpoch = -1;
  std::vector<std::size_t> order;
  for (long k = r.state.step; k < total; ++k) {
    const int epoch = static_cast<int>(k / spe);
    if (epoch != orderEpoch) {
      order = epochOrder(dataset.size(), epoch, cfg);
      orderEpoch = epoch;
    }
    const double lr = learningRateAt(epoch, cfg);
    const double loss = trainStep(r.params, r.adam, batchAt(dataset, k, cfg, order), lr, cfg);
    r.state.step = k + 1;
    r.state.epoch = static_cast<int>(r.state.step / spe);
    MetricRecord m{k, epoch, loss, lr};
    r.metrics.push_back(m);
    if (metrics.is_open()) metrics << metricToJson(m).dump() << '\n' << std::flush;
    if (opts.onStep) opts.onStep(m);
    if (cfg.checkpointEvery > 0 && r.state.step % cfg.checkpointEvery == 0) checkpoint();
  }
  checkpoint();
  return r;
}

}  // namespace symplex
