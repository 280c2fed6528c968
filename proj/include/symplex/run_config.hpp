#pragma once

// Training config files: JSON with an explicit schema version, a "model"
// section and a "train" section. Unknown keys are rejected by name.
//
//   {"schema_version": 1,
//    "model": {"layers": 2, "heads": 4, "hidden": 64, "feedforward": 128, "slots": 32, "time_dim": 32},
//    "train": {"learning_rate": 1e-3, "decay": 0.99, "batch_size": 32, "epochs": 1, "max_steps": 0,
//              "epoch_repeats": 1, "beta1": 0.9, "beta2": 0.999, "epsilon": 1e-8, "clip_norm": 1.0,
//              "K": 5.0, "schedule": "cosine", "checkpoint_every": 0, "seed": 0}}
//
// Every key is optional; missing ones keep the defaults.

#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "symplex/denoiser.hpp"

namespace symplex {

inline constexpr int kRunConfigSchema = 1;

struct RunConfig {
  DenoiserConfig model = DenoiserConfig::desk();
  TrainConfig train;
};

/// Thrown for config problems; `key()` is the dotted path of the offending key.
class ConfigError : public Error {
 public:
  ConfigError(std::string key, const std::string& what)
      : Error(Errc::InvalidArgument, "config key '" + key + "': " + what), key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

namespace detail {

template <class T>
void readKey(const nlohmann::json& section, const std::string& prefix, const char* key, T& dst) {
  if (!section.contains(key)) return;
  try {
    section.at(key).get_to(dst);
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(prefix + key, "wrong type");
  }
}

inline void rejectUnknown(const nlohmann::json& section, const std::string& prefix,
                          std::initializer_list<std::string_view> known) {
  if (!section.is_object()) throw ConfigError(prefix.substr(0, prefix.size() - 1), "must be an object");
  for (const auto& [k, v] : section.items())
    if (std::find(known.begin(), known.end(), k) == known.end()) throw ConfigError(prefix + k, "unknown key");
}

}  // namespace detail

inline RunConfig runConfigFromJson(const nlohmann::json& j) {
  detail::rejectUnknown(j, "", {"schema_version", "model", "train"});
  if (!j.contains("schema_version")) throw ConfigError("schema_version", "missing");
  if (j.at("schema_version") != kRunConfigSchema)
    throw ConfigError("schema_version", "unsupported version " + j.at("schema_version").dump());
  RunConfig c;
  if (j.contains("model")) {
    const auto& m = j.at("model");
    detail::rejectUnknown(m, "model.", {"layers", "heads", "hidden", "feedforward", "slots", "time_dim"});
    detail::readKey(m, "model.", "layers", c.model.layers);
    detail::readKey(m, "model.", "heads", c.model.heads);
    detail::readKey(m, "model.", "hidden", c.model.hidden);
    detail::readKey(m, "model.", "feedforward", c.model.feedforward);
    detail::readKey(m, "model.", "slots", c.model.slots);
    detail::readKey(m, "model.", "time_dim", c.model.timeDim);
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    detail::rejectUnknown(t, "train.",
                          {"learning_rate", "decay", "batch_size", "epochs", "max_steps", "epoch_repeats", "beta1",
                           "beta2", "epsilon", "clip_norm", "K", "schedule", "checkpoint_every", "seed"});
    detail::readKey(t, "train.", "learning_rate", c.train.learningRate);
    detail::readKey(t, "train.", "decay", c.train.decay);
    detail::readKey(t, "train.", "batch_size", c.train.batchSize);
    detail::readKey(t, "train.", "epochs", c.train.epochs);
    detail::readKey(t, "train.", "max_steps", c.train.maxSteps);
    detail::readKey(t, "train.", "epoch_repeats", c.train.epochRepeats);
    detail::readKey(t, "train.", "beta1", c.train.beta1);
    detail::readKey(t, "train.", "beta2", c.train.beta2);
    detail::readKey(t, "train.", "epsilon", c.train.epsilon);
    detail::readKey(t, "train.", "clip_norm", c.train.clipNorm);
    detail::readKey(t, "train.", "K", c.train.K);
    detail::readKey(t, "train.", "schedule", c.train.schedule);
    detail::readKey(t, "train.", "checkpoint_every", c.train.checkpointEvery);
    detail::readKey(t, "train.", "seed", c.train.seed);
  }
  try {
    c.model.validate();
  } catch (const Error& e) {
    throw ConfigError("model", e.what());
  }
  try {
    c.train.validate();
    NoiseSchedule::byName(c.train.schedule);
  } catch (const Error& e) {
    throw ConfigError("train", e.what());
  }
  return c;
}

inline RunConfig loadRunConfig(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::IoError, "cannot open config " + path.string());
  try {
    return runConfigFromJson(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ParseError, "config " + path.string() + ": " + e.what());
  }
}

}  // namespace symplex
