#pragma once

// Generation requests shared by the CLI and the HTTP service: source-loop and
// note-list JSON, request validation, and a run that echoes everything needed
// to reproduce it.

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "symplex/checkpoint.hpp"
#include "symplex/codec_midi.hpp"
#include "symplex/denoiser.hpp"
#include "symplex/prior_io.hpp"
#include "symplex/tasks.hpp"

namespace symplex {

/// Loaded model plus the identity strings echoed with every result.
struct Engine {
  DenoiserModel<float> model;
  Vocabulary vocab = buildVocabulary();
  std::string checkpointVersion;
  double K = 5.0;
  std::string schedule = "cosine";

  std::size_t slots() const { return static_cast<std::size_t>(model.config().slots); }
};

/// Loads a checkpoint for inference; its content hash becomes the version.
inline Engine loadEngine(const std::filesystem::path& checkpoint) {
  const auto bytes = readFileBytes(checkpoint);
  Engine e;
  e.model = DenoiserModel<float>(deserializeCheckpoint<float>(bytes).params);
  e.checkpointVersion = checkpointId(bytes);
  return e;
}

inline nlohmann::json eventToJson(const NoteEvent& e, const Vocabulary& vocab) {
  return {{"instrument", instrumentToJson(e.instrument, vocab)},
          {"pitch", e.pitch},
          {"onset", e.onset},
          {"offset", e.offset},
          {"velocity", e.velocity},
          {"drum", e.isDrum()}};
}

/// Note list for rendering: times in ticks (24 per beat).
inline nlohmann::json loopToJson(const LoopSample& loop, const Vocabulary& vocab) {
  nlohmann::json notes = nlohmann::json::array();
  for (const auto& e : loop.events) notes.push_back(eventToJson(e, vocab));
  return {{"tempo", loop.tempoBpm}, {"tag", loop.tag}, {"ticks_per_beat", kTicksPerBeat}, {"events", notes}};
}

/// Accepts {"tokens": [[9 ints] x N]} or {"events": [...], "tempo": bpm, "tag": name}.
inline TokenizedLoop loopFromJson(const nlohmann::json& j, std::size_t slots, const Vocabulary& vocab) {
  try {
    if (j.contains("tokens")) {
      TokenizedLoop t;
      t.slots = j.at("tokens").get<std::vector<TokenTuple>>();
      if (t.size() != slots)
        throw Error(Errc::InvalidArgument, "loop has " + std::to_string(t.size()) + " slots, expected " +
                                               std::to_string(slots));
      for (std::size_t s = 0; s < t.size(); ++s)
        if (auto p = slotProblem(t.slots[s]); !p.empty())
          throw Error(Errc::MalformedSlot, "slot " + std::to_string(s) + ": " + p);
      return t;
    }
    LoopSample loop;
    loop.tempoBpm = j.value("tempo", 120.0);
    loop.tag = j.value("tag", std::string("other"));
    for (const auto& e : j.at("events")) {
      NoteEvent n;
      auto inst = instrumentFromJson(e.at("instrument"), vocab);
      if (!inst) throw Error(Errc::OutOfRange, "unknown instrument " + e.at("instrument").dump());
      n.instrument = *inst;
      n.pitch = e.at("pitch").get<int>();
      n.onset = e.at("onset").get<int>();
      n.offset = e.value("offset", n.onset);
      n.velocity = e.value("velocity", 100);
      loop.events.push_back(n);
    }
    return encodeLoop(loop, slots, vocab);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::InvalidArgument, std::string("malformed loop: ") + e.what());
  }
}

/// Decodes the well-formed slots and counts the others (which a sampler can
/// produce, unlike the dataset codec's inputs).
inline LoopSample decodeWellFormed(const TokenizedLoop& tokens, const Vocabulary& vocab, std::size_t* dropped) {
  TokenizedLoop clean = tokens;
  std::size_t bad = 0;
  for (auto& t : clean.slots)
    if (!slotProblem(t).empty()) {
      t = inactiveTuple();
      ++bad;
    }
  if (dropped) *dropped = bad;
  return decodeLoop(clean, vocab);
}

struct GenerateRequest {
  std::optional<VocabularyPrior> prior;  // explicit prior document
  std::optional<TaskSpec> task;          // compiled when no prior is given
  std::optional<TokenizedLoop> source;
  std::optional<int> T;
  std::optional<double> topP;
  std::uint64_t seed = 0;
  std::string format = "tokens";  // tokens | midi
};

struct GenerateOutput {
  TokenizedLoop tokens;
  LoopSample loop;
  std::vector<std::uint8_t> midi;
  std::size_t malformedSlots = 0;  // left out of `loop` and `midi`
  nlohmann::json echo;
};

/// Reads a request body. Field problems are collected into a TaskSpecError;
/// version mismatches throw VersionMismatch.
inline GenerateRequest requestFromJson(const nlohmann::json& j, const Engine& engine) {
  std::vector<FieldError> errs;
  GenerateRequest r;
  if (!j.is_object()) throw TaskSpecError("body", "must be a JSON object");
  static const std::set<std::string> known = {"prior", "task", "preset", "loop", "T", "top_p",
                                              "seed", "format", "vocab_version", "checkpoint"};
  for (const auto& [k, v] : j.items())
    if (!known.count(k)) errs.push_back({k, "unknown field"});
  if (j.contains("vocab_version") && j.at("vocab_version") != engine.vocab.version())
    throw Error(Errc::VersionMismatch, "request vocabulary " + j.at("vocab_version").dump() + " is not " +
                                           engine.vocab.version());
  if (j.contains("checkpoint") && j.at("checkpoint") != engine.checkpointVersion)
    throw Error(Errc::VersionMismatch, "request checkpoint " + j.at("checkpoint").dump() + " is not " +
                                           engine.checkpointVersion);
  if (j.contains("T")) {
    if (!j.at("T").is_number_integer() || j.at("T").get<int>() < 1) errs.push_back({"T", "must be an integer >= 1"});
    else r.T = j.at("T").get<int>();
  }
  if (j.contains("top_p")) {
    if (!j.at("top_p").is_number() || !(j.at("top_p").get<double>() > 0.0 && j.at("top_p").get<double>() <= 1.0))
      errs.push_back({"top_p", "must lie in (0, 1]"});
    else r.topP = j.at("top_p").get<double>();
  }
  if (j.contains("seed")) {
    if (!j.at("seed").is_number_unsigned()) errs.push_back({"seed", "must be a non-negative integer"});
    else r.seed = j.at("seed").get<std::uint64_t>();
  }
  if (j.contains("format")) {
    const auto f = j.at("format").is_string() ? j.at("format").get<std::string>() : "";
    if (f != "tokens" && f != "midi") errs.push_back({"format", "must be 'tokens' or 'midi'"});
    else r.format = f;
  }
  if (j.contains("loop")) {
    try {
      r.source = loopFromJson(j.at("loop"), engine.slots(), engine.vocab);
    } catch (const Error& e) {
      errs.push_back({"loop", e.what()});
    }
  }
  const int sources = j.contains("prior") + j.contains("task") + j.contains("preset");
  if (sources > 1) errs.push_back({"prior", "give only one of prior, task, preset"});
  if (j.contains("prior")) {
    try {
      r.prior = priorFromJson(j.at("prior"), engine.vocab);
      if (r.prior->slots() != engine.slots()) errs.push_back({"prior", "slot count does not match the model"});
      for (const auto& issue : validatePrior(*r.prior))
        errs.push_back({"prior", std::string(priorIssueName(issue.kind)) + " at slot " + std::to_string(issue.slot) +
                                     ", attribute " + std::string(attributeName(kAttributeOrder[issue.attribute]))});
    } catch (const Error& e) {
      if (e.code() == Errc::VersionMismatch) throw;
      errs.push_back({"prior", e.what()});
    }
  }
  if (j.contains("task")) {
    try {
      r.task = taskSpecFromJson(j.at("task"), engine.vocab);
    } catch (const TaskSpecError& e) {
      for (auto fe : e.errors()) errs.push_back({"task." + fe.field, fe.message});
    }
  }
  if (j.contains("preset")) {
    const auto name = j.at("preset").is_string() ? j.at("preset").get<std::string>() : "";
    r.task = findPreset(name);
    if (!r.task) errs.push_back({"preset", "unknown preset '" + name + "'"});
  }
  if (r.task && taskNeedsSource(r.task->kind) && !j.contains("loop"))
    errs.push_back({"loop", "task needs a source loop"});
  if (!errs.empty()) throw TaskSpecError(std::move(errs));
  return r;
}

struct PreparedGeneration {
  DiffusionConfig cfg;
  CompiledTask compiled;
};

/// Resolves T/top-p defaults and compiles the prior; task errors surface here.
inline PreparedGeneration prepareGeneration(const Engine& engine, const GenerateRequest& req) {
  PreparedGeneration p;
  p.cfg.K = engine.K;
  p.cfg.schedule = NoiseSchedule::byName(engine.schedule);
  p.cfg.seed = req.seed;
  p.cfg.T = req.T.value_or(req.task ? req.task->T : 100);
  p.cfg.topP = req.topP.value_or(req.task ? req.task->topP : 0.9);
  p.cfg.validate();
  if (req.prior) {
    p.compiled.prior = *req.prior;
  } else {
    const TaskSpec spec = req.task.value_or(TaskSpec{});
    p.compiled = compileTask(spec, req.source ? &*req.source : nullptr, engine.slots(), p.cfg);
  }
  return p;
}

inline constexpr int kGenerationAttempts = 3;

/// Seed of retry `attempt` (attempt 0 is the requested seed).
inline std::uint64_t attemptSeed(std::uint64_t seed, int attempt) {
  return attempt == 0 ? seed : seed + 0x9E3779B97F4A7C15ull * static_cast<std::uint64_t>(attempt);
}

/// Runs the sampler and checks the result against the prior before returning
/// it, retrying with derived seeds up to the budget. Slots keep their generated
/// order so pinned slots stay in place. The echoed seed is the one that produced
/// the output.
inline GenerateOutput runGeneration(const Engine& engine, const PreparedGeneration& prep) {
  const auto& compiled = prep.compiled;
  GenerateOptions opts;
  opts.start = compiled.start;
  opts.startStep = compiled.startStep;
  GenerateOutput out;
  DiffusionConfig cfg = prep.cfg;
  int attempt = 0;
  for (;; ++attempt) {
    cfg.seed = attemptSeed(prep.cfg.seed, attempt);
    out.tokens = generate(engine.model, &compiled.prior, cfg, engine.slots(), opts);
    if (respectsPrior(out.tokens, compiled.prior)) break;
    if (attempt + 1 == kGenerationAttempts)
      throw Error(Errc::UnsatisfiablePrior,
                  "no sample respected the prior after " + std::to_string(kGenerationAttempts) + " attempts");
  }
  out.loop = decodeWellFormed(out.tokens, engine.vocab, &out.malformedSlots);
  out.midi = renderMidi(out.loop, engine.vocab);
  out.echo = {{"T", cfg.T},
              {"top_p", cfg.topP},
              {"seed", cfg.seed},
              {"requested_seed", prep.cfg.seed},
              {"attempts", attempt + 1},
              {"K", cfg.K},
              {"schedule", cfg.schedule.name()},
              {"task", compiled.prior.task},
              {"prior_hash", hexDigest(fnv1a64(priorToJson(compiled.prior, engine.vocab).dump()))},
              {"checkpoint_version", engine.checkpointVersion},
              {"vocab_version", engine.vocab.version()},
              {"malformed_slots", out.malformedSlots}};
  return out;
}

inline GenerateOutput runGeneration(const Engine& engine, const GenerateRequest& req) {
  return runGeneration(engine, prepareGeneration(engine, req));
}

}  // namespace symplex
