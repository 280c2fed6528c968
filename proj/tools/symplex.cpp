// symplex: extract, split, train, generate, serve.
//
// Exit codes: 0 success, 1 runtime failure (or no loops extracted), 2 invalid
// input or config, 3 version mismatch.

#include <algorithm>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "symplex/dataset_split.hpp"
#include "symplex/generation.hpp"
#include "symplex/loop_extract.hpp"
#include "symplex/run_config.hpp"
#include "symplex/service.hpp"
#include "symplex/token_io.hpp"
#include "symplex/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace symplex;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitInput = 2;
constexpr int kExitVersion = 3;

json readJsonFile(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::IoError, "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(Errc::ParseError, path.string() + ": " + e.what());
  }
}

void writeText(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::IoError, "cannot write " + path.string());
  out << text;
}

bool isMidiPath(const fs::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".mid" || ext == ".midi";
}

// extract ---------------------------------------------------------------

struct ExtractArgs {
  fs::path input;
  fs::path analysisDir;
  fs::path out = "loops.jsonl";
  fs::path report;
  std::string tag;
  int slots = 32;
  std::uint64_t seed = 0;
};

int cmdExtract(const ExtractArgs& a) {
  if (!fs::is_directory(a.input)) {
    std::cerr << "extract: input directory " << a.input << " does not exist\n";
    return kExitInput;
  }
  const auto vocab = buildVocabulary();
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(a.input))
    if (e.is_regular_file() && isMidiPath(e.path())) files.push_back(e.path());
  std::sort(files.begin(), files.end());

  TokenDataset ds;
  ds.vocabVersion = vocab.version();
  ds.slots = static_cast<std::size_t>(a.slots);
  json report = {{"input", a.input.string()}, {"files", json::array()}, {"loops", 0}};
  for (const auto& path : files) {
    json entry = {{"file", path.filename().string()}};
    try {
      const auto bytes = readFileBytes(path);
      entry["hash"] = hexDigest(fnv1a64(bytes));
      std::optional<MetricalAnalysis> analysis;
      if (!a.analysisDir.empty()) {
        const auto side = a.analysisDir / (path.stem().string() + ".analysis");
        if (fs::exists(side)) {
          std::ifstream in(side);
          analysis = parseAnalysis(in);
          entry["analysis"] = side.filename().string();
        }
      }
      const auto r = extractLoops(bytes, analysis, ds.slots, vocab, a.tag);
      entry["status"] = "ok";
      entry["candidates"] = r.candidates;
      entry["accepted"] = r.accepted;
      entry["duplicates"] = r.duplicates;
      entry["skipped"] = r.skipped;
      entry["loops"] = r.loops.size();
      if (!r.notes.empty()) entry["notes"] = r.notes;
      for (const auto& l : r.loops) {
        TokenRecord rec;
        rec.id = l.loop.provenance.fileHash + ":" + std::to_string(l.startBeat);
        rec.tokens = l.tokens;
        rec.provenance = l.loop.provenance;
        ds.records.push_back(std::move(rec));
      }
    } catch (const std::exception& e) {
      entry["status"] = "error";
      entry["error"] = e.what();
      std::cerr << "extract: " << path.filename().string() << ": " << e.what() << '\n';
    }
    report["files"].push_back(entry);
  }
  report["loops"] = ds.records.size();
  saveTokenDataset(ds, a.out);
  const auto text = report.dump(2) + "\n";
  if (a.report.empty()) std::cout << text;
  else writeText(a.report, text);
  return ds.records.empty() ? kExitRuntime : 0;
}

// split -----------------------------------------------------------------

struct SplitArgs {
  fs::path index;
  fs::path out;
  fs::path dataset;
  fs::path datasetOut;
  double test = 0.1;
  double eval = 0.1;
  double tolerance = 0.02;
  std::uint64_t seed = 0;
};

int cmdSplit(const SplitArgs& a) {
  std::ifstream in(a.index);
  if (!in) {
    std::cerr << "split: cannot open index " << a.index << '\n';
    return kExitInput;
  }
  CorpusIndex idx;
  try {
    idx = parseCorpusIndex(in);
  } catch (const Error& e) {
    std::cerr << "split: " << e.what() << '\n';
    return kExitInput;
  }
  const auto g = buildGraph(idx);
  const auto comps = connectedComponents(g);
  const auto r = assignSplits(g, comps, {a.test, a.eval}, a.seed, a.tolerance);
  for (const auto& w : r.warnings) std::cerr << "split: warning: " << w << '\n';

  std::ostringstream text;
  std::map<std::string, std::string> byHash;
  for (std::size_t h = 0; h < g.hashes.size(); ++h) {
    const auto name = std::string(splitName(r.assignment[h]));
    text << g.hashes[h] << '\t' << name << '\n';
    byHash[g.hashes[h]] = name;
  }
  if (a.out.empty()) std::cout << text.str();
  else writeText(a.out, text.str());

  if (!a.dataset.empty()) {
    auto ds = loadTokenDataset(a.dataset);
    std::size_t unmatched = 0;
    for (auto& rec : ds.records) {
      auto it = byHash.find(rec.provenance.fileHash);
      if (it == byHash.end()) ++unmatched, rec.split.clear();
      else rec.split = it->second;
    }
    if (unmatched) std::cerr << "split: " << unmatched << " records have no index entry and stay unassigned\n";
    saveTokenDataset(ds, a.datasetOut.empty() ? a.dataset : a.datasetOut);
  }
  std::cerr << "split: " << r.counts[0] << " train, " << r.counts[1] << " eval, " << r.counts[2] << " test\n";
  return 0;
}

// train -----------------------------------------------------------------

struct TrainArgs {
  fs::path dataset;
  fs::path config;
  fs::path out = "model.ckpt";
  fs::path metrics;
  fs::path resume;
  std::string split = "train";
  std::optional<std::uint64_t> seed;
  bool quiet = false;
};

int cmdTrain(const TrainArgs& a) {
  RunConfig cfg;
  try {
    if (!a.config.empty()) cfg = loadRunConfig(a.config);
  } catch (const ConfigError& e) {
    std::cerr << "train: " << e.what() << '\n';
    return kExitInput;
  } catch (const Error& e) {
    std::cerr << "train: " << e.what() << '\n';
    return kExitInput;
  }
  if (a.seed) cfg.train.seed = *a.seed;

  const auto ds = loadTokenDataset(a.dataset);
  const auto vocab = buildVocabulary();
  if (ds.vocabVersion != vocab.version()) {
    std::cerr << "train: dataset vocabulary " << ds.vocabVersion << " is not " << vocab.version() << '\n';
    return kExitVersion;
  }
  const bool labelled = std::any_of(ds.records.begin(), ds.records.end(), [](const auto& r) { return !r.split.empty(); });
  const auto loops = labelled ? ds.loops(a.split) : ds.loops();
  if (loops.empty()) {
    std::cerr << "train: no training loops in " << a.dataset << '\n';
    return kExitInput;
  }
  cfg.model.slots = static_cast<int>(ds.slots);

  std::optional<Checkpoint<float>> resume;
  if (!a.resume.empty()) {
    resume = loadCheckpoint<float>(a.resume);
    if (!(resume->params.config == cfg.model)) {
      std::cerr << "train: resume checkpoint has a different model config\n";
      return kExitInput;
    }
  }
  TrainLoopOptions opts;
  opts.checkpointPath = a.out;
  opts.metricsPath = a.metrics;
  const long total = totalSteps(loops.size(), cfg.train);
  if (!a.quiet)
    opts.onStep = [total](const MetricRecord& m) {
      if ((m.step + 1) % 100 == 0 || m.step + 1 == total)
        std::cerr << "step " << m.step + 1 << "/" << total << " loss " << m.loss << " lr " << m.lr << '\n';
    };
  const auto r = trainLoop<float>(loops, cfg.model, cfg.train, opts, std::move(resume));
  json summary = {{"checkpoint", a.out.string()},
                  {"checkpoint_version", checkpointId(readFileBytes(a.out))},
                  {"steps", r.state.step},
                  {"epoch", r.state.epoch},
                  {"seed", cfg.train.seed},
                  {"examples", loops.size()}};
  if (!r.metrics.empty()) summary["final_loss"] = r.metrics.back().loss;
  std::cout << summary.dump() << '\n';
  return 0;
}

// generate --------------------------------------------------------------

struct GenerateArgs {
  fs::path checkpoint;
  fs::path prior;
  fs::path task;
  std::string preset;
  fs::path loop;
  int startBeat = 0;
  std::optional<int> T;
  std::optional<double> topP;
  std::uint64_t seed = 0;
  fs::path outTokens;
  fs::path outMidi;
};

int cmdGenerate(const GenerateArgs& a) {
  const auto engine = loadEngine(a.checkpoint);
  json body = {{"seed", a.seed}};
  if (!a.prior.empty()) body["prior"] = readJsonFile(a.prior);
  if (!a.task.empty()) body["task"] = readJsonFile(a.task);
  if (!a.preset.empty()) body["preset"] = a.preset;
  if (a.T) body["T"] = *a.T;
  if (a.topP) body["top_p"] = *a.topP;
  if (!a.loop.empty()) {
    if (isMidiPath(a.loop)) {
      const auto loop = parseMidiWindow(readFileBytes(a.loop), a.startBeat, engine.vocab);
      body["loop"] = {{"tokens", encodeLoop(loop, engine.slots(), engine.vocab).slots}};
    } else {
      body["loop"] = readJsonFile(a.loop);
    }
  }
  const auto out = runGeneration(engine, requestFromJson(body, engine));
  if (!a.outTokens.empty()) {
    TokenDataset ds;
    ds.vocabVersion = engine.vocab.version();
    ds.slots = engine.slots();
    ds.records.push_back({"generated", out.tokens, {}, {}});
    saveTokenDataset(ds, a.outTokens);
  }
  if (!a.outMidi.empty()) writeFileBytes(a.outMidi, out.midi);
  std::cout << out.echo.dump() << '\n';
  return 0;
}

// serve -----------------------------------------------------------------

struct ServeArgs {
  fs::path checkpoint;
  std::string host = "127.0.0.1";
  int port = 8080;
  int workers = defaultWorkerCount();
  std::uint64_t seed = 0;
};

httplib::Server* gServer = nullptr;

int cmdServe(const ServeArgs& a) {
  Service service(loadEngine(a.checkpoint), a.workers);
  httplib::Server server;
  service.bind(server);
  gServer = &server;
  std::signal(SIGINT, [](int) {
    if (gServer) gServer->stop();
  });
  std::signal(SIGTERM, [](int) {
    if (gServer) gServer->stop();
  });
  std::cerr << "serving " << service.engine().checkpointVersion << " on http://" << a.host << ':' << a.port << '\n';
  if (!server.listen(a.host, a.port)) {
    std::cerr << "serve: cannot listen on " << a.host << ':' << a.port << '\n';
    return kExitRuntime;
  }
  return 0;
}

template <class F>
int guarded(const char* name, F&& f) {
  try {
    return f();
  } catch (const TaskSpecError& e) {
    std::cerr << name << ": invalid request\n";
    for (const auto& fe : e.errors()) std::cerr << "  " << fe.field << ": " << fe.message << '\n';
    return kExitInput;
  } catch (const Error& e) {
    std::cerr << name << ": " << e.what() << '\n';
    switch (e.code()) {
      case Errc::VersionMismatch: return kExitVersion;
      case Errc::ParseError:
      case Errc::InvalidArgument:
      case Errc::IoError:
      case Errc::BoxTooSmall:
      case Errc::EmptySelection:
      case Errc::MalformedSlot:
      case Errc::OutOfRange:
      case Errc::TooManyEvents:
      case Errc::CorruptCheckpoint: return kExitInput;
      default: return kExitRuntime;
    }
  } catch (const std::exception& e) {
    std::cerr << name << ": " << e.what() << '\n';
    return kExitRuntime;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"symplex: simplex diffusion for 4-bar MIDI loops"};
  app.require_subcommand(1);

  ExtractArgs ex;
  auto* extract = app.add_subcommand("extract", "Extract 4-bar loops from a directory of MIDI files");
  extract->add_option("input", ex.input, "Directory of .mid files")->required();
  extract->add_option("--analysis-dir", ex.analysisDir, "Directory of <stem>.analysis metrical sidecars");
  extract->add_option("--out", ex.out, "Token dataset (.jsonl, or .bin for the packed form)");
  extract->add_option("--report", ex.report, "Report file (default: stdout)");
  extract->add_option("--tag", ex.tag, "Genre tag for every loop (default: tag stored in the file)");
  extract->add_option("--slots", ex.slots, "Slots per loop")->check(CLI::PositiveNumber);
  extract->add_option("--seed", ex.seed, "Seed (extraction is deterministic)");

  SplitArgs sp;
  auto* split = app.add_subcommand("split", "Assign hashes to train/eval/test without leakage");
  split->add_option("index", sp.index, "Index lines: hash<TAB>track1,track2")->required();
  split->add_option("--out", sp.out, "Assignment file (default: stdout)");
  split->add_option("--dataset", sp.dataset, "Token dataset to label with splits");
  split->add_option("--dataset-out", sp.datasetOut, "Where to write the labelled dataset (default: in place)");
  split->add_option("--test", sp.test, "Test fraction")->check(CLI::Range(0.0, 0.99));
  split->add_option("--eval", sp.eval, "Eval fraction of the non-test part")->check(CLI::Range(0.0, 0.99));
  split->add_option("--tolerance", sp.tolerance, "Warn when a split misses its target by more than this");
  split->add_option("--seed", sp.seed, "Shuffle seed");

  TrainArgs tr;
  auto* train = app.add_subcommand("train", "Train a denoiser");
  train->add_option("--dataset", tr.dataset, "Token dataset")->required();
  train->add_option("--config", tr.config, "Run config JSON");
  train->add_option("--out", tr.out, "Checkpoint path");
  train->add_option("--metrics", tr.metrics, "Metrics log (JSON lines, appended)");
  train->add_option("--resume", tr.resume, "Checkpoint to continue from");
  train->add_option("--split", tr.split, "Split to train on when records carry labels");
  train->add_option("--seed", tr.seed, "Seed (overrides the config)");
  train->add_flag("--quiet", tr.quiet, "No progress output");

  GenerateArgs gen;
  auto* generate = app.add_subcommand("generate", "Sample a loop under a prior");
  generate->add_option("--checkpoint", gen.checkpoint, "Model checkpoint")->required()->check(CLI::ExistingFile);
  auto* optPrior = generate->add_option("--prior", gen.prior, "Prior document JSON")->check(CLI::ExistingFile);
  auto* optTask = generate->add_option("--task", gen.task, "Task spec JSON")->check(CLI::ExistingFile);
  auto* optPreset = generate->add_option("--preset", gen.preset, "Named task preset");
  optPrior->excludes(optTask)->excludes(optPreset);
  optTask->excludes(optPreset);
  generate->add_option("--loop", gen.loop, "Source loop (.mid or JSON)")->check(CLI::ExistingFile);
  generate->add_option("--start-beat", gen.startBeat, "Window start when --loop is a MIDI file");
  generate->add_option("--T", gen.T, "Diffusion steps");
  generate->add_option("--top-p", gen.topP, "Nucleus threshold");
  generate->add_option("--seed", gen.seed, "Sampling seed");
  generate->add_option("--out-tokens", gen.outTokens, "Write the sampled tokens");
  generate->add_option("--out-midi", gen.outMidi, "Write the rendered MIDI");

  ServeArgs sv;
  auto* serve = app.add_subcommand("serve", "Run the HTTP service");
  serve->add_option("--checkpoint", sv.checkpoint, "Model checkpoint")->required()->check(CLI::ExistingFile);
  serve->add_option("--host", sv.host, "Bind address");
  serve->add_option("--port", sv.port, "Port");
  serve->add_option("--workers", sv.workers, "Generation workers")->check(CLI::PositiveNumber);
  serve->add_option("--seed", sv.seed, "Unused; requests carry their own seeds");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitInput;
  }

  if (*extract) return guarded("extract", [&] { return cmdExtract(ex); });
  if (*split) return guarded("split", [&] { return cmdSplit(sp); });
  if (*train) return guarded("train", [&] { return cmdTrain(tr); });
  if (*generate) return guarded("generate", [&] { return cmdGenerate(gen); });
  if (*serve) return guarded("serve", [&] { return cmdServe(sv); });
  return kExitInput;
}
