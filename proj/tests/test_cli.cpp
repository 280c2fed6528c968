// Drives the built binary end to end through the shell.

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <thread>

#include <gtest/gtest.h>

#include "support.hpp"
#include "symplex/service.hpp"
#include "symplex/token_io.hpp"

using namespace symplex;
namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
  const auto cmd = std::string(SYMPLEX_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void spit(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

// Three repeats of a 16-beat bass line, transposed so files hash apart.
std::vector<std::uint8_t> bassFile(int transpose) {
  const int line[16] = {36, 38, 40, 41, 43, 45, 47, 48, 36, 36, 43, 43, 41, 40, 38, 36};
  std::vector<fixtures::SimpleNote> notes;
  for (int r = 0; r < 3; ++r)
    for (int b = 0; b < 16; ++b) {
      const long at = (r * 16 + b) * 96L;
      notes.push_back({0, line[b] + transpose, at, at + 90, 100, 33});
    }
  return fixtures::simpleMidi(notes);
}

constexpr const char* kTinyConfig = R"({"schema_version": 1,
  "model": {"layers": 1, "heads": 2, "hidden": 8, "feedforward": 12, "time_dim": 4},
  "train": {"batch_size": 2, "max_steps": 3, "epochs": 1, "seed": 4}})";

// Runs extract, split and train once for the suite.
class CliPipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new fixtures::ScratchDir("cli");
    const auto& d = *dir_;
    fs::create_directories(d / "midi");
    for (int i = 0; i < 3; ++i) writeFileBytes(d / "midi" / ("f" + std::to_string(i) + ".mid"), bassFile(i));
    extractCode_ = run("extract " + (d / "midi").string() + " --slots 16 --out " + (d / "loops.jsonl").string() +
                       " --report " + (d / "report.json").string());
    spit(d / "train.json", kTinyConfig);
    trainCode_ = run("train --quiet --dataset " + (d / "loops.jsonl").string() + " --config " +
                     (d / "train.json").string() + " --out " + (d / "model.ckpt").string());
  }
  static void TearDownTestSuite() { delete dir_; }

  static fs::path at(const std::string& name) { return *dir_ / name; }

  static inline fixtures::ScratchDir* dir_ = nullptr;
  static inline int extractCode_ = -1;
  static inline int trainCode_ = -1;
};

}  // namespace

TEST_F(CliPipeline, ExtractWritesDataset) {
  ASSERT_EQ(extractCode_, 0);
  const auto ds = loadTokenDataset(at("loops.jsonl"));
  EXPECT_EQ(ds.records.size(), 3u);
  EXPECT_EQ(ds.slots, 16u);
  const auto report = nlohmann::json::parse(slurp(at("report.json")));
  EXPECT_EQ(report.at("loops"), 3);
}

TEST_F(CliPipeline, ExtractEmptyDirFails) {
  fixtures::ScratchDir empty("cli-empty");
  EXPECT_EQ(run("extract " + empty.path().string() + " --out " + (empty / "x.jsonl").string()), 1);
}

TEST_F(CliPipeline, SplitIsDeterministic) {
  ASSERT_EQ(extractCode_, 0);
  const auto ds = loadTokenDataset(at("loops.jsonl"));
  std::string index;
  for (std::size_t i = 0; i < ds.records.size(); ++i) index += ds.records[i].provenance.fileHash + "\ttrack" + std::to_string(i % 2) + "\n";
  spit(at("index.tsv"), index);
  for (const char* name : {"a.tsv", "b.tsv"})
    ASSERT_EQ(run("split " + at("index.tsv").string() + " --seed 3 --out " + at(name).string() + " --dataset " +
                  at("loops.jsonl").string() + " --dataset-out " + at(std::string("labelled_") + name + ".jsonl").string()),
              0);
  EXPECT_EQ(slurp(at("a.tsv")), slurp(at("b.tsv")));
  const auto labelled = loadTokenDataset(at("labelled_a.tsv.jsonl"));
  for (const auto& r : labelled.records) EXPECT_FALSE(r.split.empty());
  EXPECT_EQ(run("split " + at("missing.tsv").string()), 2);
}

TEST_F(CliPipeline, TrainRejectsUnknownKey) {
  spit(at("bad.json"), R"({"schema_version": 1, "train": {"learning_rat": 0.1}})");
  EXPECT_EQ(run("train --dataset " + at("loops.jsonl").string() + " --config " + at("bad.json").string() +
                " --out " + at("bad.ckpt").string()),
            2);
  EXPECT_FALSE(fs::exists(at("bad.ckpt")));
}

TEST_F(CliPipeline, GenerateIsSeeded) {
  ASSERT_EQ(trainCode_, 0);
  const auto gen = [&](int seed, const std::string& tag) {
    return run("generate --checkpoint " + at("model.ckpt").string() + " --preset c_major --T 6 --seed " +
               std::to_string(seed) + " --out-tokens " + at(tag + ".jsonl").string() + " --out-midi " +
               at(tag + ".mid").string());
  };
  ASSERT_EQ(gen(7, "g1"), 0);
  ASSERT_EQ(gen(7, "g2"), 0);
  ASSERT_EQ(gen(8, "g3"), 0);
  EXPECT_EQ(slurp(at("g1.jsonl")), slurp(at("g2.jsonl")));
  EXPECT_EQ(slurp(at("g1.mid")), slurp(at("g2.mid")));
  EXPECT_NE(slurp(at("g1.jsonl")), slurp(at("g3.jsonl")));
  EXPECT_EQ(run("generate --checkpoint " + at("model.ckpt").string() + " --preset nope"), 2);
  EXPECT_EQ(run("generate --checkpoint " + at("model.ckpt").string() + " --preset regenerate_bass"), 2);
}

TEST_F(CliPipeline, ServeAnswersHealth) {
  ASSERT_EQ(trainCode_, 0);
  // Pick a free port by binding and releasing it.
  int port = 0;
  {
    httplib::Server probe;
    port = probe.bind_to_any_port("127.0.0.1");
  }
  const auto pidFile = at("serve.pid");
  const auto cmd = std::string(SYMPLEX_CLI) + " serve --checkpoint " + at("model.ckpt").string() + " --port " +
                   std::to_string(port) + " --workers 1 >/dev/null 2>&1 & echo $! > " + pidFile.string();
  ASSERT_EQ(std::system(cmd.c_str()), 0);
  httplib::Client client("127.0.0.1", port);
  httplib::Result r;
  for (int i = 0; i < 100 && !r; ++i) {
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
    r = client.Get("/health");
  }
  EXPECT_EQ(std::system(("kill $(cat " + pidFile.string() + ")").c_str()), 0);
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 200);
  EXPECT_FALSE(r->get_header_value("X-Symplex-Checkpoint-Version").empty());
}
