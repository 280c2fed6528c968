#pragma once

// Local HTTP service: health and preset listing, prior compilation, and an
// asynchronous generation job queue served by a bounded worker pool.

#include <chrono>
#include <condition_variable>
#include <deque>
#include <map>
#include <mutex>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "symplex/generation.hpp"

namespace symplex {

enum class JobStatus { Queued, Running, Done, Failed };

inline std::string_view jobStatusName(JobStatus s) {
  switch (s) {
    case JobStatus::Queued: return "queued";
    case JobStatus::Running: return "running";
    case JobStatus::Done: return "done";
    case JobStatus::Failed: return "failed";
  }
  return "?";
}

struct JobRecord {
  std::string id;
  std::string kind = "generate";
  JobStatus status = JobStatus::Queued;
  std::int64_t createdMs = 0, startedMs = 0, finishedMs = 0;
  std::string error;
  std::optional<GenerateOutput> result;
};

inline std::int64_t nowMs() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
      .count();
}

inline int defaultWorkerCount() {
  const unsigned hw = std::thread::hardware_concurrency();
  return static_cast<int>(std::clamp(hw == 0 ? 1u : hw, 1u, 4u));
}

class Service {
 public:
  explicit Service(Engine engine, int workers = defaultWorkerCount()) : engine_(std::move(engine)) {
    for (int i = 0; i < std::max(1, workers); ++i) workers_.emplace_back([this] { work(); });
    workerCount_ = std::max(1, workers);
  }

  ~Service() {
    {
      std::lock_guard lock(mu_);
      stopping_ = true;
    }
    cv_.notify_all();
    for (auto& t : workers_) t.join();
  }

  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  const Engine& engine() const { return engine_; }

  std::string submit(PreparedGeneration prep) {
    std::lock_guard lock(mu_);
    JobRecord rec;
    rec.id = "job-" + std::to_string(++lastId_);
    rec.createdMs = nowMs();
    jobs_[rec.id] = rec;
    queue_.emplace_back(rec.id, std::move(prep));
    cv_.notify_one();
    return rec.id;
  }

  std::optional<JobRecord> job(const std::string& id) const {
    std::lock_guard lock(mu_);
    auto it = jobs_.find(id);
    if (it == jobs_.end()) return std::nullopt;
    return it->second;
  }

  /// Blocks until the job leaves the queue and finishes (testing aid).
  std::optional<JobRecord> wait(const std::string& id) const {
    std::unique_lock lock(mu_);
    done_.wait(lock, [&] {
      auto it = jobs_.find(id);
      return it == jobs_.end() || it->second.status == JobStatus::Done || it->second.status == JobStatus::Failed;
    });
    auto it = jobs_.find(id);
    if (it == jobs_.end()) return std::nullopt;
    return it->second;
  }

  nlohmann::json versions() const {
    return {{"vocab_version", engine_.vocab.version()}, {"checkpoint_version", engine_.checkpointVersion}};
  }

  nlohmann::json jobToJson(const JobRecord& r) const {
    nlohmann::json j = {{"id", r.id},
                        {"kind", r.kind},
                        {"status", jobStatusName(r.status)},
                        {"created_ms", r.createdMs},
                        {"started_ms", r.startedMs},
                        {"finished_ms", r.finishedMs}};
    if (!r.error.empty()) j["error"] = r.error;
    if (r.result) {
      j["echo"] = r.result->echo;
      j["result"] = {{"midi", "/jobs/" + r.id + "/result.mid"}, {"json", "/jobs/" + r.id + "/result.json"}};
    }
    return j;
  }

  /// Registers every endpoint on `server`.
  void bind(httplib::Server& server) {
    server.Get("/health", [this](const httplib::Request&, httplib::Response& res) {
      auto j = nlohmann::json{{"status", "ok"}, {"workers", workerCount_}, {"slots", engine_.slots()}};
      reply(res, 200, j);
    });
    server.Get("/tasks", [this](const httplib::Request&, httplib::Response& res) {
      nlohmann::json presets = nlohmann::json::array();
      for (const auto& t : taskPresets()) presets.push_back(taskSpecToJson(t, engine_.vocab));
      reply(res, 200, {{"presets", presets}});
    });
    server.Post("/priors/compile", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const auto body = parseBody(req);
        const auto r = requestFromJson(body, engine_);
        const auto prep = prepareGeneration(engine_, r);
        reply(res, 200, {{"prior", priorToJson(prep.compiled.prior, engine_.vocab, r.task)}});
      });
    });
    server.Post("/generate", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const auto body = parseBody(req);
        auto prep = prepareGeneration(engine_, requestFromJson(body, engine_));
        const auto echo = nlohmann::json{{"T", prep.cfg.T}, {"top_p", prep.cfg.topP}, {"seed", prep.cfg.seed}};
        const auto id = submit(std::move(prep));
        reply(res, 202, {{"job_id", id}, {"status", "queued"}, {"echo", echo}});
      });
    });
    server.Get(R"(/jobs/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      const auto rec = job(req.matches[1]);
      if (!rec) return reply(res, 404, {{"error", "unknown job " + std::string(req.matches[1])}});
      reply(res, 200, jobToJson(*rec));
    });
    server.Get(R"(/jobs/([^/]+)/result\.mid)", [this](const httplib::Request& req, httplib::Response& res) {
      const auto rec = job(req.matches[1]);
      if (!rec) return reply(res, 404, {{"error", "unknown job " + std::string(req.matches[1])}});
      if (!rec->result)
        return reply(res, 404, {{"error", "job has no result"}, {"status", jobStatusName(rec->status)}});
      setVersionHeaders(res);
      res.status = 200;
      res.set_content(std::string(rec->result->midi.begin(), rec->result->midi.end()), "audio/midi");
    });
    server.Get(R"(/jobs/([^/]+)/result\.json)", [this](const httplib::Request& req, httplib::Response& res) {
      const auto rec = job(req.matches[1]);
      if (!rec) return reply(res, 404, {{"error", "unknown job " + std::string(req.matches[1])}});
      if (!rec->result)
        return reply(res, 404, {{"error", "job has no result"}, {"status", jobStatusName(rec->status)}});
      reply(res, 200,
            {{"tokens", rec->result->tokens.slots},
             {"loop", loopToJson(rec->result->loop, engine_.vocab)},
             {"echo", rec->result->echo}});
    });
  }

 private:
  void setVersionHeaders(httplib::Response& res) const {
    res.set_header("X-Symplex-Vocab-Version", engine_.vocab.version());
    res.set_header("X-Symplex-Checkpoint-Version", engine_.checkpointVersion);
  }

  void reply(httplib::Response& res, int status, nlohmann::json body) const {
    const auto ids = versions();  // items() does not extend a temporary's lifetime
    for (const auto& [k, v] : ids.items()) body[k] = v;
    setVersionHeaders(res);
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static nlohmann::json parseBody(const httplib::Request& req) {
    try {
      return nlohmann::json::parse(req.body);
    } catch (const nlohmann::json::exception& e) {
      throw TaskSpecError("body", std::string("invalid JSON: ") + e.what());
    }
  }

  template <class F>
  void guarded(httplib::Response& res, F&& f) {
    try {
      f();
    } catch (const TaskSpecError& e) {
      nlohmann::json errs = nlohmann::json::array();
      for (const auto& fe : e.errors()) errs.push_back({{"field", fe.field}, {"message", fe.message}});
      reply(res, 400, {{"error", "validation failed"}, {"errors", errs}});
    } catch (const Error& e) {
      const int status = e.code() == Errc::VersionMismatch ? 409 : 400;
      const std::string field = e.code() == Errc::VersionMismatch ? "version" : "task";
      reply(res, status,
            {{"error", e.what()},
             {"code", errcName(e.code())},
             {"errors", {{{"field", field}, {"message", e.what()}}}}});
    }
  }

  void work() {
    for (;;) {
      std::pair<std::string, PreparedGeneration> item;
      {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
        if (stopping_ && queue_.empty()) return;
        item = std::move(queue_.front());
        queue_.pop_front();
        auto& rec = jobs_[item.first];
        rec.status = JobStatus::Running;
        rec.startedMs = nowMs();
      }
      std::optional<GenerateOutput> out;
      std::string error;
      try {
        out = runGeneration(engine_, item.second);
      } catch (const std::exception& e) {
        error = e.what();
      }
      {
        std::lock_guard lock(mu_);
        auto& rec = jobs_[item.first];
        rec.finishedMs = nowMs();
        rec.status = out ? JobStatus::Done : JobStatus::Failed;
        rec.error = error;
        rec.result = std::move(out);
      }
      done_.notify_all();
    }
  }

  Engine engine_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  mutable std::condition_variable done_;
  std::deque<std::pair<std::string, PreparedGeneration>> queue_;
  std::map<std::string, JobRecord> jobs_;
  std::vector<std::thread> workers_;
  int workerCount_ = 1;
  std::uint64_t lastId_ = 0;
  bool stopping_ = false;
};

}  // namespace symplex
