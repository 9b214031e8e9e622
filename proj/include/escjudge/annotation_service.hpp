#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <string>
#include <thread>
#include <vector>

#include "escjudge/aggregator.hpp"
#include "escjudge/catalogs.hpp"
#include "escjudge/dialogue_engine.hpp"
#include "escjudge/llm_gateway.hpp"

namespace httplib {
class Server;
}

namespace escjudge {

enum class SideVerdict { kLeft, kRight, kTie };

std::string_view to_string(SideVerdict v);
SideVerdict parse_side_verdict(std::string_view s);

struct AnnotationTask {
  std::string task_id;
  std::string batch_id;
  std::string pair_id;
  std::string dimension_name;
  std::string dimension_definition;
  // Server-side only: which transcript is shown on the left.
  bool left_is_a = true;

  Json to_json() const;
  static AnnotationTask from_json(const Json& j);
  bool operator==(const AnnotationTask&) const = default;
};

// Maps a left/right/tie choice back to the A/B frame of the task's pair.
Verdict map_side_verdict(SideVerdict side, bool left_is_a);

// Returns the pair's (T_A, T_B); throws NotFoundError for an unknown pair id.
using PairSource = std::function<std::pair<Transcript, Transcript>(const std::string& pair_id)>;

// Reads <dir>/<role_id>/<agent_id>.jsonl, the experiment transcript layout.
PairSource transcript_dir_source(const std::filesystem::path& dir);

// Deterministic sample of `n` distinct pair ids (all of them when n >= size).
std::vector<std::string> sample_pairs(std::vector<std::string> pair_ids, std::size_t n, std::uint64_t seed);

// Batches, tasks and verdicts. Every submission is appended to log.jsonl before
// the in-memory current view changes; current.jsonl is the compacted view.
class AnnotationStore {
 public:
  explicit AnnotationStore(std::filesystem::path dir);

  // |tasks| = |pairs| x |rubric|. Left/right drawn per task from `seed`.
  std::vector<AnnotationTask> create_batch(const std::string& batch_id, const std::vector<std::string>& pair_ids,
                                           const Rubric& rubric, const PairSource& source, std::uint64_t seed);

  AnnotationTask task(const std::string& task_id) const;
  std::vector<AnnotationTask> batch(const std::string& batch_id) const;
  std::vector<std::string> batch_ids() const;
  // First task in the batch the annotator has not answered.
  std::optional<AnnotationTask> next_task(const std::string& batch_id, const std::string& annotator_id) const;
  std::pair<std::size_t, std::size_t> progress(const std::string& batch_id, const std::string& annotator_id) const;

  // Overwrites any earlier verdict of the same annotator; the log keeps both.
  AnnotationRecord submit(const std::string& task_id, const std::string& annotator_id, SideVerdict side,
                          const std::string& submitted_at);

  // Current verdicts of the batch, ordered by task then annotator.
  std::vector<AnnotationRecord> export_batch(const std::string& batch_id) const;
  std::vector<Json> audit_log() const;

 private:
  void load();
  void write_current() const;

  std::filesystem::path dir_;
  mutable std::shared_mutex mu_;
  std::map<std::string, AnnotationTask> tasks_;
  std::map<std::string, std::vector<std::string>> batches_;  // batch -> task ids in order
  // (task, annotator) -> record
  std::map<std::pair<std::string, std::string>, AnnotationRecord> current_;
  std::ofstream log_;
};

struct AnnotationAuth {
  std::map<std::string, std::string> annotator_tokens;  // annotator id -> token
  std::string admin_token;

  // ESC_ANNOTATOR_TOKENS="alice:tok1,bob:tok2" and ESC_ADMIN_TOKEN.
  static AnnotationAuth from_env();
  static AnnotationAuth from_json(const Json& j);
  std::optional<std::string> annotator_for(const std::string& token) const;
};

// Task view sent to annotators: dimension and the two transcripts as
// neutral speaker-labelled turns. No pair id, agent id or model id.
Json blind_task_view(const AnnotationTask& task, const PairSource& source);

class AnnotationServer {
 public:
  AnnotationServer(AnnotationStore& store, PairSource source, AnnotationAuth auth, Rubric rubric,
                   std::function<std::string()> clock = utc_now_iso8601);
  ~AnnotationServer();

  // Binds and serves on a background thread; port 0 picks a free port.
  int start(const std::string& host = "127.0.0.1", int port = 0);
  // Serves on the calling thread until stop().
  void listen(const std::string& host, int port);
  void stop();

 private:
  void routes();

  AnnotationStore& store_;
  PairSource source_;
  AnnotationAuth auth_;
  Rubric rubric_;
  std::function<std::string()> clock_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
};

}  // namespace escjudge
