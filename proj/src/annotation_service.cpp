#include "escjudge/annotation_service.hpp"

#include <cstdio>
#include <cstdlib>
#include <mutex>

#include <spdlog/spdlog.h>

#include "httplib.h"

#include "escjudge/errors.hpp"

namespace fs = std::filesystem;

namespace escjudge {

std::string_view to_string(SideVerdict v) {
  switch (v) {
    case SideVerdict::kLeft: return "left";
    case SideVerdict::kRight: return "right";
    case SideVerdict::kTie: return "tie";
  }
  return "?";
}

SideVerdict parse_side_verdict(std::string_view s) {
  auto l = to_lower(trim(s));
  if (l == "left") return SideVerdict::kLeft;
  if (l == "right") return SideVerdict::kRight;
  if (l == "tie") return SideVerdict::kTie;
  throw ParseError("side verdict must be left, right or tie, got '" + std::string(s) + "'");
}

Json AnnotationTask::to_json() const {
  return {{"task_id", task_id},   {"batch_id", batch_id},
          {"pair_id", pair_id},   {"dimension", dimension_name},
          {"definition", dimension_definition}, {"left_is_a", left_is_a}};
}

AnnotationTask AnnotationTask::from_json(const Json& j) {
  AnnotationTask t;
  t.task_id = j.at("task_id").get<std::string>();
  t.batch_id = j.at("batch_id").get<std::string>();
  t.pair_id = j.at("pair_id").get<std::string>();
  t.dimension_name = j.at("dimension").get<std::string>();
  t.dimension_definition = j.at("definition").get<std::string>();
  t.left_is_a = j.at("left_is_a").get<bool>();
  return t;
}

Verdict map_side_verdict(SideVerdict side, bool left_is_a) {
  if (side == SideVerdict::kTie) return Verdict::kTie;
  const bool chose_a = (side == SideVerdict::kLeft) == left_is_a;
  return chose_a ? Verdict::kA : Verdict::kB;
}

PairSource transcript_dir_source(const fs::path& dir) {
  return [dir](const std::string& pair_id) {
    PairRef p;
    try {
      p = parse_pair_id(pair_id);
    } catch (const ParseError&) {
      throw NotFoundError("unknown pair: " + pair_id);
    }
    auto a = dir / p.role_id / (p.agent_a + ".jsonl");
    auto b = dir / p.role_id / (p.agent_b + ".jsonl");
    if (!fs::exists(a) || !fs::exists(b)) throw NotFoundError("unknown pair: " + pair_id);
    return std::make_pair(load_transcript(a), load_transcript(b));
  };
}

std::vector<std::string> sample_pairs(std::vector<std::string> pair_ids, std::size_t n, std::uint64_t seed) {
  std::sort(pair_ids.begin(), pair_ids.end());
  Rng rng(seed);
  rng.shuffle(pair_ids);
  if (n < pair_ids.size()) pair_ids.resize(n);
  std::sort(pair_ids.begin(), pair_ids.end());
  return pair_ids;
}

AnnotationStore::AnnotationStore(fs::path dir) : dir_(std::move(dir)) {
  fs::create_directories(dir_ / "batches");
  load();
  log_.open(dir_ / "log.jsonl", std::ios::app);
  if (!log_) throw Error("cannot open annotation log in " + dir_.string());
}

void AnnotationStore::load() {
  for (const auto& entry : fs::directory_iterator(dir_ / "batches")) {
    if (entry.path().extension() != ".json") continue;
    auto j = Json::parse(read_file(entry.path()));
    const auto batch_id = j.at("batch_id").get<std::string>();
    for (const auto& tj : j.at("tasks")) {
      auto t = AnnotationTask::from_json(tj);
      batches_[batch_id].push_back(t.task_id);
      tasks_[t.task_id] = std::move(t);
    }
  }
  if (!fs::exists(dir_ / "log.jsonl")) return;
  for (const auto& j : read_jsonl(dir_ / "log.jsonl")) {
    auto r = AnnotationRecord::from_json(j);
    current_[{r.task_id, r.annotator_id}] = r;
  }
}

std::vector<AnnotationTask> AnnotationStore::create_batch(const std::string& batch_id,
                                                          const std::vector<std::string>& pair_ids,
                                                          const Rubric& rubric, const PairSource& source,
                                                          std::uint64_t seed) {
  if (batch_id.empty() || batch_id.find('/') != std::string::npos) throw ConfigError("invalid batch id: " + batch_id);
  for (const auto& p : pair_ids) source(p);  // NotFoundError for unknown pairs

  std::vector<AnnotationTask> tasks;
  Rng rng(seed);
  for (const auto& pair : pair_ids)
    for (const auto& dim : rubric.dimensions) {
      char id[32];
      std::snprintf(id, sizeof id, "-%04zu", tasks.size() + 1);
      tasks.push_back({batch_id + id, batch_id, pair, dim.name, dim.definition, rng.index(2) == 0});
    }

  std::unique_lock lock(mu_);
  if (batches_.count(batch_id)) throw ConfigError("batch already exists: " + batch_id);
  Json j{{"batch_id", batch_id}, {"seed", seed}, {"tasks", Json::array()}};
  for (const auto& t : tasks) j["tasks"].push_back(t.to_json());
  write_file(dir_ / "batches" / (batch_id + ".json"), j.dump(2) + "\n");
  for (const auto& t : tasks) {
    batches_[batch_id].push_back(t.task_id);
    tasks_[t.task_id] = t;
  }
  return tasks;
}

AnnotationTask AnnotationStore::task(const std::string& task_id) const {
  std::shared_lock lock(mu_);
  auto it = tasks_.find(task_id);
  if (it == tasks_.end()) throw NotFoundError("unknown task: " + task_id);
  return it->second;
}

std::vector<AnnotationTask> AnnotationStore::batch(const std::string& batch_id) const {
  std::shared_lock lock(mu_);
  auto it = batches_.find(batch_id);
  if (it == batches_.end()) throw NotFoundError("unknown batch: " + batch_id);
  std::vector<AnnotationTask> out;
  for (const auto& id : it->second) out.push_back(tasks_.at(id));
  return out;
}

std::vector<std::string> AnnotationStore::batch_ids() const {
  std::shared_lock lock(mu_);
  std::vector<std::string> out;
  for (const auto& [id, _] : batches_) out.push_back(id);
  return out;
}

std::optional<AnnotationTask> AnnotationStore::next_task(const std::string& batch_id,
                                                         const std::string& annotator_id) const {
  std::shared_lock lock(mu_);
  auto it = batches_.find(batch_id);
  if (it == batches_.end()) throw NotFoundError("unknown batch: " + batch_id);
  for (const auto& id : it->second)
    if (!current_.count({id, annotator_id})) return tasks_.at(id);
  return std::nullopt;
}

std::pair<std::size_t, std::size_t> AnnotationStore::progress(const std::string& batch_id,
                                                              const std::string& annotator_id) const {
  std::shared_lock lock(mu_);
  auto it = batches_.find(batch_id);
  if (it == batches_.end()) throw NotFoundError("unknown batch: " + batch_id);
  std::size_t done = 0;
  for (const auto& id : it->second) done += current_.count({id, annotator_id});
  return {done, it->second.size()};
}

AnnotationRecord AnnotationStore::submit(const std::string& task_id, const std::string& annotator_id,
                                         SideVerdict side, const std::string& submitted_at) {
  if (annotator_id.empty()) throw ConfigError("annotator id is empty");
  std::unique_lock lock(mu_);
  auto it = tasks_.find(task_id);
  if (it == tasks_.end()) throw NotFoundError("unknown task: " + task_id);
  const auto& t = it->second;
  AnnotationRecord r{task_id, t.pair_id, t.dimension_name, annotator_id, map_side_verdict(side, t.left_is_a),
                     submitted_at};
  auto line = r.to_json();
  line["side"] = std::string(to_string(side));
  log_ << line.dump() << "\n";
  log_.flush();
  current_[{task_id, annotator_id}] = r;
  write_current();
  return r;
}

void AnnotationStore::write_current() const {
  std::vector<Json> lines;
  for (const auto& [_, r] : current_) lines.push_back(r.to_json());
  write_file(dir_ / "current.jsonl", to_jsonl(lines));
}

std::vector<AnnotationRecord> AnnotationStore::export_batch(const std::string& batch_id) const {
  std::shared_lock lock(mu_);
  auto it = batches_.find(batch_id);
  if (it == batches_.end()) throw NotFoundError("unknown batch: " + batch_id);
  std::vector<AnnotationRecord> out;
  for (const auto& id : it->second)
    for (auto rec = current_.lower_bound({id, ""}); rec != current_.end() && rec->first.first == id; ++rec)
      out.push_back(rec->second);
  return out;
}

std::vector<Json> AnnotationStore::audit_log() const {
  std::shared_lock lock(mu_);
  return fs::exists(dir_ / "log.jsonl") ? read_jsonl(dir_ / "log.jsonl") : std::vector<Json>{};
}

AnnotationAuth AnnotationAuth::from_env() {
  AnnotationAuth a;
  if (const char* admin = std::getenv("ESC_ADMIN_TOKEN")) a.admin_token = admin;
  if (const char* tokens = std::getenv("ESC_ANNOTATOR_TOKENS")) {
    std::string s(tokens);
    std::size_t start = 0;
    while (start <= s.size()) {
      auto end = s.find(',', start);
      auto item = trim(s.substr(start, end == std::string::npos ? std::string::npos : end - start));
      if (!item.empty()) {
        auto colon = item.find(':');
        if (colon == std::string::npos || colon == 0 || colon + 1 == item.size())
          throw ConfigError("ESC_ANNOTATOR_TOKENS entries must look like annotator:token");
        a.annotator_tokens[item.substr(0, colon)] = item.substr(colon + 1);
      }
      if (end == std::string::npos) break;
      start = end + 1;
    }
  }
  return a;
}

AnnotationAuth AnnotationAuth::from_json(const Json& j) {
  AnnotationAuth a;
  a.admin_token = j.value("admin_token", "");
  if (j.contains("annotators"))
    for (const auto& [id, token] : j["annotators"].items()) a.annotator_tokens[id] = token.get<std::string>();
  return a;
}

std::optional<std::string> AnnotationAuth::annotator_for(const std::string& token) const {
  if (token.empty()) return std::nullopt;
  for (const auto& [id, t] : annotator_tokens)
    if (t == token) return id;
  return std::nullopt;
}

namespace {

Json blind_turns(const Transcript& t) {
  Json turns = Json::array();
  for (const auto& turn : t.turns)
    turns.push_back({{"index", turn.index}, {"speaker", std::string(to_string(turn.speaker))}, {"text", turn.text}});
  return turns;
}

}  // namespace

Json blind_task_view(const AnnotationTask& task, const PairSource& source) {
  auto [a, b] = source(task.pair_id);
  const auto& left = task.left_is_a ? a : b;
  const auto& right = task.left_is_a ? b : a;
  return {{"task_id", task.task_id},
          {"batch_id", task.batch_id},
          {"dimension", {{"name", task.dimension_name}, {"definition", task.dimension_definition}}},
          {"left", {{"turns", blind_turns(left)}}},
          {"right", {{"turns", blind_turns(right)}}}};
}

AnnotationServer::AnnotationServer(AnnotationStore& store, PairSource source, AnnotationAuth auth, Rubric rubric,
                                   std::function<std::string()> clock)
    : store_(store),
      source_(std::move(source)),
      auth_(std::move(auth)),
      rubric_(std::move(rubric)),
      clock_(std::move(clock)),
      server_(std::make_unique<httplib::Server>()) {
  routes();
}

AnnotationServer::~AnnotationServer() { stop(); }

namespace {

void send_json(httplib::Response& res, int status, const Json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message) {
  send_json(res, status, {{"error", message}});
}

std::string bearer(const httplib::Request& req) {
  auto h = req.get_header_value("Authorization");
  const std::string prefix = "Bearer ";
  return h.rfind(prefix, 0) == 0 ? h.substr(prefix.size()) : std::string();
}

}  // namespace

void AnnotationServer::routes() {
  auto& s = *server_;
  s.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                         {"Access-Control-Allow-Headers", "Authorization, Content-Type"},
                         {"Access-Control-Expose-Headers", "X-Escjudge-Warning"}});
  s.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

  // Resolves the caller to an annotator id, or answers 401/403 and returns nullopt.
  auto annotator = [this](const httplib::Request& req, httplib::Response& res) -> std::optional<std::string> {
    auto who = auth_.annotator_for(bearer(req));
    if (!who) {
      send_error(res, 401, "missing or unknown annotator token");
      return std::nullopt;
    }
    if (req.has_param("annotator") && req.get_param_value("annotator") != *who) {
      send_error(res, 403, "token does not belong to annotator " + req.get_param_value("annotator"));
      return std::nullopt;
    }
    return who;
  };
  auto admin = [this](const httplib::Request& req, httplib::Response& res) {
    if (auth_.admin_token.empty() || bearer(req) != auth_.admin_token) {
      send_error(res, 401, "admin token required");
      return false;
    }
    return true;
  };
  // Runs a handler body, mapping domain errors to HTTP statuses.
  auto guarded = [](httplib::Response& res, const std::function<void()>& body) {
    try {
      body();
    } catch (const NotFoundError& e) {
      send_error(res, 404, e.what());
    } catch (const ParseError& e) {
      send_error(res, 400, e.what());
    } catch (const ConfigError& e) {
      send_error(res, 400, e.what());
    } catch (const Json::exception& e) {
      send_error(res, 400, std::string("invalid JSON body: ") + e.what());
    } catch (const std::exception& e) {
      spdlog::error("annotation service: {}", e.what());
      send_error(res, 500, "internal error");
    }
  };
  auto progress_json = [this](const std::string& batch, const std::string& who) {
    auto [done, total] = store_.progress(batch, who);
    return Json{{"done", done}, {"total", total}};
  };

  s.Get("/health", [](const httplib::Request&, httplib::Response& res) { send_json(res, 200, {{"status", "ok"}}); });

  s.Get(R"(/batches/([^/]+)/next)", [=, this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      if (!req.has_param("annotator")) {
        send_error(res, 400, "annotator query parameter is required");
        return;
      }
      auto who = annotator(req, res);
      if (!who) return;
      const std::string batch = req.matches[1];
      auto next = store_.next_task(batch, *who);
      Json body{{"progress", progress_json(batch, *who)}, {"task", nullptr}, {"done", !next.has_value()}};
      if (next) body["task"] = blind_task_view(*next, source_);
      send_json(res, 200, body);
    });
  });

  s.Get(R"(/tasks/([^/]+))", [=, this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      auto who = annotator(req, res);
      if (!who) return;
      auto task = store_.task(req.matches[1]);
      auto body = blind_task_view(task, source_);
      body["progress"] = progress_json(task.batch_id, *who);
      send_json(res, 200, body);
    });
  });

  s.Post(R"(/tasks/([^/]+)/verdict)", [=, this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      auto who = annotator(req, res);
      if (!who) return;
      auto body = Json::parse(req.body);
      if (body.contains("annotator") && body["annotator"].get<std::string>() != *who) {
        send_error(res, 403, "token does not belong to annotator " + body["annotator"].get<std::string>());
        return;
      }
      const auto side = parse_side_verdict(body.at("side").get<std::string>());
      const std::string task_id = req.matches[1];
      auto rec = store_.submit(task_id, *who, side, clock_());
      auto task = store_.task(task_id);
      send_json(res, 200,
                {{"task_id", task_id}, {"side", std::string(to_string(side))}, {"submitted_at", rec.submitted_at},
                 {"progress", progress_json(task.batch_id, *who)}});
    });
  });

  s.Get(R"(/batches/([^/]+)/export)", [=, this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      if (!admin(req, res)) return;
      auto records = store_.export_batch(req.matches[1]);
      if (records.empty()) res.set_header("X-Escjudge-Warning", "batch has no submitted verdicts");
      res.status = 200;
      res.set_content(serialize_annotations(records), "application/x-ndjson");
    });
  });

  s.Post("/batches", [=, this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      if (!admin(req, res)) return;
      auto body = Json::parse(req.body);
      auto tasks = store_.create_batch(body.at("batch_id").get<std::string>(),
                                       body.at("pair_ids").get<std::vector<std::string>>(), rubric_, source_,
                                       body.value("seed", std::uint64_t{0}));
      send_json(res, 201, {{"batch_id", body["batch_id"]}, {"tasks", tasks.size()}});
    });
  });
}

int AnnotationServer::start(const std::string& host, int port) {
  int bound = port == 0 ? server_->bind_to_any_port(host) : (server_->bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw Error("cannot bind annotation service to " + host + ":" + std::to_string(port));
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return bound;
}

void AnnotationServer::listen(const std::string& host, int port) {
  if (!server_->listen(host, port)) throw Error("cannot serve on " + host + ":" + std::to_string(port));
}

void AnnotationServer::stop() {
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace escjudge
