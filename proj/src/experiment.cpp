#include "escjudge/experiment.hpp"

#include <atomic>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <spdlog/spdlog.h>

#include "escjudge/errors.hpp"
#include "escjudge/eoc_detector.hpp"

namespace fs = std::filesystem;

namespace escjudge {

Json to_json(const RoleBuilderConfig& c) {
  return {{"model_id", c.model_id},       {"temperature", c.temperature},
          {"top_p", c.top_p},             {"max_tokens", c.max_tokens},
          {"nf_total", c.nf_total},       {"no_total", c.no_total},
          {"total_events", c.total_events}, {"sub_events", c.sub_events},
          {"max_life_events", c.max_life_events}, {"traits_per_subcategory", c.traits_per_subcategory},
          {"parse_retries", c.parse_retries}};
}

RoleBuilderConfig role_builder_config_from_json(const Json& j) {
  RoleBuilderConfig c;
  c.model_id = j.value("model_id", c.model_id);
  c.temperature = j.value("temperature", c.temperature);
  c.top_p = j.value("top_p", c.top_p);
  c.max_tokens = j.value("max_tokens", c.max_tokens);
  c.nf_total = j.value("nf_total", c.nf_total);
  c.no_total = j.value("no_total", c.no_total);
  c.total_events = j.value("total_events", c.total_events);
  c.sub_events = j.value("sub_events", c.sub_events);
  c.max_life_events = j.value("max_life_events", c.max_life_events);
  c.traits_per_subcategory = j.value("traits_per_subcategory", c.traits_per_subcategory);
  c.parse_retries = j.value("parse_retries", c.parse_retries);
  return c;
}

void ExperimentConfig::validate() const {
  if (experiment_id.empty()) throw ConfigError("experiment_id is empty");
  if (experiment_id.find('/') != std::string::npos || experiment_id.find("..") != std::string::npos)
    throw ConfigError("experiment_id must be a plain name: " + experiment_id);
  if (role_count <= 0) throw ConfigError("role_count must be > 0");
  if (agents.size() < 2) throw ConfigError("at least two agent configs are required");
  if (parallelism < 1) throw ConfigError("parallelism must be >= 1");
  if (session.max_exchanges < 1) throw ConfigError("session.max_exchanges must be >= 1");
  std::set<std::string> ids;
  for (const auto& a : agents) {
    a.validate();
    if (a.agent_id.empty() || a.agent_id.find("__") != std::string::npos || a.agent_id.find('/') != std::string::npos)
      throw ConfigError("agent_id must be non-empty and contain neither '__' nor '/': " + a.agent_id);
    if (!ids.insert(a.agent_id).second) throw ConfigError("duplicate agent_id: " + a.agent_id);
  }
  std::set<std::pair<std::string, std::string>> seen;
  for (const auto& [a, b] : pairings) {
    if (!ids.count(a) || !ids.count(b)) throw ConfigError("pairing references an undeclared agent: " + a + " vs " + b);
    if (a == b) throw ConfigError("pairing compares an agent with itself: " + a);
    if (seen.count({a, b}) || seen.count({b, a})) throw ConfigError("duplicate pairing: " + a + " vs " + b);
    seen.insert({a, b});
  }
  if (judge.samples_per_order < 1) throw ConfigError("judge.samples_per_order must be >= 1");
}

Json ExperimentConfig::to_json() const {
  Json j;
  j["experiment_id"] = experiment_id;
  j["seed"] = seed;
  j["role_count"] = role_count;
  j["agents"] = Json::array();
  for (const auto& a : agents) j["agents"].push_back(a.to_json());
  if (pairings.empty()) {
    j["pairings"] = "all";
  } else {
    j["pairings"] = Json::array();
    for (const auto& [a, b] : pairings) j["pairings"].push_back({a, b});
  }
  j["session"] = session.to_json();
  j["role_builder"] = escjudge::to_json(role_builder);
  j["judge"] = judge.to_json();
  j["aggregation"] = {{"denominator", aggregation.denominator == Denominator::kFull ? "full" : "present"},
                      {"tie_policy", std::string(to_string(tie_policy))}};
  j["mode"] = std::string(to_string(mode));
  j["output_root"] = output_root.string();
  j["cassette_dir"] = cassette_dir.string();
  j["asset_dir"] = asset_dir.string();
  if (eoc_model) j["eoc_model"] = eoc_model->string();
  if (annotations) j["annotations"] = annotations->string();
  j["parallelism"] = parallelism;
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const Json& j, const fs::path& base_dir) {
  auto resolve = [&](const std::string& p) -> fs::path {
    fs::path path(p);
    return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
  };
  ExperimentConfig c;
  try {
    c.experiment_id = j.at("experiment_id").get<std::string>();
    c.seed = j.value("seed", std::uint64_t{0});
    c.role_count = j.value("role_count", c.role_count);
    for (const auto& a : j.at("agents")) c.agents.push_back(AgentConfig::from_json(a));
    if (j.contains("pairings") && j["pairings"].is_array())
      for (const auto& p : j["pairings"]) c.pairings.emplace_back(p.at(0).get<std::string>(), p.at(1).get<std::string>());
    else if (j.contains("pairings") && j["pairings"] != "all")
      throw ConfigError("pairings must be \"all\" or a list of [agent_a, agent_b]");
    if (j.contains("session")) c.session = SessionSettings::from_json(j["session"]);
    if (j.contains("role_builder")) c.role_builder = role_builder_config_from_json(j["role_builder"]);
    if (j.contains("judge")) c.judge = JudgeConfig::from_json(j["judge"]);
    if (j.contains("aggregation")) {
      const auto& a = j["aggregation"];
      auto denom = a.value("denominator", std::string("present"));
      if (denom == "full") c.aggregation.denominator = Denominator::kFull;
      else if (denom != "present") throw ConfigError("aggregation.denominator must be present or full");
      c.tie_policy = parse_tie_policy(a.value("tie_policy", std::string("either_side")));
    }
    c.mode = parse_mode(j.value("mode", std::string("replay")));
    c.output_root = resolve(j.value("output_root", std::string("out")));
    if (j.contains("cassette_dir") && !j["cassette_dir"].get<std::string>().empty())
      c.cassette_dir = resolve(j["cassette_dir"].get<std::string>());
    if (j.contains("asset_dir") && !j["asset_dir"].get<std::string>().empty())
      c.asset_dir = resolve(j["asset_dir"].get<std::string>());
    if (j.contains("eoc_model")) c.eoc_model = resolve(j["eoc_model"].get<std::string>());
    if (j.contains("annotations")) c.annotations = resolve(j["annotations"].get<std::string>());
    c.parallelism = j.value("parallelism", c.parallelism);
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("invalid experiment config: ") + e.what());
  }
  if (c.cassette_dir.empty()) c.cassette_dir = c.output_root / "cassettes" / c.experiment_id;
  return c;
}

ExperimentConfig ExperimentConfig::load(const fs::path& file) {
  Json j;
  try {
    j = Json::parse(read_file(file));
  } catch (const Json::exception& e) {
    throw ConfigError("config " + file.string() + " is not valid JSON: " + e.what());
  }
  return from_json(j, fs::absolute(file).parent_path());
}

std::vector<std::pair<std::string, std::string>> all_unordered_pairs(const std::vector<AgentConfig>& agents) {
  std::vector<std::pair<std::string, std::string>> out;
  for (std::size_t i = 0; i < agents.size(); ++i)
    for (std::size_t k = i + 1; k < agents.size(); ++k) out.emplace_back(agents[i].agent_id, agents[k].agent_id);
  return out;
}

std::vector<std::pair<std::string, std::string>> effective_pairings(const ExperimentConfig& cfg) {
  return cfg.pairings.empty() ? all_unordered_pairs(cfg.agents) : cfg.pairings;
}

std::vector<Triple> enumerate_triples(const ExperimentConfig& cfg) {
  std::vector<Triple> out;
  const auto pairings = effective_pairings(cfg);
  for (int i = 0; i < cfg.role_count; ++i) {
    const auto role_id = role_id_for_index(static_cast<std::size_t>(i));
    for (const auto& [a, b] : pairings) out.push_back({role_id, a, b, pair_id_for(role_id, a, b)});
  }
  return out;
}

ExperimentPaths ExperimentPaths::of(const ExperimentConfig& cfg) {
  ExperimentPaths p;
  p.experiment_dir = cfg.output_root / "experiments" / cfg.experiment_id;
  p.roles = cfg.output_root / "roles" / cfg.experiment_id;
  p.transcripts = cfg.output_root / "transcripts" / cfg.experiment_id;
  p.judgments = cfg.output_root / "judgments" / cfg.experiment_id;
  p.reports = cfg.output_root / "reports" / cfg.experiment_id;
  p.cassettes = cfg.cassette_dir.empty() ? cfg.output_root / "cassettes" / cfg.experiment_id : cfg.cassette_dir;
  return p;
}

fs::path ExperimentPaths::role(const std::string& role_id) const { return roles / (role_id + ".json"); }

fs::path ExperimentPaths::transcript(const std::string& role_id, const std::string& agent_id) const {
  return transcripts / role_id / (agent_id + ".jsonl");
}

fs::path ExperimentPaths::judgment(const std::string& pair_id) const { return judgments / (pair_id + ".jsonl"); }

std::string_view to_string(Stage s) {
  switch (s) {
    case Stage::kRoles: return "roles";
    case Stage::kSessions: return "sessions";
    case Stage::kJudgments: return "judgments";
    case Stage::kReports: return "reports";
  }
  return "?";
}

Ledger Ledger::load(const fs::path& path) {
  Ledger l;
  if (fs::exists(path)) {
    try {
      l.data_ = Json::parse(read_file(path));
    } catch (const Json::exception& e) {
      throw ParseError("corrupt ledger " + path.string() + ": " + e.what());
    }
  }
  return l;
}

bool Ledger::done(Stage s, const std::string& key, const std::string& input_hash) const {
  auto stage = data_.find(std::string(to_string(s)));
  if (stage == data_.end()) return false;
  auto it = stage->find(key);
  return it != stage->end() && *it == input_hash;
}

void Ledger::mark(Stage s, const std::string& key, const std::string& input_hash) {
  data_[std::string(to_string(s))][key] = input_hash;
}

std::size_t Ledger::count(Stage s) const {
  auto stage = data_.find(std::string(to_string(s)));
  return stage == data_.end() ? 0 : stage->size();
}

void Ledger::save(const fs::path& path) const { write_file(path, data_.dump(2) + "\n"); }

namespace {

// Runs fn(i) for i in [0, n) on up to `workers` threads. Exceptions stay inside fn.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
  const auto threads = std::min<std::size_t>(static_cast<std::size_t>(workers), n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::jthread> pool;
  for (std::size_t t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) fn(i);
    });
}

std::string hash_parts(std::initializer_list<std::string_view> parts) {
  std::string joined;
  for (auto p : parts) {
    joined += std::to_string(p.size());
    joined += ':';
    joined += p;
  }
  return sha256_hex(joined);
}

std::string file_hash(const fs::path& p) { return fs::exists(p) ? sha256_hex(read_file(p)) : std::string("absent"); }

class StageRunner {
 public:
  StageRunner(Stage stage, Ledger& ledger, const fs::path& ledger_path)
      : ledger_(ledger), ledger_path_(ledger_path) {
    summary_.stage = stage;
  }

  // `work` writes the item's output and returns true on success.
  void item(const std::string& key, const std::string& input_hash, const fs::path& output,
            const std::function<void()>& work) {
    {
      std::lock_guard lock(mu_);
      ++summary_.total;
      if (ledger_.done(summary_.stage, key, input_hash) && fs::exists(output)) {
        ++summary_.reused;
        return;
      }
    }
    try {
      work();
      std::lock_guard lock(mu_);
      ledger_.mark(summary_.stage, key, input_hash);
      ledger_.save(ledger_path_);
      ++summary_.executed;
    } catch (const std::exception& e) {
      std::lock_guard lock(mu_);
      ++summary_.failed;
      summary_.errors.push_back(key + ": " + e.what());
      spdlog::error("{} {}: {}", to_string(summary_.stage), key, e.what());
    }
  }

  StageSummary summary() {
    std::lock_guard lock(mu_);
    std::sort(summary_.errors.begin(), summary_.errors.end());
    return summary_;
  }

 private:
  std::mutex mu_;
  Ledger& ledger_;
  fs::path ledger_path_;
  StageSummary summary_;
};

std::vector<std::string> session_agents(const ExperimentConfig& cfg) {
  std::set<std::string> used;
  for (const auto& [a, b] : effective_pairings(cfg)) {
    used.insert(a);
    used.insert(b);
  }
  std::vector<std::string> out;
  for (const auto& a : cfg.agents)
    if (used.count(a.agent_id)) out.push_back(a.agent_id);
  return out;
}

const AgentConfig& agent_by_id(const ExperimentConfig& cfg, const std::string& id) {
  for (const auto& a : cfg.agents)
    if (a.agent_id == id) return a;
  throw ConfigError("unknown agent: " + id);
}

std::string rubric_fingerprint(const Rubric& r) {
  std::string s;
  for (const auto& d : r.dimensions) s += d.name + "\t" + std::string(to_string(d.category)) + "\t" + d.definition + "\n";
  return s;
}

}  // namespace

RunResult run_experiment(const ExperimentConfig& cfg, const RunOptions& options) {
  RunResult result;
  std::vector<Triple> triples;
  try {
    cfg.validate();
    triples = enumerate_triples(cfg);
  } catch (const ConfigError& e) {
    result.exit_code = 2;
    result.message = e.what();
    return result;
  }
  if (options.dry_run) {
    result.message = std::to_string(triples.size()) + " triples (" + std::to_string(cfg.role_count) + " roles x " +
                     std::to_string(effective_pairings(cfg).size()) + " pairings)";
    return result;
  }

  Catalogs catalogs;
  std::optional<EocModel> detector;
  try {
    catalogs = load_catalogs(cfg.asset_dir.empty() ? default_asset_dir() : cfg.asset_dir);
    if (cfg.eoc_model) detector = EocModel::load(*cfg.eoc_model);
  } catch (const Error& e) {
    result.exit_code = 2;
    result.message = e.what();
    return result;
  }

  const auto paths = ExperimentPaths::of(cfg);
  fs::create_directories(paths.experiment_dir);
  write_file(paths.experiment_dir / "config.json", cfg.to_json().dump(2) + "\n");
  Ledger ledger = Ledger::load(paths.ledger());
  auto registry = options.registry ? options.registry : std::make_shared<ProviderRegistry>();
  Gateway gateway(cfg.mode, registry, options.retry, cfg.parallelism);

  auto wants = [&](Stage s) {
    return std::find(options.stages.begin(), options.stages.end(), s) != options.stages.end();
  };
  auto finish_stage = [&](StageRunner& runner) {
    auto s = runner.summary();
    spdlog::info("stage {}: {} executed, {} reused, {} failed of {}", to_string(s.stage), s.executed, s.reused,
                 s.failed, s.total);
    result.stages.push_back(s);
    if (s.failed == 0) return true;
    result.exit_code = 1;
    result.message = "stage " + std::string(to_string(s.stage)) + " failed for " + std::to_string(s.failed) +
                     " item(s); first: " + s.errors.front();
    return false;
  };

  try {
    if (wants(Stage::kRoles)) {
      StageRunner runner(Stage::kRoles, ledger, paths.ledger());
      const auto builder_json = escjudge::to_json(cfg.role_builder).dump();
      parallel_for(static_cast<std::size_t>(cfg.role_count), cfg.parallelism, [&](std::size_t i) {
        const auto role_id = role_id_for_index(i);
        const auto seed = derive_seed(cfg.seed, i);
        const auto hash = hash_parts({std::to_string(seed), builder_json, catalogs.version});
        runner.item(role_id, hash, paths.role(role_id), [&] {
          auto session = gateway.open_session(paths.cassettes / "roles" / (role_id + ".jsonl"));
          auto role = build_role(role_id, seed, catalogs, *session, cfg.role_builder);
          write_file(paths.role(role_id), serialize_role(role));
        });
      });
      if (!finish_stage(runner)) return result;
    }

    if (wants(Stage::kSessions)) {
      StageRunner runner(Stage::kSessions, ledger, paths.ledger());
      const auto agents = session_agents(cfg);
      const auto session_json = cfg.session.to_json().dump();
      const auto detector_hash = cfg.eoc_model ? file_hash(*cfg.eoc_model) : std::string("none");
      const std::size_t n = static_cast<std::size_t>(cfg.role_count) * agents.size();
      parallel_for(n, cfg.parallelism, [&](std::size_t i) {
        const auto role_id = role_id_for_index(i / agents.size());
        const auto& agent = agent_by_id(cfg, agents[i % agents.size()]);
        const auto key = session_id_for(role_id, agent.agent_id);
        const auto role_text = read_file(paths.role(role_id));
        const auto hash = hash_parts({role_text, agent.to_json().dump(), session_json, detector_hash});
        runner.item(key, hash, paths.transcript(role_id, agent.agent_id), [&] {
          auto role = parse_role(role_text);
          auto session = gateway.open_session(paths.cassettes / "sessions" / (key + ".jsonl"));
          auto t = run_session(role, agent, detector ? &*detector : nullptr, *session, catalogs, cfg.session);
          write_file(paths.transcript(role_id, agent.agent_id), serialize_transcript(t));
          if (!t.complete()) throw ProviderError("session ended by provider failure: " + t.failure_cause, 0, false);
        });
      });
      if (!finish_stage(runner)) return result;
    }

    if (wants(Stage::kJudgments)) {
      StageRunner runner(Stage::kJudgments, ledger, paths.ledger());
      const auto judge_json = cfg.judge.to_json().dump();
      const auto rubric_text = rubric_fingerprint(catalogs.rubric);
      parallel_for(triples.size(), cfg.parallelism, [&](std::size_t i) {
        const auto& tr = triples[i];
        const auto text_a = read_file(paths.transcript(tr.role_id, tr.agent_a));
        const auto text_b = read_file(paths.transcript(tr.role_id, tr.agent_b));
        const auto hash = hash_parts({text_a, text_b, judge_json, rubric_text});
        runner.item(tr.pair_id, hash, paths.judgment(tr.pair_id), [&] {
          auto session = gateway.open_session(paths.cassettes / "judge" / (tr.pair_id + ".jsonl"));
          auto records = judge_pair(tr.pair_id, parse_transcript(text_a), parse_transcript(text_b), catalogs.rubric,
                                    cfg.judge, *session, catalogs);
          write_file(paths.judgment(tr.pair_id), serialize_judgments(records));
        });
      });
      if (!finish_stage(runner)) return result;
    }

    if (wants(Stage::kReports)) {
      StageRunner runner(Stage::kReports, ledger, paths.ledger());
      std::string judged_text;
      for (const auto& tr : triples) judged_text += read_file(paths.judgment(tr.pair_id));
      const auto annotations_hash = cfg.annotations ? file_hash(*cfg.annotations) : std::string("none");
      const auto agg_json = cfg.to_json()["aggregation"].dump();
      const auto hash = hash_parts({judged_text, agg_json, annotations_hash});
      std::vector<fs::path> outputs = {paths.reports / "winrates.csv", paths.reports / "role_scores.csv",
                                       paths.reports / "winrates.svg"};
      if (cfg.annotations)
        for (const char* f : {"match_rates_fine.csv", "match_rates_coarse.csv", "match_rates_aggregated.csv"})
          outputs.push_back(paths.reports / f);
      runner.item("reports", hash, outputs.front(), [&] {
        auto records = parse_judgments(judged_text);
        auto reports = winrate_report(records, catalogs.rubric, cfg.aggregation);
        write_file(outputs[0], winrates_csv(reports));
        write_file(outputs[1], role_scores_csv(reports));
        write_file(outputs[2], winrates_svg(reports));
        if (cfg.annotations) {
          auto human = parse_annotations(read_file(*cfg.annotations));
          auto rates = match_rate_report(records, human, catalogs.rubric, cfg.tie_policy);
          write_file(outputs[3], match_rates_fine_csv(rates, catalogs.rubric));
          write_file(outputs[4], match_rates_coarse_csv(rates));
          write_file(outputs[5], match_rates_aggregated_csv(rates));
        }
      });
      if (!finish_stage(runner)) return result;
      result.reports = outputs;
    }
  } catch (const Error& e) {
    // Inputs of a stage missing because an earlier stage was not run.
    result.exit_code = 1;
    result.message = e.what();
    return result;
  }

  const auto stats = gateway.stats();
  result.message = "ok: " + std::to_string(stats.provider_calls) + " provider calls, " +
                   std::to_string(stats.replayed) + " replayed";
  return result;
}

std::vector<StageStatus> experiment_status(const ExperimentConfig& cfg) {
  const auto paths = ExperimentPaths::of(cfg);
  if (!fs::exists(paths.experiment_dir)) throw NotFoundError("unknown experiment: " + cfg.experiment_id);
  const auto ledger = Ledger::load(paths.ledger());
  const auto roles = static_cast<std::size_t>(cfg.role_count);
  return {{Stage::kRoles, ledger.count(Stage::kRoles), roles},
          {Stage::kSessions, ledger.count(Stage::kSessions), roles * session_agents(cfg).size()},
          {Stage::kJudgments, ledger.count(Stage::kJudgments), roles * effective_pairings(cfg).size()},
          {Stage::kReports, ledger.count(Stage::kReports), 1}};
}

std::string format_status(const std::string& experiment_id, const std::vector<StageStatus>& status) {
  std::ostringstream out;
  out << "experiment " << experiment_id << "\n";
  for (const auto& s : status) out << "  " << to_string(s.stage) << ": " << s.done << "/" << s.total << "\n";
  return out.str();
}

}  // namespace escjudge
