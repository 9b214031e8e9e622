#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "escjudge/aggregator.hpp"
#include "escjudge/dialogue_engine.hpp"
#include "escjudge/judge.hpp"
#include "escjudge/llm_gateway.hpp"
#include "escjudge/role_builder.hpp"

namespace escjudge {

struct ExperimentConfig {
  std::string experiment_id;
  std::uint64_t seed = 0;
  int role_count = 25;
  std::vector<AgentConfig> agents;
  // Empty means all unordered pairs in declaration order.
  std::vector<std::pair<std::string, std::string>> pairings;
  SessionSettings session;
  RoleBuilderConfig role_builder;
  JudgeConfig judge;
  AggregationConfig aggregation;
  TiePolicy tie_policy = TiePolicy::kEitherSide;
  GatewayMode mode = GatewayMode::kReplay;
  std::filesystem::path output_root = "out";
  // Defaults to <output_root>/cassettes/<experiment_id>.
  std::filesystem::path cassette_dir;
  std::filesystem::path asset_dir;
  std::optional<std::filesystem::path> eoc_model;
  std::optional<std::filesystem::path> annotations;
  int parallelism = 4;

  // Throws ConfigError naming the broken invariant.
  void validate() const;
  Json to_json() const;
  // Relative paths resolve against `base_dir`.
  static ExperimentConfig from_json(const Json& j, const std::filesystem::path& base_dir = {});
  static ExperimentConfig load(const std::filesystem::path& file);
};

std::vector<std::pair<std::string, std::string>> all_unordered_pairs(const std::vector<AgentConfig>& agents);
std::vector<std::pair<std::string, std::string>> effective_pairings(const ExperimentConfig& cfg);

struct Triple {
  std::string role_id;
  std::string agent_a;
  std::string agent_b;
  std::string pair_id;
};

// role_count x |pairings| triples; touches neither providers nor the filesystem.
std::vector<Triple> enumerate_triples(const ExperimentConfig& cfg);

struct ExperimentPaths {
  std::filesystem::path experiment_dir;  // config copy and ledger
  std::filesystem::path roles;
  std::filesystem::path transcripts;
  std::filesystem::path judgments;
  std::filesystem::path reports;
  std::filesystem::path cassettes;

  static ExperimentPaths of(const ExperimentConfig& cfg);
  std::filesystem::path ledger() const { return experiment_dir / "ledger.json"; }
  std::filesystem::path role(const std::string& role_id) const;
  std::filesystem::path transcript(const std::string& role_id, const std::string& agent_id) const;
  std::filesystem::path judgment(const std::string& pair_id) const;
};

enum class Stage { kRoles, kSessions, kJudgments, kReports };

std::string_view to_string(Stage s);

// Stage -> item key -> input content hash. A ledger entry means the item's output
// was written from inputs with that hash.
class Ledger {
 public:
  static Ledger load(const std::filesystem::path& path);
  bool done(Stage s, const std::string& key, const std::string& input_hash) const;
  void mark(Stage s, const std::string& key, const std::string& input_hash);
  std::size_t count(Stage s) const;
  void save(const std::filesystem::path& path) const;
  Json to_json() const { return data_; }

 private:
  Json data_ = Json::object();
};

struct StageSummary {
  Stage stage = Stage::kRoles;
  std::size_t total = 0;
  std::size_t executed = 0;
  std::size_t reused = 0;
  std::size_t failed = 0;
  std::vector<std::string> errors;
};

struct RunResult {
  int exit_code = 0;  // 0 success, 1 stage failure, 2 configuration error
  std::vector<StageSummary> stages;
  std::vector<std::filesystem::path> reports;
  std::string message;
};

struct RunOptions {
  std::shared_ptr<ProviderRegistry> registry;  // defaults to a fresh registry
  RetryPolicy retry;
  bool dry_run = false;
  std::vector<Stage> stages = {Stage::kRoles, Stage::kSessions, Stage::kJudgments, Stage::kReports};
};

RunResult run_experiment(const ExperimentConfig& cfg, const RunOptions& options = {});

struct StageStatus {
  Stage stage;
  std::size_t done = 0;
  std::size_t total = 0;
};

// Reads the ledger of an existing experiment; NotFoundError for an unknown one.
std::vector<StageStatus> experiment_status(const ExperimentConfig& cfg);
std::string format_status(const std::string& experiment_id, const std::vector<StageStatus>& status);

Json to_json(const RoleBuilderConfig& c);
RoleBuilderConfig role_builder_config_from_json(const Json& j);

}  // namespace escjudge
