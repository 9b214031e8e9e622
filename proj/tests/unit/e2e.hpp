#pragma once

// Offline replay of the shipped fixture experiment.

#include <chrono>
#include <filesystem>
#include <map>
#include <string>

#include "escjudge/experiment.hpp"
#include "support.hpp"

namespace testing {

struct ReplayOutcome {
  escjudge::RunResult result;
  std::size_t triples = 0;
  std::size_t judgment_records = 0;
  std::map<std::string, std::string> tree;
  double seconds = 0;
};

inline escjudge::ExperimentConfig fixture_config(const std::filesystem::path& out_root) {
  auto cfg = escjudge::ExperimentConfig::load(fixture_dir() / "e2e" / "experiment.json");
  cfg.output_root = out_root;
  return cfg;
}

// Runs the fixture into a clean `out_root` and snapshots everything written.
inline ReplayOutcome replay_fixture(const std::filesystem::path& out_root) {
  std::filesystem::remove_all(out_root);
  auto cfg = fixture_config(out_root);
  // No provider may be reachable: replay must be served from the cassettes alone.
  escjudge::RunOptions opts;
  opts.registry = std::make_shared<escjudge::ProviderRegistry>();
  const auto start = std::chrono::steady_clock::now();
  ReplayOutcome o;
  o.result = escjudge::run_experiment(cfg, opts);
  o.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const auto paths = escjudge::ExperimentPaths::of(cfg);
  for (const auto& t : escjudge::enumerate_triples(cfg)) {
    ++o.triples;
    if (std::filesystem::exists(paths.judgment(t.pair_id)))
      o.judgment_records += escjudge::parse_judgments(escjudge::read_file(paths.judgment(t.pair_id))).size();
  }
  o.tree = snapshot_tree(out_root);
  return o;
}

}  // namespace testing
