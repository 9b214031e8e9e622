#include <csignal>
#include <iostream>

#include <spdlog/spdlog.h>

#include "CLI11.hpp"

#include "escjudge/annotation_service.hpp"
#include "escjudge/errors.hpp"
#include "escjudge/eoc_detector.hpp"
#include "escjudge/experiment.hpp"
#include "escjudge/synthetic_dialogues.hpp"

namespace fs = std::filesystem;
using namespace escjudge;

namespace {

struct ExperimentFlags {
  std::string config;
  std::string mode;
  std::optional<std::uint64_t> seed;
  std::string out;
  int parallelism = 0;
};

void add_experiment_flags(CLI::App* cmd, ExperimentFlags& f) {
  cmd->add_option("--config", f.config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--mode", f.mode, "live, record or replay (overrides the config)")
      ->check(CLI::IsMember({"live", "record", "replay"}));
  cmd->add_option("--seed", f.seed, "Base seed (overrides the config)");
  cmd->add_option("--out", f.out, "Output root (overrides the config)");
  cmd->add_option("--parallelism", f.parallelism, "Concurrent items per stage");
}

ExperimentConfig load_config(const ExperimentFlags& f) {
  Json j;
  try {
    j = Json::parse(read_file(f.config));
  } catch (const Json::exception& e) {
    throw ConfigError("config " + f.config + " is not valid JSON: " + e.what());
  }
  if (!f.mode.empty()) j["mode"] = f.mode;
  if (f.seed) j["seed"] = *f.seed;
  if (!f.out.empty()) j["output_root"] = fs::absolute(f.out).string();
  if (f.parallelism > 0) j["parallelism"] = f.parallelism;
  return ExperimentConfig::from_json(j, fs::absolute(f.config).parent_path());
}

int report(const RunResult& r) {
  for (const auto& s : r.stages)
    std::cout << to_string(s.stage) << ": " << s.executed << " executed, " << s.reused << " reused, " << s.failed
              << " failed (" << s.total << " items)\n";
  for (const auto& p : r.reports) std::cout << "wrote " << p.string() << "\n";
  (r.exit_code == 0 ? std::cout : std::cerr) << r.message << "\n";
  return r.exit_code;
}

std::vector<Dialogue> load_corpus(const std::vector<std::string>& corpora, const std::vector<std::string>& dirs) {
  std::vector<Dialogue> out;
  for (const auto& c : corpora) {
    auto d = parse_dialogues(read_file(c));
    out.insert(out.end(), d.begin(), d.end());
  }
  for (const auto& dir : dirs)
    for (const auto& t : load_transcripts(dir)) out.push_back(to_dialogue(t));
  if (out.empty()) throw ConfigError("no dialogues given (use --corpus or --transcripts)");
  return out;
}

AnnotationServer* g_server = nullptr;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pairwise evaluation of emotional-support agents"};
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "Debug logging");

  ExperimentFlags ef;
  bool dry_run = false;
  auto* run = app.add_subcommand("run", "Run every stage of an experiment (resumable)");
  add_experiment_flags(run, ef);
  run->add_flag("--dry-run", dry_run, "Only enumerate triples; no provider calls, no files");
  auto* build_roles = app.add_subcommand("build-roles", "Build help-seeker roles");
  add_experiment_flags(build_roles, ef);
  auto* simulate = app.add_subcommand("simulate", "Simulate one session per (role, agent)");
  add_experiment_flags(simulate, ef);
  auto* judge = app.add_subcommand("judge", "Judge every (role, pairing) triple");
  add_experiment_flags(judge, ef);
  std::string annotations;
  auto* aggregate = app.add_subcommand("aggregate", "Write win-rate and match-rate reports");
  add_experiment_flags(aggregate, ef);
  aggregate->add_option("--annotations", annotations, "Human annotation export (JSONL)")->check(CLI::ExistingFile);
  auto* status = app.add_subcommand("status", "Show the stage ledger of an experiment");
  add_experiment_flags(status, ef);

  std::string store_dir, transcripts_dir, host = "127.0.0.1", batch_id, auth_file, asset_dir;
  int port = 8080;
  std::size_t sample = 0;
  std::uint64_t batch_seed = 0;
  std::vector<std::string> pair_ids;
  auto* serve = app.add_subcommand("serve-annotation", "Serve transcript pairs to human annotators");
  serve->add_option("--store", store_dir, "Annotation store directory")->required();
  serve->add_option("--transcripts", transcripts_dir, "transcripts/<experiment> directory")
      ->required()
      ->check(CLI::ExistingDirectory);
  serve->add_option("--host", host, "Bind address");
  serve->add_option("--port", port, "Port");
  serve->add_option("--auth", auth_file, "JSON with annotators {id: token} and admin_token (default: environment)")
      ->check(CLI::ExistingFile);
  serve->add_option("--create-batch", batch_id, "Create this batch before serving");
  serve->add_option("--pairs", pair_ids, "Pair ids for the new batch");
  serve->add_option("--sample", sample, "Sample this many pair ids from the transcripts instead");
  serve->add_option("--batch-seed", batch_seed, "Seed for pair sampling and left/right order");
  serve->add_option("--assets", asset_dir, "Asset directory (default: built-in)");

  std::string export_out;
  auto* export_cmd = app.add_subcommand("export-annotations", "Write a batch's annotation records as JSONL");
  export_cmd->add_option("--store", store_dir, "Annotation store directory")->required();
  export_cmd->add_option("--batch", batch_id, "Batch id")->required();
  export_cmd->add_option("--out", export_out, "Output file")->required();

  auto* eoc = app.add_subcommand("eoc", "End-of-conversation detector");
  eoc->require_subcommand(1);
  std::size_t count = 1000;
  std::uint64_t eoc_seed = 0;
  std::string corpus_out, model_path, text;
  std::vector<std::string> corpora, corpus_dirs;
  double lambda = 1.0, max_df = 0.4, train_fraction = 0.8;
  auto* synth = eoc->add_subcommand("synth", "Generate a synthetic dialogue corpus");
  synth->add_option("--count", count, "Dialogues");
  synth->add_option("--seed", eoc_seed, "Seed");
  synth->add_option("--out", corpus_out, "Output JSONL")->required();
  auto* train_cmd = eoc->add_subcommand("train", "Train on weakly labelled dialogues");
  train_cmd->add_option("--corpus", corpora, "Dialogue JSONL files")->check(CLI::ExistingFile);
  train_cmd->add_option("--transcripts", corpus_dirs, "Transcript directories")->check(CLI::ExistingDirectory);
  train_cmd->add_option("--out", model_path, "Model JSON")->required();
  train_cmd->add_option("--lambda", lambda, "L2 strength");
  train_cmd->add_option("--max-df", max_df, "Drop n-grams in more than this share of windows");
  train_cmd->add_option("--seed", eoc_seed, "Seed");
  train_cmd->add_option("--train-fraction", train_fraction, "Share of dialogues used for training; rest is evaluated");
  auto* eval_cmd = eoc->add_subcommand("eval", "Evaluate against weak labels");
  eval_cmd->add_option("--model", model_path, "Model JSON")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--corpus", corpora, "Dialogue JSONL files")->check(CLI::ExistingFile);
  eval_cmd->add_option("--transcripts", corpus_dirs, "Transcript directories")->check(CLI::ExistingDirectory);
  auto* classify_cmd = eoc->add_subcommand("classify", "Score one two-utterance window");
  classify_cmd->add_option("--model", model_path, "Model JSON")->required()->check(CLI::ExistingFile);
  classify_cmd->add_option("text", text, "Window text (two utterances, newline separated)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }
  spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::warn);

  try {
    auto stage_run = [&](std::vector<Stage> stages) {
      auto cfg = load_config(ef);
      if (!annotations.empty()) cfg.annotations = fs::absolute(annotations);
      RunOptions opts;
      opts.stages = std::move(stages);
      opts.dry_run = dry_run;
      return report(run_experiment(cfg, opts));
    };
    if (*run) return stage_run({Stage::kRoles, Stage::kSessions, Stage::kJudgments, Stage::kReports});
    if (*build_roles) return stage_run({Stage::kRoles});
    if (*simulate) return stage_run({Stage::kSessions});
    if (*judge) return stage_run({Stage::kJudgments});
    if (*aggregate) return stage_run({Stage::kReports});
    if (*status) {
      auto cfg = load_config(ef);
      std::cout << format_status(cfg.experiment_id, experiment_status(cfg));
      return 0;
    }

    if (*serve) {
      auto catalogs = load_catalogs(asset_dir.empty() ? default_asset_dir() : fs::path(asset_dir));
      auto auth = auth_file.empty() ? AnnotationAuth::from_env() : AnnotationAuth::from_json(Json::parse(read_file(auth_file)));
      if (auth.annotator_tokens.empty()) throw ConfigError("no annotator tokens configured (ESC_ANNOTATOR_TOKENS or --auth)");
      AnnotationStore store(store_dir);
      auto source = transcript_dir_source(transcripts_dir);
      if (!batch_id.empty()) {
        if (sample > 0) {
          std::set<std::string> ids;
          std::map<std::string, std::vector<std::string>> by_role;
          for (const auto& t : load_transcripts(transcripts_dir))
            if (t.complete()) by_role[t.role_id].push_back(t.agent.agent_id);
          for (const auto& [role, agents] : by_role)
            for (std::size_t i = 0; i < agents.size(); ++i)
              for (std::size_t k = i + 1; k < agents.size(); ++k) ids.insert(pair_id_for(role, agents[i], agents[k]));
          pair_ids = sample_pairs({ids.begin(), ids.end()}, sample, batch_seed);
        }
        auto tasks = store.create_batch(batch_id, pair_ids, catalogs.rubric, source, batch_seed);
        std::cout << "batch " << batch_id << ": " << tasks.size() << " tasks\n";
      }
      AnnotationServer server(store, source, auth, catalogs.rubric);
      g_server = &server;
      std::signal(SIGINT, [](int) {
        if (g_server) g_server->stop();
      });
      std::cout << "serving on http://" << host << ":" << port << std::endl;
      server.listen(host, port);
      return 0;
    }

    if (*export_cmd) {
      AnnotationStore store(store_dir);
      auto records = store.export_batch(batch_id);
      write_file(export_out, serialize_annotations(records));
      if (records.empty()) std::cerr << "warning: batch " << batch_id << " has no submitted verdicts\n";
      std::cout << records.size() << " records written to " << export_out << "\n";
      return 0;
    }

    if (*synth) {
      write_file(corpus_out, serialize_dialogues(generate_synthetic_dialogues(count, eoc_seed)));
      std::cout << count << " dialogues written to " << corpus_out << "\n";
      return 0;
    }
    if (*train_cmd || *eval_cmd) {
      auto catalogs = load_catalogs(default_asset_dir());
      auto dialogues = load_corpus(corpora, corpus_dirs);
      if (*train_cmd) {
        FeaturizerConfig fc;
        fc.max_df = max_df;
        fc.stopwords = catalogs.stopwords;
        TrainConfig tc;
        tc.l2_lambda = lambda;
        tc.seed = eoc_seed;
        auto [train_set, test_set] = split_by_dialogue(dialogues, train_fraction, eoc_seed);
        auto model = train_on_dialogues(train_set, catalogs.farewells, fc, tc);
        model.save(model_path);
        std::cout << "trained: " << model.report.iterations << " iterations, |g| = " << model.report.gradient_norm
                  << (model.report.converged ? "" : " (not converged)") << "\n";
        if (!test_set.empty())
          std::cout << "held-out: " << evaluate(model, weak_label_all(test_set, catalogs.farewells)).to_json().dump()
                    << "\n";
        return 0;
      }
      auto model = EocModel::load(model_path);
      std::cout << evaluate(model, weak_label_all(dialogues, catalogs.farewells)).to_json().dump(2) << "\n";
      return 0;
    }
    if (*classify_cmd) {
      auto model = EocModel::load(model_path);
      auto c = classify(model, text);
      std::cout << Json{{"probability", c.probability}, {"end_of_conversation", c.end_of_conversation}}.dump() << "\n";
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const CatalogError& e) {
    std::cerr << "asset error: " << e.what() << "\n";
    return 2;
  } catch (const NotFoundError& e) {
    std::cerr << "not found: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
