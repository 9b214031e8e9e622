#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "escjudge/catalogs.hpp"
#include "escjudge/eoc_detector.hpp"
#include "escjudge/llm_gateway.hpp"
#include "escjudge/role_builder.hpp"

namespace escjudge {

enum class GuidelineMode { kWithHill, kWithoutHill };

std::string_view to_string(GuidelineMode m);
GuidelineMode parse_guideline_mode(std::string_view s);

struct AgentConfig {
  std::string agent_id;
  std::string model_id;
  GuidelineMode guideline_mode = GuidelineMode::kWithHill;
  std::string system_template_id;

  // Fills system_template_id from the guideline mode.
  static AgentConfig make(std::string agent_id, std::string model_id, GuidelineMode mode);
  // Throws ConfigError when the template does not belong to the guideline mode.
  void validate() const;

  Json to_json() const;
  static AgentConfig from_json(const Json& j);
  bool operator==(const AgentConfig&) const = default;
};

enum class Speaker { kSeeker, kSupporter };
std::string_view to_string(Speaker s);
Speaker parse_speaker(std::string_view s);

struct Turn {
  int index = 0;
  Speaker speaker = Speaker::kSeeker;
  std::string text;
  std::string created_at;
  bool operator==(const Turn&) const = default;
};

enum class Termination { kBudgetExhausted, kEocDetected, kProviderFailure };
std::string_view to_string(Termination t);
Termination parse_termination(std::string_view s);

struct Transcript {
  std::string session_id;
  std::string role_id;
  AgentConfig agent;
  std::vector<Turn> turns;
  Termination termination = Termination::kBudgetExhausted;
  std::optional<double> eoc_score_at_stop;
  std::string failure_cause;

  // Failed sessions are kept for audit but never judged.
  bool complete() const { return termination != Termination::kProviderFailure; }
  bool operator==(const Transcript&) const = default;
};

// JSONL: one turn per line followed by one metadata record.
std::string serialize_transcript(const Transcript& t);
Transcript parse_transcript(std::string_view text);
Transcript load_transcript(const std::filesystem::path& path);

// Transcripts found (recursively) under a directory, sorted by path.
std::vector<Transcript> load_transcripts(const std::filesystem::path& dir);

Dialogue to_dialogue(const Transcript& t);
Transcript transcript_from_dialogue(const Dialogue& d);

// Plain-text rendering ("Seeker: ..." / "Supporter: ...") used in judge prompts.
std::string render_transcript_text(const Transcript& t);

struct SessionSettings {
  // One exchange is a seeker utterance plus a supporter reply.
  int max_exchanges = 20;
  double temperature = 0.7;
  double top_p = 0.9;
  int max_tokens = 512;
  std::string seeker_model_id = "openai/gpt-4o";

  Json to_json() const;
  static SessionSettings from_json(const Json& j);
};

std::string session_id_for(const std::string& role_id, const std::string& agent_id);

// Pure function of the role card.
std::string seeker_system_prompt(const RoleCard& role, const Catalogs& catalogs);

// The seeker opens; speakers alternate. After every utterance the last two
// utterances are scored by the detector (when given) and a positive
// classification ends the session. Provider failures end the session with
// termination = provider_failure instead of throwing.
Transcript run_session(const RoleCard& role, const AgentConfig& agent, const EocModel* detector,
                       GatewaySession& session, const Catalogs& catalogs, const SessionSettings& settings);

struct SessionPair {
  Transcript a;
  Transcript b;
  bool complete() const { return a.complete() && b.complete(); }
};

// Two independent sessions with the same role. Each agent uses its own gateway
// session so no conversational state is shared.
SessionPair run_pair(const RoleCard& role, const AgentConfig& a, const AgentConfig& b, const EocModel* detector,
                     GatewaySession& session_a, GatewaySession& session_b, const Catalogs& catalogs,
                     const SessionSettings& settings);

}  // namespace escjudge
