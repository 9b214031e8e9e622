#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "escjudge/catalogs.hpp"
#include "escjudge/dialogue_engine.hpp"
#include "escjudge/llm_gateway.hpp"

namespace escjudge {

enum class Verdict { kA, kB, kTie };

std::string_view to_string(Verdict v);
Verdict parse_verdict_token(std::string_view s);
// Relabels a verdict given with the transcripts presented in swapped order.
Verdict swap_sides(Verdict v);

// Swap-resolved outcome for one (pair, dimension).
enum class FinalVerdict { kA, kB, kTie, kSkipped };

std::string_view to_string(FinalVerdict v);
FinalVerdict parse_final_verdict(std::string_view s);

struct ParsedVerdict {
  std::optional<Verdict> verdict;  // nullopt: the response broke the template
  std::string rationale;
};

// The response must end with exactly one line "Verdict: A|B|tie" (case-insensitive);
// text before it is the rationale. Anything else is invalid.
ParsedVerdict parse_verdict(std::string_view raw);

// Both verdicts are in the (A, B) frame. Missing either -> skipped; agreement ->
// that verdict; disagreement -> tie.
FinalVerdict resolve_final(std::optional<Verdict> original, std::optional<Verdict> swapped_mapped);

struct JudgeConfig {
  std::string model_id = "openai/o1-mini";
  double temperature = 1.0;
  double top_p = 1.0;
  int max_tokens = 4096;
  int samples_per_order = 1;
  std::string system_template_id = "judge_system";
  std::string prompt_template_id = "judge_user";

  Json to_json() const;
  static JudgeConfig from_json(const Json& j);
};

struct JudgmentRecord {
  std::string pair_id;
  std::string dimension_name;
  RubricCategory category = RubricCategory::kExploration;
  std::optional<Verdict> verdict_original;
  // As the judge wrote it, with T_B shown first; mapped back only for resolution.
  std::optional<Verdict> verdict_swapped;
  FinalVerdict final = FinalVerdict::kSkipped;
  std::string rationale_original;
  std::string rationale_swapped;
  std::string model_id;
  std::vector<std::string> raw_responses;
  std::string skip_cause;

  Json to_json() const;
  static JudgmentRecord from_json(const Json& j);
  bool operator==(const JudgmentRecord&) const = default;
};

std::string pair_id_for(const std::string& role_id, const std::string& agent_a, const std::string& agent_b);

// Two judge calls: (T_A, T_B) then (T_B, T_A). Gateway failures after retries
// produce a skipped record carrying the cause.
JudgmentRecord judge_dimension(const std::string& pair_id, const Transcript& t_a, const Transcript& t_b,
                               const RubricDimension& dim, const JudgeConfig& cfg, GatewaySession& session,
                               const Catalogs& catalogs);

// One record per rubric dimension; each call re-sends both transcripts.
std::vector<JudgmentRecord> judge_pair(const std::string& pair_id, const Transcript& t_a, const Transcript& t_b,
                                       const Rubric& rubric, const JudgeConfig& cfg, GatewaySession& session,
                                       const Catalogs& catalogs);

std::string serialize_judgments(const std::vector<JudgmentRecord>& records);
std::vector<JudgmentRecord> parse_judgments(std::string_view text);

}  // namespace escjudge
