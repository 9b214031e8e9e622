#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <boost/rational.hpp>

#include "escjudge/catalogs.hpp"
#include "escjudge/judge.hpp"

namespace escjudge {

// Exact score arithmetic; converted to double only for display.
using Score = boost::rational<std::int64_t>;

double to_double(const Score& s);
std::string format_score(double v);  // six decimal places

// A -> 1, B -> 0, tie -> 1/2, skipped -> none.
std::optional<Score> outcome_from_final(FinalVerdict v);

enum class Denominator {
  kPresent,  // mean over outcomes that exist
  kFull,     // sum over |D_c|, skips counted as zero contribution
};

struct AggregationConfig {
  Denominator denominator = Denominator::kPresent;
};

struct CategoryScore {
  RubricCategory category = RubricCategory::kExploration;
  std::string role_id;
  Score value;
  int n_dims_counted = 0;
};

// `outcomes` holds one entry per dimension of the category, skipped ones as nullopt.
// Returns nullopt when every dimension was skipped.
std::optional<CategoryScore> category_score(const std::string& role_id, RubricCategory category,
                                            const std::vector<std::optional<Score>>& outcomes,
                                            const AggregationConfig& cfg = {});

enum class Preference { kAPreferred, kBPreferred, kTie };

std::string_view to_string(Preference p);
Preference decide(const Score& mean);

struct PreferenceDecision {
  RubricCategory category = RubricCategory::kExploration;
  Score mean;
  Preference verdict = Preference::kTie;
  int roles_counted = 0;
};

// Throws ConfigError on an empty role set.
PreferenceDecision cross_role_mean(RubricCategory category, const std::vector<CategoryScore>& scores);

struct PairRef {
  std::string role_id;
  std::string agent_a;
  std::string agent_b;
};

// Inverse of pair_id_for.
PairRef parse_pair_id(const std::string& pair_id);

// The same finals seen from B's side: agents swapped, A and B verdicts exchanged.
JudgmentRecord mirror(const JudgmentRecord& r);

struct PairingReport {
  std::string agent_a;
  std::string agent_b;
  std::vector<CategoryScore> role_scores;
  // Absent for a category no role could be scored in.
  std::map<RubricCategory, PreferenceDecision> decisions;
};

// Aggregates every record whose pair_id names (agent_a, agent_b), in either
// orientation; records stored as (agent_b, agent_a) are mirrored first.
PairingReport aggregate_pairing(const std::string& agent_a, const std::string& agent_b,
                                const std::vector<JudgmentRecord>& records, const Rubric& rubric,
                                const AggregationConfig& cfg = {});

// One report per distinct unordered pairing, in the orientation first seen.
std::vector<PairingReport> winrate_report(const std::vector<JudgmentRecord>& records, const Rubric& rubric,
                                          const AggregationConfig& cfg = {});

std::string winrates_csv(const std::vector<PairingReport>& reports);
std::string role_scores_csv(const std::vector<PairingReport>& reports);
std::string winrates_svg(const std::vector<PairingReport>& reports);

// Human verdict on one (pair, dimension), already mapped from left/right to A/B.
struct AnnotationRecord {
  std::string task_id;
  std::string pair_id;
  std::string dimension_name;
  std::string annotator_id;
  Verdict verdict = Verdict::kTie;
  std::string submitted_at;

  Json to_json() const;
  static AnnotationRecord from_json(const Json& j);
  bool operator==(const AnnotationRecord&) const = default;
};

std::string serialize_annotations(const std::vector<AnnotationRecord>& records);
std::vector<AnnotationRecord> parse_annotations(std::string_view text);

enum class TiePolicy {
  kEitherSide,     // discard when judge or human says tie
  kHumanTiesOnly,  // discard human ties only; a judge tie against a decisive human is a mismatch
};

std::string_view to_string(TiePolicy p);
TiePolicy parse_tie_policy(std::string_view s);

struct MatchCell {
  std::size_t matches = 0;
  std::size_t count = 0;
  std::optional<double> rate() const;
};

struct MatchRateTable {
  std::map<std::string, MatchCell> fine;                 // by dimension name
  std::map<RubricCategory, MatchCell> coarse;            // pooled fine items per category
  std::map<RubricCategory, MatchCell> aggregated;        // per-pair category decisions
  std::size_t joined = 0;                                // (pair, dimension) items on both sides
};

// `human` must hold at most one verdict per (pair, dimension). Throws ConfigError
// when nothing joins. Skipped judge finals never count.
MatchRateTable match_rates(const std::vector<JudgmentRecord>& judge, const std::vector<AnnotationRecord>& human,
                           const Rubric& rubric, TiePolicy policy = TiePolicy::kEitherSide);

// Keyed by annotator id, plus "consensus": items labelled identically by every
// annotator (with a single annotator this equals that annotator's table).
std::map<std::string, MatchRateTable> match_rate_report(const std::vector<JudgmentRecord>& judge,
                                                        const std::vector<AnnotationRecord>& human,
                                                        const Rubric& rubric,
                                                        TiePolicy policy = TiePolicy::kEitherSide);

inline constexpr const char* kConsensusLabeler = "consensus";

std::string match_rates_fine_csv(const std::map<std::string, MatchRateTable>& report, const Rubric& rubric);
std::string match_rates_coarse_csv(const std::map<std::string, MatchRateTable>& report);
std::string match_rates_aggregated_csv(const std::map<std::string, MatchRateTable>& report);

}  // namespace escjudge
