#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "escjudge/catalogs.hpp"
#include "escjudge/llm_gateway.hpp"
#include "escjudge/util.hpp"

namespace escjudge {

struct Stressor {
  std::string category;
  std::string sub_category;
  bool operator==(const Stressor&) const = default;
};

enum class Gender { kMan, kWoman };
std::string_view to_string(Gender g);
Gender parse_gender(std::string_view s);

struct Demographics {
  Gender gender = Gender::kWoman;
  int age = 0;
  std::string familial_status;
  std::string occupation;
  // Optional; the generator prompt asks for one and the consistency audit uses it.
  std::string name;
  bool operator==(const Demographics&) const = default;
};

struct LifeEvent {
  int category_index = 0;  // K, 1-based
  int scenario_index = 0;  // M, 1-based
  std::string category_label;
  std::string scenario_text;
  bool operator==(const LifeEvent&) const = default;
};

struct TraitPick {
  std::string category;
  std::string sub_category;
  std::string variant;
  std::string description;
  bool operator==(const TraitPick&) const = default;
};

struct TraitSelection {
  std::vector<TraitPick> picks;
  bool operator==(const TraitSelection&) const = default;
};

struct RoleCard {
  std::string role_id;
  Stressor stressor;
  Demographics demographics;
  std::vector<LifeEvent> life_events;
  TraitSelection traits;
  std::string narrative;
  std::uint64_t seed = 0;
  // field -> agent that produced it
  std::map<std::string, std::string> provenance;
  // Soft findings of the post-compilation keyword audit.
  std::vector<std::string> audit_notes;

  Json to_json() const;
  static RoleCard from_json(const Json& j);
  bool operator==(const RoleCard&) const = default;
};

inline constexpr int kRoleSchemaVersion = 1;

// Pretty-printed, byte-stable serialisation used for role files.
std::string serialize_role(const RoleCard& role);
RoleCard parse_role(std::string_view text);

struct RoleBuilderConfig {
  std::string model_id = "openai/gpt-4o";
  double temperature = 0.7;
  double top_p = 0.9;
  int max_tokens = 2048;
  int nf_total = 5;
  int no_total = 10;
  int total_events = 20;
  int sub_events = 25;
  int max_life_events = 4;
  // One trait variant per sub-category instead of one per category.
  bool traits_per_subcategory = false;
  // Extra attempts with the same prompt when a generator response does not parse.
  int parse_retries = 2;
};

// A numbered list ("1. item") plus an optional trailing "Selected: item" line.
struct GeneratorResponse {
  std::vector<std::string> items;
  std::optional<std::string> selected;
};

GeneratorResponse parse_generator_response(std::string_view text);

// Reads the "Age:", "Familial status:", "Occupation:" and optional "Name:" lines.
// Throws ParseError naming the first missing field.
Demographics parse_demographics(std::string_view text, Gender gender);

std::string describe_demographics(const Demographics& d);
std::string describe_persona(const Stressor& s, const Demographics& d);
std::string describe_life_events(const std::vector<LifeEvent>& events);
std::string describe_traits(const TraitSelection& t);

// Category uniform over categories, then sub-category uniform within it.
Stressor sample_stressor(const StressorCatalog& catalog, Rng& rng);

Demographics generate_demographics(const Stressor& stressor, GatewaySession& session,
                                   const Catalogs& catalogs, Rng& rng, const RoleBuilderConfig& cfg);

std::vector<LifeEvent> generate_life_events(const std::string& persona, GatewaySession& session,
                                            const Catalogs& catalogs, Rng& rng,
                                            const RoleBuilderConfig& cfg);

// Per category: sub-category uniform, then variant uniform within it. With
// per_subcategory, one variant from every sub-category instead.
TraitSelection sample_traits(const TraitCatalog& catalog, Rng& rng, bool per_subcategory = false);

// Consistency agent. A draft answered with "INCONSISTENT: ..." is regenerated
// once with the same parts; a second rejection throws ConsistencyError.
RoleCard compile_role(const std::string& role_id, std::uint64_t seed, const Stressor& stressor,
                      const Demographics& demographics, const std::vector<LifeEvent>& life_events,
                      const TraitSelection& traits, GatewaySession& session, const Catalogs& catalogs,
                      const RoleBuilderConfig& cfg);

// Keyword audit of a compiled narrative against its inputs: numbers and
// capitalised words in the narrative that never occur in the inputs.
std::vector<std::string> audit_narrative(const std::string& narrative, const std::string& inputs);

// Whole chain: stressor -> demographics -> life events -> traits -> compile.
RoleCard build_role(const std::string& role_id, std::uint64_t seed, const Catalogs& catalogs,
                    GatewaySession& session, const RoleBuilderConfig& cfg);

std::string role_id_for_index(std::size_t index);

}  // namespace escjudge
