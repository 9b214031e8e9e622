#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace escjudge {

// The three macro stages of Hill's helping model; each owns three rubric dimensions.
enum class RubricCategory { kExploration, kInsight, kAction };

inline constexpr RubricCategory kAllCategories[] = {
    RubricCategory::kExploration, RubricCategory::kInsight, RubricCategory::kAction};

std::string_view to_string(RubricCategory c);
RubricCategory parse_category(std::string_view name);

struct StressorCategory {
  std::string name;
  std::vector<std::string> sub_categories;
  bool operator==(const StressorCategory&) const = default;
};

struct StressorCatalog {
  std::vector<StressorCategory> categories;
  std::size_t sub_category_count() const;
  bool operator==(const StressorCatalog&) const = default;
};

struct TraitVariant {
  std::string name;
  std::string description;
  bool operator==(const TraitVariant&) const = default;
};

struct TraitSubCategory {
  std::string name;
  std::vector<TraitVariant> variants;
  bool operator==(const TraitSubCategory&) const = default;
};

struct TraitCategory {
  std::string name;
  std::vector<TraitSubCategory> sub_categories;
  std::size_t variant_count() const;
  bool operator==(const TraitCategory&) const = default;
};

struct TraitCatalog {
  std::vector<TraitCategory> categories;
  bool operator==(const TraitCatalog&) const = default;
};

struct RubricDimension {
  std::string name;
  RubricCategory category;
  std::string definition;
  bool operator==(const RubricDimension&) const = default;
};

struct Rubric {
  std::vector<RubricDimension> dimensions;

  const RubricDimension& find(std::string_view name) const;
  std::vector<const RubricDimension*> in_category(RubricCategory c) const;
  bool operator==(const Rubric&) const = default;
};

// Farewell phrases match as case-insensitive substrings of the raw utterance.
struct FarewellPhraseList {
  std::vector<std::string> phrases;

  bool matches(std::string_view text) const;
  bool operator==(const FarewellPhraseList&) const = default;
};

struct PlaceholderSpec {
  std::string name;
  std::string semantic_type;
  bool operator==(const PlaceholderSpec&) const = default;
};

// Prompt body with `{name}` placeholders. `{{` and `}}` render as literal braces.
struct PromptTemplate {
  std::string id;
  std::string body;
  std::vector<PlaceholderSpec> placeholders;
  bool operator==(const PromptTemplate&) const = default;
};

using Bindings = std::map<std::string, std::string>;

// Placeholder names referenced by a template body, in first-use order.
std::vector<std::string> referenced_placeholders(std::string_view body);

// Substitutes every placeholder. Throws TemplateError on a missing or an extra
// binding, naming the offending placeholder.
std::string render_template(const PromptTemplate& t, const Bindings& bindings);

PromptTemplate parse_template(std::string_view text);
std::string serialize_template(const PromptTemplate& t);

struct Catalogs {
  std::string version;
  StressorCatalog stressors;
  TraitCatalog traits;
  Rubric rubric;
  FarewellPhraseList farewells;
  std::vector<std::string> stopwords;
  std::map<std::string, PromptTemplate> prompts;

  const PromptTemplate& prompt(const std::string& id) const;
  bool operator==(const Catalogs&) const = default;
};

// Loads and validates a versioned asset directory. Every invariant violation
// is a CatalogError; nothing is downgraded to a warning.
Catalogs load_catalogs(const std::filesystem::path& asset_dir);
// $ESCJUDGE_ASSET_DIR, else the assets/v1 directory of the source tree.
std::filesystem::path default_asset_dir();
void save_catalogs(const Catalogs& catalogs, const std::filesystem::path& asset_dir);

void validate(const StressorCatalog& c);
void validate(const TraitCatalog& c);
void validate(const Rubric& r);
void validate(const FarewellPhraseList& f);
void validate(const PromptTemplate& t);

// The nine rubric dimension names and 19 farewell phrases the assets must carry.
const std::vector<std::string>& required_dimension_names();
const std::vector<std::string>& required_farewell_phrases();

}  // namespace escjudge
