#include "escjudge/catalogs.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <set>

#include "escjudge/errors.hpp"
#include "escjudge/util.hpp"

namespace escjudge {

namespace fs = std::filesystem;

std::string_view to_string(RubricCategory c) {
  switch (c) {
    case RubricCategory::kExploration: return "Exploration";
    case RubricCategory::kInsight: return "Insight";
    case RubricCategory::kAction: return "Action";
  }
  return "?";
}

RubricCategory parse_category(std::string_view name) {
  for (auto c : kAllCategories)
    if (to_string(c) == name) return c;
  throw CatalogError("unknown rubric category '" + std::string(name) + "'");
}

std::size_t StressorCatalog::sub_category_count() const {
  std::size_t n = 0;
  for (const auto& c : categories) n += c.sub_categories.size();
  return n;
}

std::size_t TraitCategory::variant_count() const {
  std::size_t n = 0;
  for (const auto& s : sub_categories) n += s.variants.size();
  return n;
}

const RubricDimension& Rubric::find(std::string_view name) const {
  for (const auto& d : dimensions)
    if (d.name == name) return d;
  throw NotFoundError("unknown rubric dimension '" + std::string(name) + "'");
}

std::vector<const RubricDimension*> Rubric::in_category(RubricCategory c) const {
  std::vector<const RubricDimension*> out;
  for (const auto& d : dimensions)
    if (d.category == c) out.push_back(&d);
  return out;
}

namespace {

// Typographic apostrophes are folded to ASCII so "that’s" and "that's" match.
std::string fold_apostrophes(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i + 2 < s.size() && static_cast<unsigned char>(s[i]) == 0xE2 &&
        static_cast<unsigned char>(s[i + 1]) == 0x80 &&
        (static_cast<unsigned char>(s[i + 2]) == 0x98 || static_cast<unsigned char>(s[i + 2]) == 0x99)) {
      out.push_back('\'');
      i += 2;
    } else {
      out.push_back(s[i]);
    }
  }
  return out;
}

bool is_ident_start(char c) { return std::islower(static_cast<unsigned char>(c)) || c == '_'; }
bool is_ident_char(char c) {
  return is_ident_start(c) || std::isdigit(static_cast<unsigned char>(c));
}

// Visits the template body: literal text goes to on_text, placeholders to on_placeholder.
template <typename OnText, typename OnPlaceholder>
void scan_template(std::string_view body, OnText on_text, OnPlaceholder on_placeholder) {
  std::size_t i = 0;
  while (i < body.size()) {
    char c = body[i];
    if ((c == '{' || c == '}') && i + 1 < body.size() && body[i + 1] == c) {
      on_text(std::string_view(&body[i], 1));
      i += 2;
      continue;
    }
    if (c == '{' && i + 1 < body.size() && is_ident_start(body[i + 1])) {
      std::size_t j = i + 1;
      while (j < body.size() && is_ident_char(body[j])) ++j;
      if (j < body.size() && body[j] == '}') {
        on_placeholder(body.substr(i + 1, j - i - 1));
        i = j + 1;
        continue;
      }
    }
    on_text(body.substr(i, 1));
    ++i;
  }
}

Json load_json(const fs::path& path) {
  if (!fs::exists(path)) throw CatalogError("missing asset file " + path.string());
  try {
    return Json::parse(read_file(path));
  } catch (const Json::exception& e) {
    throw CatalogError("malformed asset " + path.string() + ": " + e.what());
  }
}

template <typename F>
auto with_schema(const fs::path& path, F&& f) {
  try {
    return f(load_json(path));
  } catch (const Json::exception& e) {
    throw CatalogError("schema violation in " + path.string() + ": " + e.what());
  }
}

std::string dump(const Json& j) { return j.dump(2, ' ', false) + "\n"; }

}  // namespace

bool FarewellPhraseList::matches(std::string_view text) const {
  auto hay = to_lower(fold_apostrophes(text));
  return std::any_of(phrases.begin(), phrases.end(), [&](const std::string& p) {
    return hay.find(to_lower(fold_apostrophes(p))) != std::string::npos;
  });
}

std::vector<std::string> referenced_placeholders(std::string_view body) {
  std::vector<std::string> names;
  scan_template(
      body, [](std::string_view) {},
      [&](std::string_view name) {
        if (std::find(names.begin(), names.end(), name) == names.end()) names.emplace_back(name);
      });
  return names;
}

std::string render_template(const PromptTemplate& t, const Bindings& bindings) {
  for (const auto& p : t.placeholders)
    if (!bindings.count(p.name))
      throw TemplateError("template '" + t.id + "': missing binding for placeholder '" + p.name + "'");
  for (const auto& [name, value] : bindings) {
    bool declared = std::any_of(t.placeholders.begin(), t.placeholders.end(),
                                [&](const PlaceholderSpec& p) { return p.name == name; });
    if (!declared)
      throw TemplateError("template '" + t.id + "': unexpected binding '" + name + "'");
  }
  std::string out;
  out.reserve(t.body.size());
  scan_template(
      t.body, [&](std::string_view s) { out += s; },
      [&](std::string_view name) {
        auto it = bindings.find(std::string(name));
        if (it == bindings.end())
          throw TemplateError("template '" + t.id + "': undeclared placeholder '" +
                              std::string(name) + "'");
        out += it->second;
      });
  return out;
}

PromptTemplate parse_template(std::string_view text) {
  PromptTemplate t;
  auto lines = split_lines(text);
  std::size_t i = 0;
  for (; i < lines.size(); ++i) {
    const auto& line = lines[i];
    if (line == "---") break;
    if (line.rfind("# template:", 0) == 0) {
      t.id = trim(line.substr(11));
    } else if (line.rfind("# placeholder:", 0) == 0) {
      auto decl = line.substr(14);
      auto eq = decl.find('=');
      if (eq == std::string::npos) throw TemplateError("placeholder declaration without type: " + line);
      t.placeholders.push_back({trim(decl.substr(0, eq)), trim(decl.substr(eq + 1))});
    } else if (!trim(line).empty()) {
      throw TemplateError("unexpected template header line: " + line);
    }
  }
  if (i == lines.size()) throw TemplateError("template has no '---' body separator");
  std::string body;
  for (std::size_t k = i + 1; k < lines.size(); ++k) {
    if (k > i + 1) body += '\n';
    body += lines[k];
  }
  // Files end with a newline; it is not part of the body.
  if (!body.empty() && body.back() == '\n') body.pop_back();
  t.body = std::move(body);
  return t;
}

std::string serialize_template(const PromptTemplate& t) {
  std::string out = "# template: " + t.id + "\n";
  for (const auto& p : t.placeholders) out += "# placeholder: " + p.name + " = " + p.semantic_type + "\n";
  out += "---\n";
  out += t.body;
  out += "\n";
  return out;
}

const std::vector<std::string>& required_dimension_names() {
  static const std::vector<std::string> names = {
      "Empathic Understanding",
      "Encouragement of Emotional Expression",
      "Exploration of Thoughts and Narratives",
      "Establish a Trusting Foundation",
      "Assess Readiness for Insight",
      "Use Gentle Challenges and Interpretations",
      "Clarify the Desired Change",
      "Ensure Readiness and Collaboration",
      "Brainstorm and Evaluate Options",
  };
  return names;
}

const std::vector<std::string>& required_farewell_phrases() {
  static const std::vector<std::string> phrases = {
      "Take care, and talk soon", "Good bye", "I look forward to our next conversation",
      "See you later", "Take care", "Bye for now", "Catch you later", "See you soon",
      "Talk to you later", "It was nice talking to you", "See ya", "Until next time", "bye",
      "see you", "Good night", "Farewell", "Have a great day", "Thanks, that’s all",
      "That’s it, thanks",
  };
  return phrases;
}

void validate(const StressorCatalog& c) {
  if (c.categories.size() != 6)
    throw CatalogError("stressor catalog must have 6 categories, found " +
                       std::to_string(c.categories.size()));
  for (const auto& cat : c.categories) {
    if (cat.sub_categories.empty()) throw CatalogError("stressor category '" + cat.name + "' is empty");
    std::set<std::string> seen;
    for (const auto& s : cat.sub_categories)
      if (!seen.insert(s).second)
        throw CatalogError("duplicate stressor sub-category '" + s + "' in '" + cat.name + "'");
  }
  if (c.sub_category_count() < 49)
    throw CatalogError("stressor catalog must have at least 49 sub-categories, found " +
                       std::to_string(c.sub_category_count()));
}

void validate(const TraitCatalog& c) {
  if (c.categories.size() != 5)
    throw CatalogError("trait catalog must have 5 categories, found " +
                       std::to_string(c.categories.size()));
  std::size_t subs = 0;
  for (const auto& cat : c.categories) {
    subs += cat.sub_categories.size();
    for (const auto& sub : cat.sub_categories) {
      if (sub.variants.empty()) throw CatalogError("trait sub-category '" + sub.name + "' has no variants");
      std::set<std::string> seen;
      for (const auto& v : sub.variants) {
        if (trim(v.description).empty())
          throw CatalogError("trait variant '" + v.name + "' has an empty description");
        if (!seen.insert(v.name).second)
          throw CatalogError("duplicate trait variant '" + v.name + "' in '" + sub.name + "'");
      }
    }
  }
  if (subs != 13)
    throw CatalogError("trait catalog must have 13 sub-categories, found " + std::to_string(subs));
}

void validate(const Rubric& r) {
  if (r.dimensions.size() != 9)
    throw CatalogError("rubric must have 9 dimensions, found " + std::to_string(r.dimensions.size()));
  for (auto c : kAllCategories)
    if (r.in_category(c).size() != 3)
      throw CatalogError("rubric category " + std::string(to_string(c)) + " must have 3 dimensions");
  std::set<std::string> names;
  for (const auto& d : r.dimensions) {
    if (trim(d.definition).empty()) throw CatalogError("rubric dimension '" + d.name + "' has no definition");
    names.insert(d.name);
  }
  for (const auto& required : required_dimension_names())
    if (!names.count(required)) throw CatalogError("rubric is missing dimension '" + required + "'");
}

void validate(const FarewellPhraseList& f) {
  for (const auto& required : required_farewell_phrases())
    if (std::find(f.phrases.begin(), f.phrases.end(), required) == f.phrases.end())
      throw CatalogError("farewell list is missing phrase '" + required + "'");
  for (const auto& p : f.phrases)
    if (trim(p).empty()) throw CatalogError("farewell list contains an empty phrase");
}

void validate(const PromptTemplate& t) {
  if (t.id.empty()) throw CatalogError("prompt template without id");
  auto used = referenced_placeholders(t.body);
  std::set<std::string> declared;
  for (const auto& p : t.placeholders) {
    if (!declared.insert(p.name).second)
      throw CatalogError("template '" + t.id + "' declares '" + p.name + "' twice");
  }
  for (const auto& u : used)
    if (!declared.count(u))
      throw CatalogError("template '" + t.id + "' uses undeclared placeholder '" + u + "'");
  for (const auto& d : declared)
    if (std::find(used.begin(), used.end(), d) == used.end())
      throw CatalogError("template '" + t.id + "' declares unused placeholder '" + d + "'");
}

const PromptTemplate& Catalogs::prompt(const std::string& id) const {
  auto it = prompts.find(id);
  if (it == prompts.end()) throw NotFoundError("unknown prompt template '" + id + "'");
  return it->second;
}

Catalogs load_catalogs(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw CatalogError("asset directory not found: " + dir.string());
  Catalogs out;

  auto manifest = with_schema(dir / "manifest.json", [](const Json& j) { return j; });
  out.version = manifest.at("catalog_version").get<std::string>();

  out.stressors = with_schema(dir / "stressors.json", [](const Json& j) {
    StressorCatalog c;
    for (const auto& cat : j.at("categories"))
      c.categories.push_back({cat.at("name").get<std::string>(),
                              cat.at("sub_categories").get<std::vector<std::string>>()});
    return c;
  });
  validate(out.stressors);
  if (manifest.at("stressor_sub_categories").get<std::size_t>() != out.stressors.sub_category_count())
    throw CatalogError("manifest stressor count disagrees with stressors.json");

  out.traits = with_schema(dir / "traits.json", [](const Json& j) {
    TraitCatalog c;
    for (const auto& cat : j.at("categories")) {
      TraitCategory tc{cat.at("name").get<std::string>(), {}};
      for (const auto& sub : cat.at("sub_categories")) {
        TraitSubCategory ts{sub.at("name").get<std::string>(), {}};
        for (const auto& v : sub.at("variants"))
          ts.variants.push_back({v.at("name").get<std::string>(), v.at("description").get<std::string>()});
        tc.sub_categories.push_back(std::move(ts));
      }
      c.categories.push_back(std::move(tc));
    }
    return c;
  });
  validate(out.traits);

  out.rubric = with_schema(dir / "rubric.json", [](const Json& j) {
    Rubric r;
    for (const auto& d : j.at("dimensions"))
      r.dimensions.push_back({d.at("name").get<std::string>(),
                              parse_category(d.at("category").get<std::string>()),
                              d.at("definition").get<std::string>()});
    return r;
  });
  validate(out.rubric);

  out.farewells = with_schema(dir / "farewells.json", [](const Json& j) {
    return FarewellPhraseList{j.at("phrases").get<std::vector<std::string>>()};
  });
  validate(out.farewells);

  auto stop_path = dir / "stopwords.txt";
  if (!fs::exists(stop_path)) throw CatalogError("missing asset file " + stop_path.string());
  for (const auto& line : split_lines(read_file(stop_path))) {
    auto w = trim(line);
    if (!w.empty()) out.stopwords.push_back(std::move(w));
  }

  auto prompt_dir = dir / "prompts";
  if (!fs::is_directory(prompt_dir)) throw CatalogError("missing prompts directory " + prompt_dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(prompt_dir))
    if (entry.path().extension() == ".tmpl") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    PromptTemplate t;
    try {
      t = parse_template(read_file(f));
    } catch (const TemplateError& e) {
      throw CatalogError(f.string() + ": " + e.what());
    }
    if (t.id != f.stem().string())
      throw CatalogError("template id '" + t.id + "' does not match file name " + f.filename().string());
    validate(t);
    out.prompts.emplace(t.id, std::move(t));
  }
  return out;
}

void save_catalogs(const Catalogs& c, const fs::path& dir) {
  Json manifest = {{"schema_version", 1},
                   {"catalog_version", c.version},
                   {"stressor_categories", c.stressors.categories.size()},
                   {"stressor_sub_categories", c.stressors.sub_category_count()},
                   {"trait_categories", c.traits.categories.size()},
                   {"rubric_dimensions", c.rubric.dimensions.size()},
                   {"farewell_phrases", c.farewells.phrases.size()}};
  write_file(dir / "manifest.json", dump(manifest));

  Json stressors = {{"schema_version", 1}, {"categories", Json::array()}};
  for (const auto& cat : c.stressors.categories)
    stressors["categories"].push_back({{"name", cat.name}, {"sub_categories", cat.sub_categories}});
  write_file(dir / "stressors.json", dump(stressors));

  Json traits = {{"schema_version", 1}, {"categories", Json::array()}};
  for (const auto& cat : c.traits.categories) {
    Json jc = {{"name", cat.name}, {"sub_categories", Json::array()}};
    for (const auto& sub : cat.sub_categories) {
      Json js = {{"name", sub.name}, {"variants", Json::array()}};
      for (const auto& v : sub.variants) js["variants"].push_back({{"name", v.name}, {"description", v.description}});
      jc["sub_categories"].push_back(std::move(js));
    }
    traits["categories"].push_back(std::move(jc));
  }
  write_file(dir / "traits.json", dump(traits));

  Json rubric = {{"schema_version", 1}, {"dimensions", Json::array()}};
  for (const auto& d : c.rubric.dimensions)
    rubric["dimensions"].push_back(
        {{"name", d.name}, {"category", std::string(to_string(d.category))}, {"definition", d.definition}});
  write_file(dir / "rubric.json", dump(rubric));

  Json farewells = {{"schema_version", 1}, {"match", "case_insensitive_substring"}, {"phrases", c.farewells.phrases}};
  write_file(dir / "farewells.json", dump(farewells));

  std::string stop;
  for (const auto& w : c.stopwords) stop += w + "\n";
  write_file(dir / "stopwords.txt", stop);

  for (const auto& [id, t] : c.prompts) write_file(dir / "prompts" / (id + ".tmpl"), serialize_template(t));
}

std::filesystem::path default_asset_dir() {
  if (const char* env = std::getenv("ESCJUDGE_ASSET_DIR"); env && *env) return env;
#ifdef ESCJUDGE_DEFAULT_ASSET_DIR
  return ESCJUDGE_DEFAULT_ASSET_DIR;
#else
  return "assets/v1";
#endif
}

}  // namespace escjudge
