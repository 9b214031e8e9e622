#include "doctest.h"

#include <fstream>
#include <set>

#include "escjudge/catalogs.hpp"
#include "escjudge/errors.hpp"
#include "support.hpp"

using namespace escjudge;
namespace fs = std::filesystem;

namespace {

// Independent copy of the rubric the assets must reproduce exactly.
const std::vector<std::tuple<std::string, std::string, std::string>> kExpectedRubric = {
    {"Exploration", "Empathic Understanding",
     "Evaluate how well the model conveys a deep understanding of the user’s inner emotional world, reflecting "
     "feelings and aligning with the client’s subjective experience."},
    {"Exploration", "Encouragement of Emotional Expression",
     "Determine if the model invites, explores, and validates emotional experiences—particularly helping the user "
     "articulate and tolerate difficult feelings."},
    {"Exploration", "Exploration of Thoughts and Narratives",
     "Judge how well the model facilitates discussion of the user’s thoughts, beliefs, and personal stories through "
     "open‐ended questions and thoughtful restatements."},
    {"Insight", "Establish a Trusting Foundation",
     "Create rapport and safety through empathic listening before offering deeper insights or interpretations."},
    {"Insight", "Assess Readiness for Insight",
     "Notice cues (e.g., confusion, ambivalence) that signal whether to probe deeper; avoid pushing insight if the "
     "user seems unready."},
    {"Insight", "Use Gentle Challenges and Interpretations",
     "Offer new perspectives tentatively, encouraging exploration of contradictions or underlying motives rather "
     "than dictating answers."},
    {"Action", "Clarify the Desired Change",
     "Invite exploration of the exact behaviour, situation, or decision the user wants to address, ensuring a "
     "specific goal before action planning."},
    {"Action", "Ensure Readiness and Collaboration",
     "Check motivation to change and co‐create action plans, respecting self‐determination and context."},
    {"Action", "Brainstorm and Evaluate Options",
     "Help generate multiple ideas, weigh feasibility, benefits, and challenges, and align options with values and "
     "needs."},
};

// Copy of the shipped assets that a test may corrupt.
struct AssetCopy {
  testing::TempDir dir;
  fs::path root = dir / "v1";
  AssetCopy() { fs::copy(default_asset_dir(), root, fs::copy_options::recursive); }

  Json json(const std::string& file) const { return Json::parse(read_file(root / file)); }
  void put(const std::string& file, const Json& j) const { write_file(root / file, j.dump(2)); }
};

}  // namespace

TEST_SUITE("catalogs") {
  TEST_CASE("shipped assets load with the expected cardinalities") {
    const auto& c = testing::catalogs();
    CHECK(c.version == "v1");
    CHECK(c.stressors.categories.size() == 6);
    CHECK(c.stressors.sub_category_count() == 49);
    CHECK(c.traits.categories.size() == 5);
    std::size_t subs = 0, variants = 0;
    for (const auto& cat : c.traits.categories) {
      subs += cat.sub_categories.size();
      for (const auto& s : cat.sub_categories) {
        variants += s.variants.size();
        for (const auto& v : s.variants) CHECK_FALSE(v.description.empty());
      }
    }
    CHECK(subs == 13);
    CHECK(variants == 36);
    CHECK(c.rubric.dimensions.size() == 9);
    for (auto cat : kAllCategories) CHECK(c.rubric.in_category(cat).size() == 3);
    CHECK(c.farewells.phrases.size() == 19);
    CHECK(c.stopwords.size() == 318);
  }

  TEST_CASE("rubric names, categories and definitions are verbatim") {
    const auto& r = testing::catalogs().rubric;
    REQUIRE(r.dimensions.size() == kExpectedRubric.size());
    for (std::size_t i = 0; i < kExpectedRubric.size(); ++i) {
      const auto& [cat, name, def] = kExpectedRubric[i];
      CAPTURE(name);
      CHECK(std::string(to_string(r.dimensions[i].category)) == cat);
      CHECK(r.dimensions[i].name == name);
      CHECK(r.dimensions[i].definition == def);
    }
    CHECK(r.find("Assess Readiness for Insight").category == RubricCategory::kInsight);
    CHECK_THROWS_AS(r.find("Nope"), NotFoundError);
  }

  TEST_CASE("farewell list matching is a case-insensitive substring test") {
    const auto& f = testing::catalogs().farewells;
    for (const char* p : {"Take care, and talk soon", "bye", "Thanks, that’s all", "That’s it, thanks"})
      CHECK(std::find(f.phrases.begin(), f.phrases.end(), p) != f.phrases.end());
    CHECK(f.matches("OK BYE!"));
    CHECK(f.matches("well, TAKE CARE, AND TALK SOON"));
    CHECK(f.matches("Thanks, that's all"));  // ASCII apostrophe matches the typographic one
    CHECK(f.matches("the old byelaw"));  // substring semantics, no word boundaries
    CHECK_FALSE(f.matches("I feel lost"));
  }

  TEST_CASE("stressor and trait names are unique within their parents") {
    const auto& c = testing::catalogs();
    for (const auto& cat : c.stressors.categories) {
      std::set<std::string> names(cat.sub_categories.begin(), cat.sub_categories.end());
      CHECK(names.size() == cat.sub_categories.size());
    }
    for (const auto& cat : c.traits.categories)
      for (const auto& s : cat.sub_categories) {
        std::set<std::string> names;
        for (const auto& v : s.variants) names.insert(v.name);
        CHECK(names.size() == s.variants.size());
      }
  }

  TEST_CASE("every prompt template renders without residual placeholders") {
    for (const auto& [id, t] : testing::catalogs().prompts) {
      CAPTURE(id);
      Bindings b;
      for (const auto& p : t.placeholders) b[p.name] = "<" + p.name + ">";
      auto out = render_template(t, b);
      CHECK(referenced_placeholders(out).empty());
      for (const auto& p : t.placeholders) CHECK(out.find("<" + p.name + ">") != std::string::npos);
    }
  }

  TEST_CASE("render_template names missing and extra bindings") {
    PromptTemplate t{"x", "Hello {name}, {{literal}} {name}", {{"name", "text"}}};
    CHECK(render_template(t, {{"name", "Ada"}}) == "Hello Ada, {literal} Ada");
    try {
      render_template(t, {});
      FAIL("expected TemplateError");
    } catch (const TemplateError& e) {
      CHECK(std::string(e.what()).find("name") != std::string::npos);
    }
    try {
      render_template(t, {{"name", "Ada"}, {"extra", "1"}});
      FAIL("expected TemplateError");
    } catch (const TemplateError& e) {
      CHECK(std::string(e.what()).find("extra") != std::string::npos);
    }
    // Bound values are not re-expanded.
    CHECK(render_template(t, {{"name", "{name}"}}) == "Hello {name}, {literal} {name}");
  }

  TEST_CASE("template text round trip") {
    for (const auto& [id, t] : testing::catalogs().prompts) CHECK(parse_template(serialize_template(t)) == t);
  }

  TEST_CASE("save then load reproduces the catalogs") {
    testing::TempDir dir;
    save_catalogs(testing::catalogs(), dir / "v1");
    CHECK(load_catalogs(dir / "v1") == testing::catalogs());
  }

  TEST_CASE("invariant violations are load errors") {
    SUBCASE("missing file") {
      AssetCopy a;
      fs::remove(a.root / "rubric.json");
      CHECK_THROWS_AS(load_catalogs(a.root), Error);
    }
    SUBCASE("rubric with eight dimensions") {
      AssetCopy a;
      auto j = a.json("rubric.json");
      j["dimensions"].erase(j["dimensions"].begin());
      a.put("rubric.json", j);
      CHECK_THROWS_AS(load_catalogs(a.root), CatalogError);
    }
    SUBCASE("rubric definition edited") {
      AssetCopy a;
      auto j = a.json("rubric.json");
      j["dimensions"][0]["name"] = "Empathy";
      a.put("rubric.json", j);
      CHECK_THROWS_AS(load_catalogs(a.root), CatalogError);
    }
    SUBCASE("farewell phrase dropped") {
      AssetCopy a;
      auto j = a.json("farewells.json");
      j["phrases"].erase(j["phrases"].end() - 1);
      a.put("farewells.json", j);
      CHECK_THROWS_AS(load_catalogs(a.root), CatalogError);
    }
    SUBCASE("stressor category removed") {
      AssetCopy a;
      auto j = a.json("stressors.json");
      j["categories"].erase(j["categories"].begin());
      a.put("stressors.json", j);
      CHECK_THROWS_AS(load_catalogs(a.root), CatalogError);
    }
    SUBCASE("trait variant without description") {
      AssetCopy a;
      auto j = a.json("traits.json");
      j["categories"][0]["sub_categories"][0]["variants"][0]["description"] = "";
      a.put("traits.json", j);
      CHECK_THROWS_AS(load_catalogs(a.root), CatalogError);
    }
    SUBCASE("placeholder referenced but undeclared") {
      AssetCopy a;
      auto path = a.root / "prompts" / "judge_user.tmpl";
      write_file(path, read_file(path) + "\n{undeclared}\n");
      CHECK_THROWS_AS(load_catalogs(a.root), Error);
    }
    SUBCASE("placeholder declared but unused") {
      AssetCopy a;
      auto path = a.root / "prompts" / "seeker_opening.tmpl";
      auto text = read_file(path);
      text.insert(text.find("---"), "# placeholder: ghost = text\n");
      write_file(path, text);
      CHECK_THROWS_AS(load_catalogs(a.root), Error);
    }
  }
}
