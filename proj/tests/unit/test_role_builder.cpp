#include "doctest.h"

#include <map>
#include <regex>

#include "chi_square.hpp"
#include "escjudge/errors.hpp"
#include "escjudge/role_builder.hpp"
#include "support.hpp"

using namespace escjudge;

namespace {

const char* kDemographicsReply =
    "1. single\n2. married\nChosen: single\n\nName: Ana\nAge: 34\nFamilial status: single\nOccupation: nurse\n";

std::string numbered(const std::string& stem, int n) {
  std::string out;
  for (int i = 1; i <= n; ++i) out += std::to_string(i) + ". " + stem + " " + std::to_string(i) + "\n";
  return out;
}

int captured(const std::string& text, const std::string& pattern) {
  std::smatch m;
  REQUIRE(std::regex_search(text, m, std::regex(pattern)));
  return std::stoi(m[1].str());
}

// Answers each role-builder prompt with a well-formed reply.
testing::FakeProvider::Handler well_formed(int* consistency_rejections = nullptr) {
  return [=](const ChatRequest& req) {
    const auto& p = req.messages.back().content;
    if (p.find("Familial status: <") != std::string::npos) return testing::reply(kDemographicsReply);
    if (p.find("categories of key life events") != std::string::npos)
      return testing::reply(numbered("Category", 20) + "Selected: whatever");
    if (p.find("concrete scenarios") != std::string::npos) return testing::reply(numbered("Scenario", 25));
    if (consistency_rejections && *consistency_rejections > 0) {
      --*consistency_rejections;
      return testing::reply("INCONSISTENT: married status contradicts the divorce");
    }
    return testing::reply("You are Ana, a 34 year old nurse.");
  };
}

struct Harness {
  std::shared_ptr<testing::FakeProvider> provider;
  Gateway gateway;
  std::unique_ptr<GatewaySession> session;
  explicit Harness(testing::FakeProvider::Handler h)
      : provider(std::make_shared<testing::FakeProvider>(std::move(h))),
        gateway(GatewayMode::kLive, testing::registry_with(provider)),
        session(gateway.open_session({})) {}
};

RoleBuilderConfig fake_cfg() {
  RoleBuilderConfig c;
  c.model_id = "fake/builder";
  return c;
}

}  // namespace

TEST_SUITE("role_builder") {
  TEST_CASE("stressor sampler: category uniform, then sub-category uniform") {
    const auto& cat = testing::catalogs().stressors;
    std::map<std::pair<std::string, std::string>, std::size_t> joint;
    Rng rng(11);
    const int n = 30000;
    for (int i = 0; i < n; ++i) {
      auto s = sample_stressor(cat, rng);
      ++joint[{s.category, s.sub_category}];
    }
    std::vector<std::size_t> counts;
    std::vector<double> probs;
    for (const auto& c : cat.categories)
      for (const auto& sub : c.sub_categories) {
        counts.push_back(joint[{c.name, sub}]);
        probs.push_back(1.0 / cat.categories.size() / c.sub_categories.size());
      }
    CHECK(counts.size() == 49);
    auto chi = testing::chi_square(counts, probs);
    CAPTURE(chi.statistic);
    CHECK(chi.ok());
  }

  TEST_CASE("trait sampler draws one variant per category, two-level uniform") {
    const auto& traits = testing::catalogs().traits;
    Rng rng(3);
    std::map<std::string, std::size_t> hits;
    const int n = 30000;
    for (int i = 0; i < n; ++i) {
      auto sel = sample_traits(traits, rng);
      REQUIRE(sel.picks.size() == 5);
      for (const auto& p : sel.picks) ++hits[p.category + "/" + p.sub_category + "/" + p.variant];
    }
    for (const auto& cat : traits.categories) {
      std::vector<std::size_t> counts;
      std::vector<double> probs;
      for (const auto& sub : cat.sub_categories)
        for (const auto& v : sub.variants) {
          counts.push_back(hits[cat.name + "/" + sub.name + "/" + v.name]);
          probs.push_back(1.0 / cat.sub_categories.size() / sub.variants.size());
        }
      auto chi = testing::chi_square(counts, probs);
      CAPTURE(cat.name);
      CAPTURE(chi.statistic);
      CHECK(chi.ok());
    }
  }

  TEST_CASE("per-subcategory trait mode picks all thirteen sub-categories") {
    Rng rng(1);
    auto sel = sample_traits(testing::catalogs().traits, rng, true);
    CHECK(sel.picks.size() == 13);
    for (const auto& p : sel.picks) CHECK_FALSE(p.description.empty());
  }

  TEST_CASE("demographics: prompt slots come from the rng and the reply is parsed") {
    Harness h(well_formed());
    Rng rng(5);
    Stressor s{"Relationship & Family Stress", "Divorce"};
    std::map<int, std::size_t> nf_counts, no_counts, gender_counts;
    const int n = 6000;
    for (int i = 0; i < n; ++i) {
      auto d = generate_demographics(s, *h.session, testing::catalogs(), rng, fake_cfg());
      CHECK(d.age == 34);
      CHECK(d.occupation == "nurse");
      ++gender_counts[static_cast<int>(d.gender)];
      const auto& prompt = h.provider->requests.back().messages.back().content;
      CHECK(prompt.find("Divorce") != std::string::npos);
      CHECK(prompt.find(std::string(to_string(d.gender))) != std::string::npos);
      ++nf_counts[captured(prompt, R"(Then take item number (\d+) from that list\.\n)")];
      ++no_counts[captured(prompt, R"(occupations[^\n]*Then take item number (\d+))")];
    }
    auto as_vec = [](const std::map<int, std::size_t>& m, int k) {
      std::vector<std::size_t> v;
      for (int i = 1; i <= k; ++i) v.push_back(m.count(i) ? m.at(i) : 0);
      return v;
    };
    CHECK(testing::chi_square_uniform(as_vec(nf_counts, 5)).ok());
    CHECK(testing::chi_square_uniform(as_vec(no_counts, 10)).ok());
    CHECK(testing::chi_square_uniform({gender_counts[0], gender_counts[1]}).ok());
  }

  TEST_CASE("parse_demographics names the missing field") {
    auto d = parse_demographics("Name: Bo\nAge: 41 years\nFamilial status: divorced\nOccupation: chef", Gender::kMan);
    CHECK(d.age == 41);
    CHECK(d.familial_status == "divorced");
    CHECK(d.name == "Bo");
    try {
      parse_demographics("Age: 41\nOccupation: chef", Gender::kMan);
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(std::string(e.what()).find("Familial status") != std::string::npos);
    }
    CHECK_THROWS_AS(parse_demographics("Age: old\nFamilial status: x\nOccupation: y", Gender::kMan), ParseError);
  }

  TEST_CASE("generator response parsing") {
    auto r = parse_generator_response("Intro\n1. First\n2) **Second**\n3. Third\nSelected: Second");
    CHECK(r.items == std::vector<std::string>{"First", "Second", "Third"});
    CHECK(r.selected == "Second");
  }

  TEST_CASE("life events take the K-th category and M-th scenario") {
    Harness h(well_formed());
    Rng rng(9);
    std::map<int, std::size_t> count_hist;
    for (int round = 0; round < 200; ++round) {
      auto events = generate_life_events("A 34-year-old nurse.", *h.session, testing::catalogs(), rng, fake_cfg());
      REQUIRE(events.size() >= 1);
      REQUIRE(events.size() <= 4);
      ++count_hist[static_cast<int>(events.size())];
      for (const auto& e : events) {
        CHECK(e.category_index >= 1);
        CHECK(e.category_index <= 20);
        CHECK(e.scenario_index >= 1);
        CHECK(e.scenario_index <= 25);
        CHECK(e.category_label == "Category " + std::to_string(e.category_index));
        CHECK(e.scenario_text == "Scenario " + std::to_string(e.scenario_index));
      }
    }
    CHECK(count_hist.size() == 4);
    CHECK_THROWS_AS(generate_life_events("  ", *h.session, testing::catalogs(), rng, fake_cfg()), ConfigError);
  }

  TEST_CASE("unparseable generator output is retried, then reported") {
    int bad = 1;
    Harness h([&](const ChatRequest&) {
      if (bad-- > 0) return testing::reply("I would rather not.");
      return testing::reply(kDemographicsReply);
    });
    Rng rng(1);
    auto d = generate_demographics({"a", "b"}, *h.session, testing::catalogs(), rng, fake_cfg());
    CHECK(d.name == "Ana");
    CHECK(h.provider->calls == 2);

    Harness never([](const ChatRequest&) { return testing::reply("no"); });
    CHECK_THROWS_AS(generate_demographics({"a", "b"}, *never.session, testing::catalogs(), rng, fake_cfg()),
                    ParseError);
    CHECK(never.provider->calls == 3);
  }

  TEST_CASE("consistency agent: one rejection regenerates, two abort") {
    Rng rng(4);
    auto traits = sample_traits(testing::catalogs().traits, rng);
    Demographics d{Gender::kWoman, 34, "married", "nurse", "Ana"};
    std::vector<LifeEvent> events = {{1, 1, "Loss", "You lost a friend."}};

    int once = 1;
    Harness h(well_formed(&once));
    auto role = compile_role("role-000", 1, {"Relationship & Family Stress", "Divorce"}, d, events, traits,
                             *h.session, testing::catalogs(), fake_cfg());
    CHECK(role.narrative == "You are Ana, a 34 year old nurse.");
    CHECK(role.provenance.at("consistency_rounds") == "2");

    int twice = 2;
    Harness h2(well_formed(&twice));
    CHECK_THROWS_AS(compile_role("role-000", 1, {"Relationship & Family Stress", "Divorce"}, d, events, traits,
                                 *h2.session, testing::catalogs(), fake_cfg()),
                    ConsistencyError);
  }

  TEST_CASE("audit flags invented numbers and names only") {
    const std::string inputs = "Name: Ana\nAge: 34\nOccupation: nurse";
    CHECK(audit_narrative("You are Ana, 34, a nurse.", inputs).empty());
    auto notes = audit_narrative("You are Ana, 34, a nurse who moved to Boston in 2019.", inputs);
    REQUIRE(notes.size() == 2);
    CHECK(notes[0].find("2019") != std::string::npos);
    CHECK(notes[1].find("Boston") != std::string::npos);
  }

  TEST_CASE("role card JSON round trip is byte stable") {
    testing::TempDir dir;
    Gateway gw(GatewayMode::kRecord, std::make_shared<ProviderRegistry>());
    RoleBuilderConfig cfg;
    cfg.model_id = "scripted/builder";
    auto s = gw.open_session(dir / "role.jsonl");
    auto role = build_role("role-007", 77, testing::catalogs(), *s, cfg);
    const auto text = serialize_role(role);
    CHECK(parse_role(text) == role);
    CHECK(serialize_role(parse_role(text)) == text);
    CHECK(role.role_id == "role-007");
    CHECK(role.seed == 77);
    CHECK_FALSE(role.narrative.empty());
    CHECK(role.traits.picks.size() == 5);
  }

  TEST_CASE("fixed seed and cassette give byte-identical role cards") {
    testing::TempDir dir;
    RoleBuilderConfig cfg;
    cfg.model_id = "scripted/builder";
    std::string recorded;
    {
      Gateway gw(GatewayMode::kRecord, std::make_shared<ProviderRegistry>());
      auto s = gw.open_session(dir / "c.jsonl");
      recorded = serialize_role(build_role("role-001", 123, testing::catalogs(), *s, cfg));
    }
    for (int run = 0; run < 2; ++run) {
      Gateway gw(GatewayMode::kReplay, std::make_shared<ProviderRegistry>());
      auto s = gw.open_session(dir / "c.jsonl");
      CHECK(serialize_role(build_role("role-001", 123, testing::catalogs(), *s, cfg)) == recorded);
      CHECK(gw.stats().provider_calls == 0);
    }
    // A different seed asks different questions, which the cassette cannot answer.
    Gateway gw(GatewayMode::kReplay, std::make_shared<ProviderRegistry>());
    auto s = gw.open_session(dir / "c.jsonl");
    CHECK_THROWS_AS(build_role("role-001", 124, testing::catalogs(), *s, cfg), CassetteMiss);
  }

  TEST_CASE("role ids") {
    CHECK(role_id_for_index(0) == "role-000");
    CHECK(role_id_for_index(24) == "role-024");
  }
}
