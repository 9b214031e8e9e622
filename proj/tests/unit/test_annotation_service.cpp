#include "doctest.h"

#include <cstdlib>
#include <set>

#include "escjudge/annotation_service.hpp"
#include "escjudge/errors.hpp"
#include "httplib.h"
#include "support.hpp"

using namespace escjudge;

namespace {

const std::vector<std::string> kSecrets = {"secret-agent-x", "secret-agent-y", "vendorq/model-alpha",
                                           "vendorq/model-beta"};

Transcript transcript(const std::string& role, const std::string& agent, const std::string& model,
                      const std::string& marker) {
  Transcript t;
  t.role_id = role;
  t.agent = AgentConfig::make(agent, model, GuidelineMode::kWithHill);
  t.session_id = session_id_for(role, agent);
  t.turns = {{0, Speaker::kSeeker, "I lost my job and feel stuck.", "2025-01-01T00:00:00Z"},
             {1, Speaker::kSupporter, marker + " How are you holding up?", "2025-01-01T00:00:01Z"}};
  return t;
}

// Pairs on roles role-00*; the supporter reply of A starts with AAA, of B with BBB.
PairSource memory_source() {
  return [](const std::string& pair_id) -> std::pair<Transcript, Transcript> {
    auto p = parse_pair_id(pair_id);
    if (p.role_id.rfind("role-00", 0) != 0) throw NotFoundError("unknown pair " + pair_id);
    return {transcript(p.role_id, p.agent_a, "vendorq/model-alpha", "AAA"),
            transcript(p.role_id, p.agent_b, "vendorq/model-beta", "BBB")};
  };
}

std::vector<std::string> pairs(int n) {
  std::vector<std::string> out;
  for (int i = 0; i < n; ++i) out.push_back(pair_id_for("role-00" + std::to_string(i), kSecrets[0], kSecrets[1]));
  return out;
}

AnnotationAuth auth() {
  return AnnotationAuth::from_json({{"annotators", {{"ann1", "tok-1"}, {"ann2", "tok-2"}}}, {"admin_token", "root-tok"}});
}

httplib::Headers bearer(const std::string& token) { return {{"Authorization", "Bearer " + token}}; }

bool left_shows_a(const Json& view) {
  return view["left"]["turns"][1]["text"].get<std::string>().rfind("AAA", 0) == 0;
}

void check_blind(const std::string& body) {
  for (const auto& s : kSecrets) CHECK_MESSAGE(body.find(s) == std::string::npos, "leaked " << s);
  CHECK(body.find("__vs__") == std::string::npos);
}

}  // namespace

TEST_SUITE("annotation_service") {
  TEST_CASE("side mapping oracle") {
    CHECK(map_side_verdict(SideVerdict::kLeft, true) == Verdict::kA);
    CHECK(map_side_verdict(SideVerdict::kRight, true) == Verdict::kB);
    CHECK(map_side_verdict(SideVerdict::kLeft, false) == Verdict::kB);
    CHECK(map_side_verdict(SideVerdict::kRight, false) == Verdict::kA);
    CHECK(map_side_verdict(SideVerdict::kTie, true) == Verdict::kTie);
    CHECK(map_side_verdict(SideVerdict::kTie, false) == Verdict::kTie);
    CHECK(parse_side_verdict("left") == SideVerdict::kLeft);
    CHECK_THROWS_AS(parse_side_verdict("A"), ParseError);
  }

  TEST_CASE("batch creation: one task per pair and dimension") {
    testing::TempDir dir;
    AnnotationStore store(dir.path());
    const auto& rubric = testing::catalogs().rubric;
    auto tasks = store.create_batch("b1", pairs(3), rubric, memory_source(), 11);
    REQUIRE(tasks.size() == 27);
    CHECK(tasks.front().task_id == "b1-0001");
    CHECK(tasks.back().task_id == "b1-0027");
    for (std::size_t i = 0; i < tasks.size(); ++i) {
      CHECK(tasks[i].pair_id == pairs(3)[i / 9]);
      CHECK(tasks[i].dimension_name == rubric.dimensions[i % 9].name);
      CHECK(tasks[i].dimension_definition == rubric.dimensions[i % 9].definition);
    }
    std::size_t left_a = 0;
    for (const auto& t : tasks) left_a += t.left_is_a;
    CHECK(left_a > 0);
    CHECK(left_a < 27);

    testing::TempDir other;
    AnnotationStore store2(other.path());
    CHECK(store2.create_batch("b1", pairs(3), rubric, memory_source(), 11) == tasks);
    CHECK_THROWS_AS(store.create_batch("b1", pairs(1), rubric, memory_source(), 1), ConfigError);
    CHECK_THROWS_AS(store.create_batch("b/2", pairs(1), rubric, memory_source(), 1), ConfigError);
    CHECK_THROWS_AS(store.create_batch("b3", {"zzz__a__vs__b"}, rubric, memory_source(), 1), NotFoundError);
    CHECK(store.batch_ids() == std::vector<std::string>{"b1"});
  }

  TEST_CASE("submissions overwrite, the audit log keeps history, and state survives a restart") {
    testing::TempDir dir;
    const auto& rubric = testing::catalogs().rubric;
    std::vector<AnnotationTask> tasks;
    {
      AnnotationStore store(dir.path());
      tasks = store.create_batch("b", pairs(1), rubric, memory_source(), 3);
      CHECK(store.export_batch("b").empty());
      store.submit(tasks[0].task_id, "ann1", SideVerdict::kLeft, "t1");
      auto r = store.submit(tasks[0].task_id, "ann1", SideVerdict::kRight, "t2");
      CHECK(r.verdict == map_side_verdict(SideVerdict::kRight, tasks[0].left_is_a));
      store.submit(tasks[1].task_id, "ann2", SideVerdict::kTie, "t3");
      CHECK(store.export_batch("b").size() == 2);
      CHECK(store.audit_log().size() == 3);
      CHECK(store.audit_log()[0]["side"] == "left");
      CHECK(store.progress("b", "ann1") == std::pair<std::size_t, std::size_t>{1, 9});
      CHECK(store.next_task("b", "ann1")->task_id == tasks[1].task_id);
      CHECK(store.next_task("b", "ann2")->task_id == tasks[0].task_id);
      CHECK_THROWS_AS(store.submit("nope", "ann1", SideVerdict::kLeft, "t"), NotFoundError);
    }
    AnnotationStore reopened(dir.path());
    CHECK(reopened.batch("b") == tasks);
    auto exported = reopened.export_batch("b");
    REQUIRE(exported.size() == 2);
    CHECK(exported[0].submitted_at == "t2");
    CHECK(exported[0].annotator_id == "ann1");
    CHECK(reopened.audit_log().size() == 3);
    CHECK(parse_annotations(read_file(dir / "current.jsonl")).size() == 2);
  }

  TEST_CASE("export counts and order") {
    testing::TempDir dir;
    AnnotationStore store(dir.path());
    auto tasks = store.create_batch("b", pairs(2), testing::catalogs().rubric, memory_source(), 5);
    for (const auto& t : tasks) {
      store.submit(t.task_id, "ann2", SideVerdict::kLeft, "x");
      store.submit(t.task_id, "ann1", SideVerdict::kRight, "x");
    }
    auto out = store.export_batch("b");
    REQUIRE(out.size() == 36);
    CHECK(out[0].annotator_id == "ann1");
    CHECK(out[1].annotator_id == "ann2");
    CHECK(out[0].task_id == tasks[0].task_id);
    CHECK(out[35].task_id == tasks[17].task_id);
    CHECK_FALSE(store.next_task("b", "ann1").has_value());
  }

  TEST_CASE("pair sampling") {
    std::vector<std::string> ids;
    for (int i = 0; i < 20; ++i) ids.push_back("p" + std::to_string(i));
    auto a = sample_pairs(ids, 5, 9);
    CHECK(a.size() == 5);
    CHECK(std::set<std::string>(a.begin(), a.end()).size() == 5);
    CHECK(sample_pairs(ids, 5, 9) == a);
    auto reversed = ids;
    std::reverse(reversed.begin(), reversed.end());
    CHECK(sample_pairs(reversed, 5, 9) == a);
    CHECK(sample_pairs(ids, 50, 1).size() == 20);
  }

  TEST_CASE("auth configuration") {
    auto a = auth();
    CHECK(a.annotator_for("tok-2") == std::optional<std::string>("ann2"));
    CHECK_FALSE(a.annotator_for("").has_value());
    CHECK_FALSE(a.annotator_for("root-tok").has_value());
    setenv("ESC_ANNOTATOR_TOKENS", "alice:t1, bob:t2", 1);
    setenv("ESC_ADMIN_TOKEN", "adm", 1);
    auto e = AnnotationAuth::from_env();
    CHECK(e.annotator_tokens.at("bob") == "t2");
    CHECK(e.admin_token == "adm");
    setenv("ESC_ANNOTATOR_TOKENS", "alice", 1);
    CHECK_THROWS_AS(AnnotationAuth::from_env(), ConfigError);
    unsetenv("ESC_ANNOTATOR_TOKENS");
    unsetenv("ESC_ADMIN_TOKEN");
  }

  TEST_CASE("blind task view") {
    AnnotationTask t{"b-0001", "b", pairs(1)[0], "Empathic Understanding", "def", false};
    auto v = blind_task_view(t, memory_source());
    check_blind(v.dump());
    CHECK_FALSE(left_shows_a(v));
    CHECK(v["left"]["turns"][0]["speaker"] == "seeker");
    CHECK(v["dimension"]["name"] == "Empathic Understanding");
    CHECK_FALSE(v.contains("pair_id"));
  }

  TEST_CASE("http workflow, blindness and export round trip") {
    testing::TempDir dir;
    AnnotationStore store(dir.path());
    const auto& rubric = testing::catalogs().rubric;
    int tick = 0;
    AnnotationServer server(store, memory_source(), auth(), rubric,
                            [&tick] { return "2025-01-01T00:00:" + std::to_string(10 + tick++ % 50) + "Z"; });
    const int port = server.start();
    httplib::Client cli("127.0.0.1", port);

    CHECK(cli.Get("/health")->status == 200);
    auto created = cli.Post("/batches", bearer("root-tok"),
                            Json{{"batch_id", "web"}, {"pair_ids", pairs(3)}, {"seed", 77}}.dump(), "application/json");
    REQUIRE(created);
    CHECK(created->status == 201);
    CHECK(Json::parse(created->body)["tasks"] == 27);
    CHECK(cli.Post("/batches", bearer("tok-1"), "{}", "application/json")->status == 401);

    CHECK(cli.Get("/batches/web/next?annotator=ann1")->status == 401);
    CHECK(cli.Get("/batches/web/next?annotator=ann2", bearer("tok-1"))->status == 403);
    CHECK(cli.Get("/batches/web/next", bearer("tok-1"))->status == 400);
    CHECK(cli.Get("/batches/none/next?annotator=ann1", bearer("tok-1"))->status == 404);
    CHECK(cli.Get("/tasks/web-0099", bearer("tok-1"))->status == 404);

    // Annotate everything: A on even task indices, B on odd ones, tie on each
    // pair's last dimension. The side clicked follows the view shown.
    std::vector<AnnotationRecord> expected;
    std::vector<std::string> seen_bodies;
    for (int guard = 0; guard < 40; ++guard) {
      auto res = cli.Get("/batches/web/next?annotator=ann1", bearer("tok-1"));
      REQUIRE(res);
      REQUIRE(res->status == 200);
      seen_bodies.push_back(res->body);
      auto body = Json::parse(res->body);
      if (body["done"].get<bool>()) break;
      const auto& view = body["task"];
      const auto task_id = view["task_id"].get<std::string>();
      const auto task = store.task(task_id);
      const int dim_index = std::stoi(task_id.substr(task_id.size() - 4)) - 1;
      Verdict want = dim_index % 9 == 8 ? Verdict::kTie : dim_index % 2 == 0 ? Verdict::kA : Verdict::kB;
      std::string side = want == Verdict::kTie ? "tie"
                         : (want == Verdict::kA) == left_shows_a(view) ? "left"
                                                                       : "right";
      CHECK(left_shows_a(view) == task.left_is_a);
      auto sub = cli.Post("/tasks/" + task_id + "/verdict", bearer("tok-1"), Json{{"side", side}}.dump(),
                          "application/json");
      REQUIRE(sub);
      CHECK(sub->status == 200);
      seen_bodies.push_back(sub->body);
      expected.push_back({task_id, task.pair_id, task.dimension_name, "ann1", want, ""});
    }
    REQUIRE(expected.size() == 27);
    auto last = Json::parse(seen_bodies.back());
    CHECK(last["done"] == true);
    CHECK(last["progress"]["done"] == 27);

    auto single = cli.Get("/tasks/web-0003", bearer("tok-2"));
    CHECK(single->status == 200);
    seen_bodies.push_back(single->body);
    CHECK(Json::parse(single->body)["progress"]["done"] == 0);

    CHECK(cli.Post("/tasks/web-0001/verdict", bearer("tok-1"), R"({"side":"A"})", "application/json")->status == 400);
    CHECK(cli.Post("/tasks/web-0001/verdict", bearer("tok-1"), R"({"side":"left","annotator":"ann2"})",
                   "application/json")
              ->status == 403);
    CHECK(cli.Post("/tasks/web-0001/verdict", bearer("tok-1"), "not json", "application/json")->status == 400);

    for (const auto& b : seen_bodies) check_blind(b);

    CHECK(cli.Get("/batches/web/export", bearer("tok-1"))->status == 401);
    auto exp = cli.Get("/batches/web/export", bearer("root-tok"));
    REQUIRE(exp);
    CHECK(exp->status == 200);
    CHECK_FALSE(exp->has_header("X-Escjudge-Warning"));
    auto records = parse_annotations(exp->body);
    REQUIRE(records.size() == 27);
    for (std::size_t i = 0; i < records.size(); ++i) {
      CHECK(records[i].task_id == expected[i].task_id);
      CHECK(records[i].pair_id == expected[i].pair_id);
      CHECK(records[i].verdict == expected[i].verdict);
      CHECK_FALSE(records[i].submitted_at.empty());
    }

    // Judge records that agree with every expected decisive verdict.
    std::vector<JudgmentRecord> judge;
    for (const auto& e : expected) {
      JudgmentRecord j;
      j.pair_id = e.pair_id;
      j.dimension_name = e.dimension_name;
      j.category = rubric.find(e.dimension_name).category;
      j.final = e.verdict == Verdict::kA ? FinalVerdict::kA : e.verdict == Verdict::kB ? FinalVerdict::kB : FinalVerdict::kTie;
      judge.push_back(j);
    }
    auto from_export = match_rate_report(judge, records, rubric);
    auto from_memory = match_rate_report(judge, expected, rubric);
    CHECK(match_rates_fine_csv(from_export, rubric) == match_rates_fine_csv(from_memory, rubric));
    CHECK(match_rates_aggregated_csv(from_export) == match_rates_aggregated_csv(from_memory));
    CHECK(from_export.at("ann1").fine.at(rubric.dimensions[0].name).rate() == 1.0);

    auto empty_batch = cli.Post("/batches", bearer("root-tok"),
                                Json{{"batch_id", "quiet"}, {"pair_ids", pairs(1)}}.dump(), "application/json");
    CHECK(empty_batch->status == 201);
    auto empty = cli.Get("/batches/quiet/export", bearer("root-tok"));
    CHECK(empty->status == 200);
    CHECK(empty->has_header("X-Escjudge-Warning"));
    CHECK(empty->body.empty());

    auto pre = cli.Options("/tasks/web-0001/verdict");
    REQUIRE(pre);
    CHECK(pre->status == 204);
    CHECK(pre->get_header_value("Access-Control-Allow-Origin") == "*");
    server.stop();
  }

  TEST_CASE("transcript directory source") {
    testing::TempDir dir;
    auto a = transcript("role-000", "ax", "m/1", "AAA");
    auto b = transcript("role-000", "bx", "m/2", "BBB");
    write_file(dir / "role-000/ax.jsonl", serialize_transcript(a));
    write_file(dir / "role-000/bx.jsonl", serialize_transcript(b));
    auto src = transcript_dir_source(dir.path());
    auto [ta, tb] = src("role-000__ax__vs__bx");
    CHECK(ta == a);
    CHECK(tb == b);
    CHECK_THROWS_AS(src("role-000__ax__vs__cx"), NotFoundError);
  }
}
