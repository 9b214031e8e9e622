#include "doctest.h"

#include <chrono>
#include <thread>

#include "httplib.h"

#include "escjudge/errors.hpp"
#include "escjudge/llm_gateway.hpp"
#include "escjudge/scripted_provider.hpp"
#include "support.hpp"

using namespace escjudge;
using namespace std::chrono_literals;

namespace {

ChatRequest request(const std::string& text, const std::string& model = "fake/m") {
  ChatRequest r;
  r.model_id = model;
  r.messages = {{ChatRole::kSystem, "sys"}, {ChatRole::kUser, text}};
  return r;
}

// Replies with the user text plus a counter, so repeated calls differ.
std::shared_ptr<testing::FakeProvider> echo() {
  auto counter = std::make_shared<std::atomic<int>>(0);
  return std::make_shared<testing::FakeProvider>([counter](const ChatRequest& r) {
    return testing::reply(r.messages.back().content + "#" + std::to_string((*counter)++));
  });
}

}  // namespace

TEST_SUITE("llm_gateway") {
  TEST_CASE("request JSON round trip and validation") {
    auto r = request("hi");
    r.temperature = 1.0;
    r.max_tokens = 77;
    auto back = ChatRequest::from_json(r.to_json());
    CHECK(back.messages == r.messages);
    CHECK(back.temperature == 1.0);
    CHECK(back.max_tokens == 77);

    ChatRequest empty;
    empty.model_id = "x";
    CHECK_THROWS_AS(empty.validate(), ConfigError);
    auto bad = request("x");
    bad.messages.push_back({ChatRole::kSystem, "late"});
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    auto no_tokens = request("x");
    no_tokens.max_tokens = 0;
    CHECK_THROWS_AS(no_tokens.validate(), ConfigError);
  }

  TEST_CASE("fingerprints depend on content and ordinal only") {
    auto a = request("hello");
    auto b = request("hello");
    CHECK(canonical_request(a) == canonical_request(b));
    CHECK(request_fingerprint(a, 0) == request_fingerprint(b, 0));
    CHECK(request_fingerprint(a, 0) != request_fingerprint(a, 1));
    b.temperature = 0.2;
    CHECK(request_fingerprint(a, 0) != request_fingerprint(b, 0));
    CHECK(request_fingerprint(a, 0).size() == 64);
    // Keys are sorted and there is no whitespace.
    auto c = canonical_request(a);
    CHECK(c.find(' ') == std::string::npos);
    CHECK(c.find("\"max_tokens\"") < c.find("\"messages\""));
  }

  TEST_CASE("record then replay returns the recorded responses in call order") {
    testing::TempDir dir;
    auto provider = echo();
    std::vector<std::string> recorded;
    {
      Gateway gw(GatewayMode::kRecord, testing::registry_with(provider));
      auto s = gw.open_session(dir / "c.jsonl");
      for (const char* t : {"one", "two", "one", "one"}) recorded.push_back(s->complete(request(t)).content);
    }
    CHECK(recorded == std::vector<std::string>{"one#0", "two#1", "one#2", "one#3"});
    CHECK(provider->calls == 4);

    Gateway replay(GatewayMode::kReplay, testing::registry_with(provider));
    auto s = replay.open_session(dir / "c.jsonl");
    std::vector<std::string> replayed;
    for (const char* t : {"one", "two", "one", "one"}) replayed.push_back(s->complete(request(t)).content);
    CHECK(replayed == recorded);
    CHECK(provider->calls == 4);
    CHECK(replay.stats().replayed == 4);
    CHECK(replay.stats().provider_calls == 0);

    // A fifth identical request has no recorded ordinal.
    CHECK_THROWS_AS(s->complete(request("one")), CassetteMiss);
    // Interleaving does not matter within a session, only per-request ordinals.
    auto s2 = replay.open_session(dir / "c.jsonl");
    CHECK(s2->complete(request("two")).content == "two#1");
    CHECK(s2->complete(request("one")).content == "one#0");
  }

  TEST_CASE("record mode truncates the cassette") {
    testing::TempDir dir;
    auto provider = echo();
    Gateway gw(GatewayMode::kRecord, testing::registry_with(provider));
    gw.open_session(dir / "c.jsonl")->complete(request("a"));
    gw.open_session(dir / "c.jsonl")->complete(request("b"));
    CHECK(read_jsonl(dir / "c.jsonl").size() == 1);
    CHECK(Cassette::load(dir / "c.jsonl").entries().front().request.messages.back().content == "b");
  }

  TEST_CASE("replay never reaches a provider and needs a cassette path") {
    testing::TempDir dir;
    Gateway gw(GatewayMode::kReplay, std::make_shared<ProviderRegistry>());
    auto s = gw.open_session(dir / "absent.jsonl");
    CHECK_THROWS_AS(s->complete(request("x", "nobody/model")), CassetteMiss);
    CHECK_THROWS_AS(gw.open_session({}), ConfigError);
  }

  TEST_CASE("retryable errors back off exponentially, others fail fast") {
    int failures = 2;
    auto provider = std::make_shared<testing::FakeProvider>([&](const ChatRequest&) -> ChatResponse {
      if (failures-- > 0) throw ProviderError("rate limited", 429, true);
      return testing::reply("ok");
    });
    Gateway gw(GatewayMode::kLive, testing::registry_with(provider));
    std::vector<long> sleeps;
    gw.set_sleeper([&](std::chrono::milliseconds d) { sleeps.push_back(d.count()); });
    auto s = gw.open_session({});
    CHECK(s->complete(request("x")).content == "ok");
    CHECK(sleeps == std::vector<long>{500, 1000});
    CHECK(gw.stats().retries == 2);

    failures = 100;
    sleeps.clear();
    CHECK_THROWS_AS(s->complete(request("y")), ProviderError);
    CHECK(sleeps == std::vector<long>{500, 1000, 2000});

    auto fatal = std::make_shared<testing::FakeProvider>(
        [](const ChatRequest&) -> ChatResponse { throw ProviderError("bad request", 400, false); });
    Gateway gw2(GatewayMode::kLive, testing::registry_with(fatal));
    gw2.set_sleeper([&](std::chrono::milliseconds) { FAIL("no retry expected"); });
    CHECK_THROWS_AS(gw2.open_session({})->complete(request("z")), ProviderError);
    CHECK(fatal->calls == 1);
  }

  TEST_CASE("per-provider concurrency limit") {
    std::atomic<int> active{0}, peak{0};
    auto provider = std::make_shared<testing::FakeProvider>([&](const ChatRequest&) {
      int now = ++active;
      int prev = peak.load();
      while (now > prev && !peak.compare_exchange_weak(prev, now)) {
      }
      std::this_thread::sleep_for(5ms);
      --active;
      return testing::reply("ok");
    });
    Gateway gw(GatewayMode::kLive, testing::registry_with(provider), {}, 2);
    auto s = gw.open_session({});
    std::vector<std::jthread> threads;
    for (int i = 0; i < 8; ++i) threads.emplace_back([&, i] { s->complete(request(std::to_string(i))); });
    threads.clear();
    CHECK(provider->calls == 8);
    CHECK(peak.load() <= 2);
    CHECK(peak.load() >= 1);
  }

  TEST_CASE("registry resolves provider prefixes") {
    CHECK(ProviderRegistry::split_model_id("anthropic/claude-x") == std::pair<std::string, std::string>{"anthropic", "claude-x"});
    CHECK(ProviderRegistry::split_model_id("gpt-4o") == std::pair<std::string, std::string>{"openai", "gpt-4o"});
    ProviderRegistry reg;
    auto [p, model] = reg.resolve("scripted/anything");
    CHECK(model == "anything");
    CHECK(dynamic_cast<ScriptedProvider*>(p.get()) != nullptr);
    CHECK_THROWS_AS(reg.resolve("no-such-provider-xyz/m"), CredentialError);
  }

  TEST_CASE("scripted provider is a pure function of the request") {
    ScriptedProvider p;
    auto r = request("hello");
    auto a = p.send(r, "m");
    auto b = p.send(r, "m");
    CHECK(a.content == b.content);
    CHECK(a.created_at == b.created_at);
    CHECK_FALSE(a.content.empty());
  }

  TEST_CASE("http provider speaks the chat-completions protocol") {
    httplib::Server server;
    std::atomic<int> rejected{0};
    std::string seen_auth;
    Json last_body;
    server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
      seen_auth = req.get_header_value("Authorization");
      auto body = Json::parse(req.body);
      last_body = body;
      const auto user = body["messages"].back()["content"].get<std::string>();
      if (user == "fail") {
        res.status = 503;
        res.set_content("overloaded", "text/plain");
        return;
      }
      if (user == "reasoning" && body.contains("max_tokens")) {
        ++rejected;
        res.status = 400;
        res.set_content(R"({"error":{"message":"Unsupported parameter: 'max_tokens' is not supported with this model."}})",
                        "application/json");
        return;
      }
      if (user == "reasoning" && body.contains("temperature")) {
        ++rejected;
        res.status = 400;
        res.set_content(R"({"error":{"message":"Unsupported value: 'temperature' does not support 0.7"}})",
                        "application/json");
        return;
      }
      Json out = {{"choices", {{{"message", {{"role", "assistant"}, {"content", "echo: " + user}}},
                               {"finish_reason", "stop"}}}},
                  {"usage", {{"prompt_tokens", 12}, {"completion_tokens", 3}}}};
      res.set_content(out.dump(), "application/json");
    });
    const int port = server.bind_to_any_port("127.0.0.1");
    std::thread t([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    HttpProvider p("http://127.0.0.1:" + std::to_string(port) + "/v1/", "secret");
    auto r = p.send(request("hello"), "gpt-test");
    CHECK(r.content == "echo: hello");
    CHECK(r.usage.prompt_tokens == 12);
    CHECK(r.usage.completion_tokens == 3);
    CHECK(seen_auth == "Bearer secret");
    CHECK(last_body["model"] == "gpt-test");
    CHECK(r.accepted_params.empty());
    CHECK_FALSE(r.created_at.empty());

    auto reasoning = p.send(request("reasoning"), "o1-test");
    CHECK(reasoning.content == "echo: reasoning");
    CHECK(rejected == 2);
    CHECK(reasoning.accepted_params["max_tokens"] == "max_completion_tokens");
    CHECK(reasoning.accepted_params.contains("temperature"));
    CHECK(last_body.contains("max_completion_tokens"));

    try {
      p.send(request("fail"), "gpt-test");
      FAIL("expected ProviderError");
    } catch (const ProviderError& e) {
      CHECK(e.status() == 503);
      CHECK(e.retryable());
    }

    server.stop();
    t.join();

    HttpProvider dead("http://127.0.0.1:" + std::to_string(port), "k", std::chrono::seconds(1));
    try {
      dead.send(request("x"), "m");
      FAIL("expected ProviderError");
    } catch (const ProviderError& e) {
      CHECK(e.retryable());
    }
  }
}
