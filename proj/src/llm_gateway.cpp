#include "escjudge/llm_gateway.hpp"

#include <cctype>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <thread>

#include "httplib.h"

#include "escjudge/errors.hpp"
#include "escjudge/scripted_provider.hpp"

namespace escjudge {

namespace fs = std::filesystem;

std::string_view to_string(ChatRole r) {
  switch (r) {
    case ChatRole::kSystem: return "system";
    case ChatRole::kUser: return "user";
    case ChatRole::kAssistant: return "assistant";
  }
  return "?";
}

ChatRole parse_chat_role(std::string_view s) {
  if (s == "system") return ChatRole::kSystem;
  if (s == "user") return ChatRole::kUser;
  if (s == "assistant") return ChatRole::kAssistant;
  throw ParseError("unknown chat role '" + std::string(s) + "'");
}

void ChatRequest::validate() const {
  if (model_id.empty()) throw ConfigError("chat request without model id");
  if (messages.empty()) throw ConfigError("chat request without messages");
  for (std::size_t i = 1; i < messages.size(); ++i)
    if (messages[i].role == ChatRole::kSystem) throw ConfigError("system message must come first");
  if (temperature < 0) throw ConfigError("temperature must be >= 0");
  if (max_tokens <= 0) throw ConfigError("max_tokens must be > 0");
}

Json ChatRequest::to_json() const {
  Json msgs = Json::array();
  for (const auto& m : messages) msgs.push_back({{"role", std::string(to_string(m.role))}, {"content", m.content}});
  return {{"model_id", model_id},
          {"messages", std::move(msgs)},
          {"temperature", temperature},
          {"top_p", top_p},
          {"max_tokens", max_tokens}};
}

ChatRequest ChatRequest::from_json(const Json& j) {
  ChatRequest r;
  r.model_id = j.at("model_id").get<std::string>();
  for (const auto& m : j.at("messages"))
    r.messages.push_back({parse_chat_role(m.at("role").get<std::string>()), m.at("content").get<std::string>()});
  r.temperature = j.at("temperature").get<double>();
  r.top_p = j.at("top_p").get<double>();
  r.max_tokens = j.at("max_tokens").get<int>();
  return r;
}

Json ChatResponse::to_json() const {
  return {{"content", content},
          {"finish_reason", finish_reason},
          {"usage", {{"prompt_tokens", usage.prompt_tokens}, {"completion_tokens", usage.completion_tokens}}},
          {"latency_ms", latency_ms},
          {"created_at", created_at},
          {"accepted_params", accepted_params}};
}

ChatResponse ChatResponse::from_json(const Json& j) {
  ChatResponse r;
  r.content = j.at("content").get<std::string>();
  r.finish_reason = j.value("finish_reason", "stop");
  if (j.contains("usage")) {
    r.usage.prompt_tokens = j["usage"].value("prompt_tokens", 0);
    r.usage.completion_tokens = j["usage"].value("completion_tokens", 0);
  }
  r.latency_ms = j.value("latency_ms", std::int64_t{0});
  r.created_at = j.value("created_at", "");
  r.accepted_params = j.value("accepted_params", Json::object());
  return r;
}

std::string canonical_request(const ChatRequest& req) { return req.to_json().dump(); }

std::string request_fingerprint(const ChatRequest& req, std::size_t ordinal) {
  return sha256_hex(canonical_request(req) + "\n#" + std::to_string(ordinal));
}

std::string utc_now_iso8601() {
  auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// ---------------------------------------------------------------------------

HttpProvider::HttpProvider(std::string base_url, std::string api_key, std::chrono::seconds timeout)
    : api_key_(std::move(api_key)), timeout_(timeout) {
  auto scheme_end = base_url.find("://");
  auto host_start = scheme_end == std::string::npos ? 0 : scheme_end + 3;
  auto path_start = base_url.find('/', host_start);
  origin_ = base_url.substr(0, path_start);
  path_prefix_ = path_start == std::string::npos ? "" : base_url.substr(path_start);
  while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
}

std::shared_ptr<HttpProvider> HttpProvider::from_env(const std::string& provider_name) {
  std::string upper;
  for (char c : provider_name)
    upper.push_back(std::isalnum(static_cast<unsigned char>(c)) ? static_cast<char>(std::toupper(c)) : '_');
  const std::string key_var = "ESC_PROVIDER_" + upper + "_KEY";
  const std::string url_var = "ESC_PROVIDER_" + upper + "_BASE_URL";
  const char* key = std::getenv(key_var.c_str());
  if (!key || !*key) throw CredentialError("missing credential: set " + key_var);
  const char* url = std::getenv(url_var.c_str());
  std::string base = url && *url ? url : (upper == "OPENAI" ? "https://api.openai.com/v1" : "");
  if (base.empty()) throw CredentialError("missing endpoint: set " + url_var);
  return std::make_shared<HttpProvider>(base, key);
}

namespace {

// Some reasoning models reject sampling parameters. Returns the parameter the
// error body complains about, if any.
std::string rejected_parameter(const std::string& body) {
  auto lower = to_lower(body);
  bool unsupported = lower.find("unsupported") != std::string::npos ||
                     lower.find("not supported") != std::string::npos ||
                     lower.find("does not support") != std::string::npos;
  if (!unsupported) return {};
  for (const char* p : {"max_tokens", "top_p", "temperature"})
    if (lower.find(p) != std::string::npos) return p;
  return {};
}

}  // namespace

ChatResponse HttpProvider::send(const ChatRequest& req, const std::string& model) {
  Json body = {{"model", model}, {"messages", Json::array()}};
  for (const auto& m : req.messages)
    body["messages"].push_back({{"role", std::string(to_string(m.role))}, {"content", m.content}});
  body["temperature"] = req.temperature;
  body["top_p"] = req.top_p;
  body["max_tokens"] = req.max_tokens;
  Json accepted = Json::object();

  httplib::Client cli(origin_);
  cli.set_connection_timeout(std::chrono::seconds(10));
  cli.set_read_timeout(timeout_);
  cli.set_write_timeout(timeout_);
  httplib::Headers headers = {{"Authorization", "Bearer " + api_key_}};

  for (int attempt = 0; attempt < 4; ++attempt) {
    auto started = std::chrono::steady_clock::now();
    auto res = cli.Post(path_prefix_ + "/chat/completions", headers, body.dump(), "application/json");
    auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - started);
    if (!res) throw ProviderError("transport error: " + httplib::to_string(res.error()), 0, true);
    if (res->status == 400) {
      auto param = rejected_parameter(res->body);
      if (!param.empty() && body.contains(param)) {
        if (param == "max_tokens") {
          body["max_completion_tokens"] = body["max_tokens"];
          accepted["max_tokens"] = "max_completion_tokens";
        } else {
          accepted[param] = nullptr;
        }
        body.erase(param);
        continue;
      }
    }
    if (res->status != 200) {
      bool retryable = res->status == 429 || res->status >= 500;
      throw ProviderError("provider returned HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 500),
                          res->status, retryable);
    }
    Json j;
    try {
      j = Json::parse(res->body);
    } catch (const Json::exception& e) {
      throw ProviderError(std::string("unparseable provider response: ") + e.what(), res->status, true);
    }
    ChatResponse out;
    try {
      const auto& choice = j.at("choices").at(0);
      const auto& content = choice.at("message").at("content");
      out.content = content.is_null() ? "" : content.get<std::string>();
      out.finish_reason = choice.value("finish_reason", "stop");
      if (j.contains("usage")) {
        out.usage.prompt_tokens = j["usage"].value("prompt_tokens", 0);
        out.usage.completion_tokens = j["usage"].value("completion_tokens", 0);
      }
    } catch (const Json::exception& e) {
      throw ProviderError(std::string("malformed provider response: ") + e.what(), res->status, false);
    }
    out.latency_ms = elapsed.count();
    out.created_at = utc_now_iso8601();
    out.accepted_params = accepted;
    return out;
  }
  throw ProviderError("provider kept rejecting sampling parameters", 400, false);
}

// ---------------------------------------------------------------------------

std::pair<std::string, std::string> ProviderRegistry::split_model_id(const std::string& model_id) {
  auto slash = model_id.find('/');
  if (slash == std::string::npos) return {"openai", model_id};
  return {model_id.substr(0, slash), model_id.substr(slash + 1)};
}

void ProviderRegistry::add(const std::string& name, std::shared_ptr<LlmProvider> provider) {
  std::lock_guard lock(mu_);
  providers_[name] = std::move(provider);
}

std::pair<std::shared_ptr<LlmProvider>, std::string> ProviderRegistry::resolve(const std::string& model_id) {
  auto [name, model] = split_model_id(model_id);
  std::lock_guard lock(mu_);
  auto it = providers_.find(name);
  if (it == providers_.end()) {
    std::shared_ptr<LlmProvider> p;
    if (name == "scripted")
      p = std::make_shared<ScriptedProvider>();
    else
      p = HttpProvider::from_env(name);
    it = providers_.emplace(name, std::move(p)).first;
  }
  return {it->second, model};
}

std::string_view to_string(GatewayMode m) {
  switch (m) {
    case GatewayMode::kLive: return "live";
    case GatewayMode::kRecord: return "record";
    case GatewayMode::kReplay: return "replay";
  }
  return "?";
}

GatewayMode parse_mode(std::string_view s) {
  if (s == "live") return GatewayMode::kLive;
  if (s == "record") return GatewayMode::kRecord;
  if (s == "replay") return GatewayMode::kReplay;
  throw ConfigError("unknown gateway mode '" + std::string(s) + "' (expected live|record|replay)");
}

// ---------------------------------------------------------------------------

Json Cassette::entry_to_json(const CassetteEntry& e) {
  return {{"fingerprint", e.fingerprint},
          {"ordinal", e.ordinal},
          {"request", e.request.to_json()},
          {"response", e.response.to_json()}};
}

Cassette Cassette::load(const fs::path& path) {
  Cassette c;
  if (!fs::exists(path)) return c;
  for (const auto& j : read_jsonl(path)) {
    CassetteEntry e;
    e.fingerprint = j.at("fingerprint").get<std::string>();
    e.ordinal = j.at("ordinal").get<std::size_t>();
    e.request = ChatRequest::from_json(j.at("request"));
    e.response = ChatResponse::from_json(j.at("response"));
    c.add(std::move(e));
  }
  return c;
}

const ChatResponse* Cassette::find(const std::string& fingerprint) const {
  auto it = index_.find(fingerprint);
  return it == index_.end() ? nullptr : &entries_[it->second].response;
}

void Cassette::add(CassetteEntry entry) {
  index_[entry.fingerprint] = entries_.size();
  entries_.push_back(std::move(entry));
}

GatewaySession::GatewaySession(Gateway& gw, fs::path path) : gateway_(gw), path_(std::move(path)) {
  if (gw.mode() == GatewayMode::kReplay) {
    cassette_ = Cassette::load(path_);
  } else if (gw.mode() == GatewayMode::kRecord) {
    write_file(path_, "");
  }
}

ChatResponse GatewaySession::complete(const ChatRequest& req) {
  req.validate();
  const std::string canonical = canonical_request(req);
  std::size_t ordinal;
  {
    std::lock_guard lock(mu_);
    ordinal = ordinals_[canonical]++;
  }
  const std::string fp = request_fingerprint(req, ordinal);

  if (gateway_.mode() == GatewayMode::kReplay) {
    std::lock_guard lock(mu_);
    const ChatResponse* hit = cassette_.find(fp);
    if (!hit) throw CassetteMiss(fp);
    ++gateway_.replayed_;
    return *hit;
  }

  ChatResponse resp = gateway_.call_provider(req);
  if (gateway_.mode() == GatewayMode::kRecord) {
    std::lock_guard lock(mu_);
    CassetteEntry entry{fp, ordinal, req, resp};
    std::ofstream out(path_, std::ios::binary | std::ios::app);
    out << Cassette::entry_to_json(entry).dump() << '\n';
    out.flush();
    if (!out) throw Error("cannot append to cassette " + path_.string());
    cassette_.add(std::move(entry));
  }
  return resp;
}

// ---------------------------------------------------------------------------

Gateway::Gateway(GatewayMode mode, std::shared_ptr<ProviderRegistry> registry, RetryPolicy retry,
                 int per_provider_limit)
    : mode_(mode),
      registry_(std::move(registry)),
      retry_(retry),
      per_provider_limit_(per_provider_limit),
      sleeper_([](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); }) {
  if (per_provider_limit_ < 1) throw ConfigError("per-provider concurrency limit must be >= 1");
}

std::unique_ptr<GatewaySession> Gateway::open_session(const fs::path& cassette_path) {
  if (mode_ != GatewayMode::kLive && cassette_path.empty())
    throw ConfigError("record/replay sessions need a cassette path");
  return std::unique_ptr<GatewaySession>(new GatewaySession(*this, cassette_path));
}

GatewayStats Gateway::stats() const {
  return {provider_calls_.load(), replayed_.load(), retries_.load(), prompt_tokens_.load(),
          completion_tokens_.load()};
}

std::counting_semaphore<>& Gateway::limiter(const std::string& provider) {
  std::lock_guard lock(limiter_mu_);
  auto& slot = limiters_[provider];
  if (!slot) slot = std::make_unique<std::counting_semaphore<>>(per_provider_limit_);
  return *slot;
}

ChatResponse Gateway::call_provider(const ChatRequest& req) {
  auto [provider, model] = registry_->resolve(req.model_id);
  auto& sem = limiter(ProviderRegistry::split_model_id(req.model_id).first);
  auto backoff = retry_.initial_backoff;
  for (int attempt = 0;; ++attempt) {
    try {
      sem.acquire();
      struct Release {
        std::counting_semaphore<>& s;
        ~Release() { s.release(); }
      } release{sem};
      ++provider_calls_;
      ChatResponse r = provider->send(req, model);
      prompt_tokens_ += static_cast<std::size_t>(r.usage.prompt_tokens);
      completion_tokens_ += static_cast<std::size_t>(r.usage.completion_tokens);
      return r;
    } catch (const ProviderError& e) {
      if (!e.retryable() || attempt >= retry_.max_retries) throw;
    }
    ++retries_;
    sleeper_(backoff);
    backoff = std::chrono::milliseconds(static_cast<std::int64_t>(backoff.count() * retry_.multiplier));
  }
}

}  // namespace escjudge
