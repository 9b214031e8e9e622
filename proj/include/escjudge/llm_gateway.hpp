#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <semaphore>
#include <string>
#include <string_view>
#include <vector>

#include "escjudge/util.hpp"

namespace escjudge {

enum class ChatRole { kSystem, kUser, kAssistant };

std::string_view to_string(ChatRole r);
ChatRole parse_chat_role(std::string_view s);

struct ChatMessage {
  ChatRole role;
  std::string content;
  bool operator==(const ChatMessage&) const = default;
};

struct ChatRequest {
  std::string model_id;
  std::vector<ChatMessage> messages;
  double temperature = 0.7;
  double top_p = 0.9;
  int max_tokens = 512;

  // Throws ConfigError when the request breaks the type's invariants.
  void validate() const;
  Json to_json() const;
  static ChatRequest from_json(const Json& j);
};

struct Usage {
  int prompt_tokens = 0;
  int completion_tokens = 0;
};

struct ChatResponse {
  std::string content;
  std::string finish_reason = "stop";
  Usage usage;
  std::int64_t latency_ms = 0;
  // ISO-8601 UTC time the provider answered. Replays return the recorded value.
  std::string created_at;
  // Sampling parameters the provider actually accepted, when it rejected some.
  Json accepted_params = Json::object();

  Json to_json() const;
  static ChatResponse from_json(const Json& j);
};

// Canonical serialisation (sorted keys, no whitespace) used for hashing.
std::string canonical_request(const ChatRequest& req);
// sha256 over the canonical request and the per-session ordinal of identical calls.
std::string request_fingerprint(const ChatRequest& req, std::size_t ordinal);

std::string utc_now_iso8601();

class LlmProvider {
 public:
  virtual ~LlmProvider() = default;
  // `model` is the provider-local model name (the part after "<provider>/").
  virtual ChatResponse send(const ChatRequest& req, const std::string& model) = 0;
};

// OpenAI-compatible chat-completions endpoint over HTTP(S).
class HttpProvider : public LlmProvider {
 public:
  HttpProvider(std::string base_url, std::string api_key,
               std::chrono::seconds timeout = std::chrono::seconds(120));

  // Reads ESC_PROVIDER_<NAME>_KEY and ESC_PROVIDER_<NAME>_BASE_URL.
  static std::shared_ptr<HttpProvider> from_env(const std::string& provider_name);

  ChatResponse send(const ChatRequest& req, const std::string& model) override;

 private:
  std::string origin_;
  std::string path_prefix_;
  std::string api_key_;
  std::chrono::seconds timeout_;
};

// Maps model ids of the form "<provider>/<model>" to providers. Ids without a
// slash use the "openai" provider. Unregistered names are created lazily from
// the environment; "scripted" resolves to the built-in offline ScriptedProvider.
class ProviderRegistry {
 public:
  void add(const std::string& name, std::shared_ptr<LlmProvider> provider);
  std::pair<std::shared_ptr<LlmProvider>, std::string> resolve(const std::string& model_id);

  static std::pair<std::string, std::string> split_model_id(const std::string& model_id);

 private:
  std::mutex mu_;
  std::map<std::string, std::shared_ptr<LlmProvider>> providers_;
};

enum class GatewayMode { kLive, kRecord, kReplay };

std::string_view to_string(GatewayMode m);
GatewayMode parse_mode(std::string_view s);

struct RetryPolicy {
  int max_retries = 3;
  std::chrono::milliseconds initial_backoff{500};
  double multiplier = 2.0;
};

struct CassetteEntry {
  std::string fingerprint;
  std::size_t ordinal = 0;
  ChatRequest request;
  ChatResponse response;
};

// One JSONL cassette file: one record per completed call, in call order.
class Cassette {
 public:
  static Cassette load(const std::filesystem::path& path);

  const ChatResponse* find(const std::string& fingerprint) const;
  void add(CassetteEntry entry);
  const std::vector<CassetteEntry>& entries() const { return entries_; }

  static Json entry_to_json(const CassetteEntry& e);

 private:
  std::vector<CassetteEntry> entries_;
  std::map<std::string, std::size_t> index_;
};

class Gateway;

// A scope of call ordinals bound to one cassette file. Safe for concurrent use.
class GatewaySession {
 public:
  ChatResponse complete(const ChatRequest& req);
  const std::filesystem::path& cassette_path() const { return path_; }

 private:
  friend class Gateway;
  GatewaySession(Gateway& gw, std::filesystem::path path);

  Gateway& gateway_;
  std::filesystem::path path_;
  std::mutex mu_;
  Cassette cassette_;
  std::map<std::string, std::size_t> ordinals_;
};

struct GatewayStats {
  std::size_t provider_calls = 0;
  std::size_t replayed = 0;
  std::size_t retries = 0;
  std::size_t prompt_tokens = 0;
  std::size_t completion_tokens = 0;
};

class Gateway {
 public:
  Gateway(GatewayMode mode, std::shared_ptr<ProviderRegistry> registry, RetryPolicy retry = {},
          int per_provider_limit = 4);

  // In record mode the cassette file is truncated; in replay mode it is loaded.
  // Live mode ignores the path.
  std::unique_ptr<GatewaySession> open_session(const std::filesystem::path& cassette_path);

  GatewayMode mode() const { return mode_; }
  GatewayStats stats() const;

  // Test hook: replaces the sleep between retries.
  void set_sleeper(std::function<void(std::chrono::milliseconds)> sleeper) { sleeper_ = std::move(sleeper); }

 private:
  friend class GatewaySession;
  ChatResponse call_provider(const ChatRequest& req);
  std::counting_semaphore<>& limiter(const std::string& provider);

  GatewayMode mode_;
  std::shared_ptr<ProviderRegistry> registry_;
  RetryPolicy retry_;
  int per_provider_limit_;
  std::function<void(std::chrono::milliseconds)> sleeper_;

  std::mutex limiter_mu_;
  std::map<std::string, std::unique_ptr<std::counting_semaphore<>>> limiters_;

  std::atomic<std::size_t> provider_calls_{0};
  std::atomic<std::size_t> replayed_{0};
  std::atomic<std::size_t> retries_{0};
  std::atomic<std::size_t> prompt_tokens_{0};
  std::atomic<std::size_t> completion_tokens_{0};
};

}  // namespace escjudge
