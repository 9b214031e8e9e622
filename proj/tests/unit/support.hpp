#pragma once

#include <atomic>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <random>
#include <string>
#include <vector>

#include "escjudge/catalogs.hpp"
#include "escjudge/llm_gateway.hpp"
#include "escjudge/util.hpp"

namespace testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("escjudge-test-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  std::filesystem::path path_;
};

// Relative path -> file contents for every regular file under `root`.
inline std::map<std::string, std::string> snapshot_tree(const std::filesystem::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : std::filesystem::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[std::filesystem::relative(e.path(), root).generic_string()] = escjudge::read_file(e.path());
  return out;
}

inline std::filesystem::path fixture_dir() { return ESCJUDGE_FIXTURE_DIR; }

inline const escjudge::Catalogs& catalogs() {
  static const escjudge::Catalogs c = escjudge::load_catalogs(escjudge::default_asset_dir());
  return c;
}

// Provider backed by a callback; records every request it sees.
class FakeProvider : public escjudge::LlmProvider {
 public:
  using Handler = std::function<escjudge::ChatResponse(const escjudge::ChatRequest&)>;
  explicit FakeProvider(Handler h) : handler_(std::move(h)) {}

  escjudge::ChatResponse send(const escjudge::ChatRequest& req, const std::string&) override {
    {
      std::lock_guard lock(mu_);
      requests.push_back(req);
    }
    ++calls;
    return handler_(req);
  }

  std::atomic<int> calls{0};
  std::vector<escjudge::ChatRequest> requests;

 private:
  std::mutex mu_;
  Handler handler_;
};

inline escjudge::ChatResponse reply(std::string content) {
  escjudge::ChatResponse r;
  r.content = std::move(content);
  r.created_at = "2025-01-01T00:00:00Z";
  return r;
}

// Registry with `provider` registered as "fake" (model ids "fake/<name>").
inline std::shared_ptr<escjudge::ProviderRegistry> registry_with(std::shared_ptr<escjudge::LlmProvider> provider) {
  auto r = std::make_shared<escjudge::ProviderRegistry>();
  r->add("fake", std::move(provider));
  return r;
}

}  // namespace testing
