#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <random>

#include "json.hpp"

namespace escjudge {

using Json = nlohmann::json;

// Lowercase hex SHA-256 of the given bytes.
std::string sha256_hex(std::string_view bytes);

std::string to_lower(std::string_view s);
std::string trim(std::string_view s);
bool contains_ci(std::string_view haystack, std::string_view needle);
std::vector<std::string> split_lines(std::string_view text);

std::string read_file(const std::filesystem::path& path);
// Writes via a sibling temp file and rename so readers never see partial files.
void write_file(const std::filesystem::path& path, std::string_view contents);

std::vector<Json> read_jsonl(const std::filesystem::path& path);
std::string to_jsonl(const std::vector<Json>& records);

// Seeded generator whose draws are identical on every platform. The engine is
// std::mt19937_64 (fully specified); the standard distributions are not, so
// index draws use rejection sampling over the raw engine output.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  // Uniform over [0, n). n must be > 0.
  std::size_t index(std::size_t n);
  // Uniform over the closed range [lo, hi].
  int uniform_int(int lo, int hi);
  double uniform01();

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[index(i)]);
  }

 private:
  std::mt19937_64 engine_;
};

// splitmix64 of (base, index); used to give every role or session its own stream.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index);

}  // namespace escjudge
