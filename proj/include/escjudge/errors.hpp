#pragma once

#include <stdexcept>
#include <string>

namespace escjudge {

// Base for every error raised by the library. Subclasses exist where callers
// branch on the kind of failure.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CatalogError : public Error {
 public:
  using Error::Error;
};

class TemplateError : public Error {
 public:
  using Error::Error;
};

// An LLM response that does not follow the format its prompt asked for.
class ParseError : public Error {
 public:
  using Error::Error;
};

// Transport or provider failure after retries were exhausted.
class ProviderError : public Error {
 public:
  ProviderError(const std::string& what, int status = 0, bool retryable = false)
      : Error(what), status_(status), retryable_(retryable) {}
  int status() const { return status_; }
  bool retryable() const { return retryable_; }

 private:
  int status_;
  bool retryable_;
};

class CredentialError : public Error {
 public:
  using Error::Error;
};

class CassetteMiss : public Error {
 public:
  explicit CassetteMiss(std::string fingerprint)
      : Error("cassette miss for fingerprint " + fingerprint),
        fingerprint_(std::move(fingerprint)) {}
  const std::string& fingerprint() const { return fingerprint_; }

 private:
  std::string fingerprint_;
};

class ConsistencyError : public Error {
 public:
  using Error::Error;
};

class TrainingError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class NotFoundError : public Error {
 public:
  using Error::Error;
};

}  // namespace escjudge
