#pragma once

#include <chrono>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace tl {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A caller broke an operation's precondition (zero vector, dimension
// mismatch, out-of-range index, n == 0, ...).
class ContractViolation : public Error {
 public:
  using Error::Error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class NotFound : public Error {
 public:
  using Error::Error;
};

class Conflict : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(line == 0 ? what : what + " (line " + std::to_string(line) + ")"), line_(line) {}

  // 1-based; 0 when the error is not tied to a line.
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// Failure talking to an external provider (embedding or chat completion).
class ProviderError : public Error {
 public:
  struct RetryInfo {
    int attempts = 0;
    bool retryable = false;
    int http_status = 0;  // 0 for transport-level failures
    std::chrono::milliseconds next_backoff{0};
  };

  ProviderError(const std::string& what, RetryInfo info) : Error(what), info_(info) {}

  const RetryInfo& retry() const noexcept { return info_; }

 private:
  RetryInfo info_;
};

// Provider answered 4xx: the request or credentials are wrong; retrying won't help.
class ConfigError : public ProviderError {
 public:
  using ProviderError::ProviderError;
};

// 5xx or timeouts after the retry budget was spent.
class TransportError : public ProviderError {
 public:
  using ProviderError::ProviderError;
};

// The provider returned fewer completions than requested.
class PartialResultError : public ProviderError {
 public:
  PartialResultError(const std::string& what, RetryInfo info, std::vector<std::string> completed)
      : ProviderError(what, info), completed_(std::move(completed)) {}

  const std::vector<std::string>& completed() const noexcept { return completed_; }

 private:
  std::vector<std::string> completed_;
};

}  // namespace tl
