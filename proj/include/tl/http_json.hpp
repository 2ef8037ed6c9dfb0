#pragma once

#include <chrono>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

namespace tl {

struct RetryPolicy {
  int max_attempts = 3;
  std::chrono::milliseconds initial_backoff{500};  // doubled after each failed attempt
  std::chrono::milliseconds timeout{60000};
};

// POSTs a JSON body and parses a JSON response.
//   2xx        -> parsed body
//   4xx        -> ConfigError, no retry
//   5xx / I/O  -> retried per policy, then TransportError
// Malformed JSON in a 2xx response is a TransportError as well.
nlohmann::json post_json(const std::string& base_url, const std::string& path,
                         const nlohmann::json& body,
                         const std::vector<std::pair<std::string, std::string>>& headers,
                         const RetryPolicy& policy);

}  // namespace tl
