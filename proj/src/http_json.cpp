#include "tl/http_json.hpp"

#include <httplib.h>

#include <thread>

#include "tl/errors.hpp"

namespace tl {

nlohmann::json post_json(const std::string& base_url, const std::string& path,
                         const nlohmann::json& body,
                         const std::vector<std::pair<std::string, std::string>>& headers,
                         const RetryPolicy& policy) {
  httplib::Client client(base_url);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(policy.timeout);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(policy.timeout - secs);
  client.set_connection_timeout(secs.count(), usecs.count());
  client.set_read_timeout(secs.count(), usecs.count());
  client.set_write_timeout(secs.count(), usecs.count());

  httplib::Headers hdrs;
  for (const auto& [k, v] : headers) hdrs.emplace(k, v);
  const std::string payload = body.dump();

  auto backoff = policy.initial_backoff;
  const int attempts = std::max(1, policy.max_attempts);
  std::string last_error;
  int last_status = 0;
  for (int attempt = 1; attempt <= attempts; ++attempt) {
    auto res = client.Post(path, hdrs, payload, "application/json");
    if (res) {
      last_status = res->status;
      if (res->status >= 200 && res->status < 300) {
        try {
          return nlohmann::json::parse(res->body);
        } catch (const nlohmann::json::exception& e) {
          throw TransportError(base_url + path + ": malformed JSON response: " + e.what(),
                               {attempt, false, res->status, {}});
        }
      }
      if (res->status >= 400 && res->status < 500) {
        throw ConfigError(base_url + path + ": HTTP " + std::to_string(res->status) + ": " +
                              res->body.substr(0, 200),
                          {attempt, false, res->status, {}});
      }
      last_error = "HTTP " + std::to_string(res->status);
    } else {
      last_status = 0;
      last_error = httplib::to_string(res.error());
    }
    if (attempt < attempts) {
      std::this_thread::sleep_for(backoff);
      backoff *= 2;
    }
  }
  throw TransportError(base_url + path + ": " + last_error + " after " + std::to_string(attempts) +
                           " attempt(s)",
                       {attempts, true, last_status, backoff});
}

}  // namespace tl
