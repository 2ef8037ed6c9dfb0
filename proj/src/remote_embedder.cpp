#include <future>

#include "tl/embedding.hpp"
#include "tl/errors.hpp"
#include "tl/http_json.hpp"

namespace tl {

RemoteEmbedder::RemoteEmbedder(RemoteEmbedderConfig config) : config_(std::move(config)) {
  if (config_.batch_size == 0) config_.batch_size = 1;
}

std::size_t RemoteEmbedder::dimension() const {
  std::lock_guard lock(mu_);
  return dimension_;
}

std::size_t RemoteEmbedder::request_count() const noexcept {
  std::lock_guard lock(mu_);
  return requests_;
}

std::vector<std::vector<double>> RemoteEmbedder::fetch(std::span<const std::string> inputs) {
  nlohmann::json body{{"model", config_.model}, {"inputs", inputs}};
  std::vector<std::pair<std::string, std::string>> headers;
  if (!config_.api_key.empty()) headers.emplace_back("Authorization", "Bearer " + config_.api_key);
  const RetryPolicy policy{config_.max_attempts, config_.initial_backoff, config_.timeout};
  {
    std::lock_guard lock(mu_);
    ++requests_;
  }
  const nlohmann::json res = post_json(config_.base_url, config_.path, body, headers, policy);
  const auto it = res.find("vectors");
  if (it == res.end() || !it->is_array() || it->size() != inputs.size()) {
    throw TransportError("embedding provider: response lacks one vector per input",
                         {1, false, 200, {}});
  }
  std::vector<std::vector<double>> out;
  out.reserve(inputs.size());
  for (const auto& v : *it) {
    if (!v.is_array() || v.empty()) {
      throw TransportError("embedding provider: malformed vector", {1, false, 200, {}});
    }
    out.push_back(v.get<std::vector<double>>());
  }
  return out;
}

std::vector<EmbeddingVector> RemoteEmbedder::embed_batch(std::span<const std::string> inputs) {
  std::vector<std::string> missing;
  {
    std::lock_guard lock(mu_);
    std::unordered_set<std::string> seen;
    for (const auto& s : inputs) {
      if (!memo_.count(s) && seen.insert(s).second) missing.push_back(s);
    }
  }

  // Batches go out concurrently; results are stored by input string, so the
  // completion order does not matter.
  std::vector<std::future<std::vector<std::vector<double>>>> pending;
  for (std::size_t start = 0; start < missing.size(); start += config_.batch_size) {
    const std::size_t len = std::min(config_.batch_size, missing.size() - start);
    pending.push_back(std::async(std::launch::async, [this, &missing, start, len] {
      return fetch(std::span<const std::string>(missing).subspan(start, len));
    }));
  }
  for (std::size_t b = 0; b < pending.size(); ++b) {
    auto vectors = pending[b].get();
    std::lock_guard lock(mu_);
    for (std::size_t k = 0; k < vectors.size(); ++k) {
      if (dimension_ == 0) dimension_ = vectors[k].size();
      if (vectors[k].size() != dimension_) {
        throw TransportError("embedding provider: inconsistent vector dimension",
                             {1, false, 200, {}});
      }
      memo_.emplace(missing[b * config_.batch_size + k], std::move(vectors[k]));
    }
  }

  std::vector<EmbeddingVector> out(inputs.size());
  std::lock_guard lock(mu_);
  const std::string tag = "remote:" + config_.model;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    out[i].values = memo_.at(inputs[i]);
    out[i].provider_tag = tag;
  }
  return out;
}

}  // namespace tl
