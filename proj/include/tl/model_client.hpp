#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <future>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "tl/http_json.hpp"
#include "tl/segment.hpp"

namespace tl {

struct GenerationRequest {
  std::string prompt_text;
  std::string model_id;
  double temperature = 1.0;
  int n = 20;
  std::optional<std::uint64_t> client_seed;
  std::string provider;  // endpoint identity; ModelClient fills it when empty

  // n >= 1 and temperature >= 0, else ContractViolation.
  void validate() const;
  nlohmann::json canonical() const;
  // SHA-256 of the canonical JSON.
  std::string cache_key() const;
  // Prefix of generation ids: the first 16 hex digits of cache_key().
  std::string id_prefix() const;
};

class ChatProvider {
 public:
  virtual ~ChatProvider() = default;
  virtual std::string endpoint() const = 0;
  // Returns exactly req.n completions or throws ProviderError.
  virtual std::vector<std::string> complete(const GenerationRequest& req) = 0;
};

struct ChatProviderConfig {
  std::string base_url = "http://127.0.0.1:8000";
  std::string path = "/v1/chat/completions";
  std::string api_key;
  RetryPolicy retry;

  // TOKENLATTICE_BASE_URL and TOKENLATTICE_API_KEY override the defaults.
  static ChatProviderConfig from_env();
};

// OpenAI-compatible chat completions: POST {model, messages, temperature, n[, seed]}.
class OpenAIChatProvider final : public ChatProvider {
 public:
  explicit OpenAIChatProvider(ChatProviderConfig config);
  std::string endpoint() const override { return config_.base_url + config_.path; }
  std::vector<std::string> complete(const GenerationRequest& req) override;

 private:
  ChatProviderConfig config_;
};

// Returns texts[i % texts.size()] for i in [0, n). For tests and demos.
class CannedProvider final : public ChatProvider {
 public:
  explicit CannedProvider(std::vector<std::string> texts, std::string name = "canned");
  std::string endpoint() const override { return name_; }
  std::vector<std::string> complete(const GenerationRequest& req) override;
  std::size_t calls() const;

 private:
  std::vector<std::string> texts_;
  std::string name_;
  mutable std::mutex mu_;
  std::size_t calls_ = 0;
};

// Content-addressed JSON records, one file per cache key. An empty directory
// keeps records in memory only.
class GenerationCache {
 public:
  explicit GenerationCache(std::filesystem::path dir = {});

  std::optional<std::vector<RawGeneration>> get(const std::string& key) const;
  // Write-then-rename, so readers never see a partial record.
  void put(const std::string& key, const GenerationRequest& req,
           const std::vector<RawGeneration>& generations);

  const std::filesystem::path& dir() const noexcept { return dir_; }

 private:
  std::filesystem::path dir_;
  mutable std::mutex mu_;
  std::map<std::string, std::vector<RawGeneration>> memory_;
};

class ModelClient {
 public:
  ModelClient(ChatProvider& provider, GenerationCache& cache);

  // Exactly req.n generations with ids "<id_prefix>:i". Cached requests make no
  // provider call; concurrent identical requests share one call.
  std::vector<RawGeneration> sample(GenerationRequest req, const std::string& prompt_id = "");

  std::size_t provider_calls() const;

 private:
  ChatProvider& provider_;
  GenerationCache& cache_;
  mutable std::mutex mu_;
  std::map<std::string, std::shared_future<std::vector<RawGeneration>>> inflight_;
  std::size_t calls_ = 0;
};

// One completion per record: JSON lines ({"text", optional "prompt_id",
// "meta"}) for .jsonl files, raw lines otherwise. Blank lines are skipped.
// Ids are "<file digest>:<line>". Missing file: NotFound; bad record: ParseError.
std::vector<RawGeneration> import_corpus(const std::filesystem::path& path,
                                         const std::string& prompt_id);

}  // namespace tl
