#include "tl/model_client.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include "tl/digest.hpp"
#include "tl/errors.hpp"
#include "tl/session.hpp"

namespace tl {

namespace fs = std::filesystem;
using nlohmann::json;

void GenerationRequest::validate() const {
  if (n < 1) throw ContractViolation("n must be >= 1");
  if (!(temperature >= 0.0)) throw ContractViolation("temperature must be >= 0");
}

json GenerationRequest::canonical() const {
  return {{"prompt_text", prompt_text},
          {"model_id", model_id},
          {"temperature", temperature},
          {"n", n},
          {"client_seed", client_seed ? json(*client_seed) : json(nullptr)},
          {"provider", provider}};
}

std::string GenerationRequest::cache_key() const { return sha256_hex(canonical().dump()); }

std::string GenerationRequest::id_prefix() const { return cache_key().substr(0, 16); }

ChatProviderConfig ChatProviderConfig::from_env() {
  ChatProviderConfig c;
  if (const char* url = std::getenv("TOKENLATTICE_BASE_URL"); url && *url) c.base_url = url;
  if (const char* key = std::getenv("TOKENLATTICE_API_KEY"); key && *key) c.api_key = key;
  return c;
}

OpenAIChatProvider::OpenAIChatProvider(ChatProviderConfig config) : config_(std::move(config)) {}

std::vector<std::string> OpenAIChatProvider::complete(const GenerationRequest& req) {
  json body{{"model", req.model_id},
            {"messages", json::array({{{"role", "user"}, {"content", req.prompt_text}}})},
            {"temperature", req.temperature},
            {"n", req.n}};
  if (req.client_seed) body["seed"] = *req.client_seed;
  std::vector<std::pair<std::string, std::string>> headers;
  if (!config_.api_key.empty()) headers.emplace_back("Authorization", "Bearer " + config_.api_key);
  const json res = post_json(config_.base_url, config_.path, body, headers, config_.retry);

  std::vector<std::string> out;
  if (const auto it = res.find("choices"); it != res.end() && it->is_array()) {
    for (const auto& c : *it) {
      const auto msg = c.find("message");
      if (msg == c.end() || !msg->is_object()) continue;
      const auto content = msg->find("content");
      if (content != msg->end() && content->is_string()) out.push_back(content->get<std::string>());
    }
  } else {
    throw TransportError("chat provider: response has no choices", {1, false, 200, {}});
  }
  if (out.size() < static_cast<std::size_t>(req.n)) {
    throw PartialResultError("chat provider returned " + std::to_string(out.size()) + " of " +
                                 std::to_string(req.n) + " completions",
                             {1, true, 200, {}}, std::move(out));
  }
  out.resize(static_cast<std::size_t>(req.n));
  return out;
}

CannedProvider::CannedProvider(std::vector<std::string> texts, std::string name)
    : texts_(std::move(texts)), name_(std::move(name)) {
  if (texts_.empty()) throw ContractViolation("canned provider needs at least one text");
}

std::vector<std::string> CannedProvider::complete(const GenerationRequest& req) {
  {
    std::lock_guard lock(mu_);
    ++calls_;
  }
  std::vector<std::string> out;
  for (int i = 0; i < req.n; ++i) out.push_back(texts_[static_cast<std::size_t>(i) % texts_.size()]);
  return out;
}

std::size_t CannedProvider::calls() const {
  std::lock_guard lock(mu_);
  return calls_;
}

GenerationCache::GenerationCache(fs::path dir) : dir_(std::move(dir)) {
  if (!dir_.empty()) fs::create_directories(dir_);
}

std::optional<std::vector<RawGeneration>> GenerationCache::get(const std::string& key) const {
  std::lock_guard lock(mu_);
  if (const auto it = memory_.find(key); it != memory_.end()) return it->second;
  if (dir_.empty()) return std::nullopt;
  std::ifstream in(dir_ / (key + ".json"), std::ios::binary);
  if (!in) return std::nullopt;
  try {
    const json doc = json::parse(in);
    if (doc.value("schema", "") != "tokenlattice/generations") return std::nullopt;
    std::vector<RawGeneration> out;
    for (const auto& g : doc.at("generations")) out.push_back(raw_generation_from_json(g));
    return out;
  } catch (const std::exception&) {
    return std::nullopt;  // unreadable records are treated as misses and rewritten
  }
}

void GenerationCache::put(const std::string& key, const GenerationRequest& req,
                          const std::vector<RawGeneration>& generations) {
  std::lock_guard lock(mu_);
  if (dir_.empty()) {
    memory_[key] = generations;
    return;
  }
  json doc{{"schema", "tokenlattice/generations"}, {"version", 1}, {"request", req.canonical()}};
  json gens = json::array();
  for (const auto& g : generations) gens.push_back(to_json(g));
  doc["generations"] = std::move(gens);

  const fs::path final_path = dir_ / (key + ".json");
  const fs::path tmp = dir_ / (key + ".json.tmp." + std::to_string(::getpid()));
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << doc.dump(2) << '\n';
    if (!out) throw Error("cannot write cache record " + tmp.string());
  }
  fs::rename(tmp, final_path);
}

ModelClient::ModelClient(ChatProvider& provider, GenerationCache& cache)
    : provider_(provider), cache_(cache) {}

std::size_t ModelClient::provider_calls() const {
  std::lock_guard lock(mu_);
  return calls_;
}

std::vector<RawGeneration> ModelClient::sample(GenerationRequest req, const std::string& prompt_id) {
  req.validate();
  if (req.provider.empty()) req.provider = provider_.endpoint();
  const std::string key = req.cache_key();

  const auto stamp = [&](std::vector<RawGeneration> gens) {
    for (auto& g : gens) g.prompt_id = prompt_id;
    return gens;
  };
  if (auto hit = cache_.get(key)) return stamp(std::move(*hit));

  std::promise<std::vector<RawGeneration>> promise;
  std::shared_future<std::vector<RawGeneration>> shared;
  bool leader = false;
  {
    std::lock_guard lock(mu_);
    if (const auto it = inflight_.find(key); it != inflight_.end()) {
      shared = it->second;
    } else {
      shared = promise.get_future().share();
      inflight_.emplace(key, shared);
      leader = true;
      ++calls_;
    }
  }
  if (!leader) return stamp(shared.get());

  try {
    const auto texts = provider_.complete(req);
    if (texts.size() != static_cast<std::size_t>(req.n)) {
      throw PartialResultError("provider returned the wrong number of completions",
                               {1, false, 200, {}}, texts);
    }
    std::vector<RawGeneration> gens;
    const std::string prefix = req.id_prefix();
    for (std::size_t i = 0; i < texts.size(); ++i) {
      gens.push_back({prefix + ":" + std::to_string(i), "", texts[i], req.model_id, req.temperature, i});
    }
    cache_.put(key, req, gens);
    promise.set_value(gens);
  } catch (...) {
    promise.set_exception(std::current_exception());
  }
  {
    std::lock_guard lock(mu_);
    inflight_.erase(key);
  }
  return stamp(shared.get());
}

std::vector<RawGeneration> import_corpus(const fs::path& path, const std::string& prompt_id) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFound("cannot open corpus " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string bytes = buf.str();
  const std::string digest = sha256_hex(bytes).substr(0, 16);
  const bool jsonl = path.extension() == ".jsonl";

  std::vector<RawGeneration> out;
  std::istringstream lines(bytes);
  std::string line;
  std::size_t number = 0;
  while (std::getline(lines, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    RawGeneration g;
    g.id = digest + ":" + std::to_string(number);
    g.prompt_id = prompt_id;
    g.sample_index = out.size();
    if (jsonl) {
      json rec;
      try {
        rec = json::parse(line);
      } catch (const json::parse_error&) {
        throw ParseError(path.string() + ": malformed JSON", number);
      }
      if (!rec.is_object()) throw ParseError(path.string() + ": record is not an object", number);
      const auto text = rec.find("text");
      if (text == rec.end() || !text->is_string()) {
        throw ParseError(path.string() + ": record needs a string 'text'", number);
      }
      g.text = text->get<std::string>();
      if (const auto p = rec.find("prompt_id"); p != rec.end()) {
        if (!p->is_string()) throw ParseError(path.string() + ": 'prompt_id' must be a string", number);
        g.prompt_id = p->get<std::string>();
      }
    } else {
      g.text = line;
    }
    out.push_back(std::move(g));
  }
  return out;
}

}  // namespace tl
