#include <atomic>
#include <filesystem>
#include <fstream>
#include <thread>

#include "doctest.h"
#include "httplib.h"

#include "tl/errors.hpp"
#include "tl/model_client.hpp"

namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("tl_mc_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

tl::GenerationRequest request(int n = 3) {
  tl::GenerationRequest r;
  r.prompt_text = "Describe a sunrise.";
  r.model_id = "m1";
  r.temperature = 0.7;
  r.n = n;
  return r;
}

// Chat-completion stub; `mode` picks the behaviour per test.
struct StubServer {
  httplib::Server server;
  std::thread thread;
  int port = 0;
  std::atomic<int> hits{0};
  std::atomic<int> mode{0};  // 0 ok, 1 short batch, 2 always 500, 3 401
  nlohmann::json last_body;
  std::mutex mu;

  StubServer() {
    server.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      ++hits;
      const auto body = nlohmann::json::parse(req.body);
      {
        std::lock_guard lock(mu);
        last_body = body;
      }
      if (mode == 2) {
        res.status = 500;
        return;
      }
      if (mode == 3) {
        res.status = 401;
        res.set_content(R"({"error":"no key"})", "application/json");
        return;
      }
      int n = body.at("n").get<int>();
      if (mode == 1) n -= 1;
      nlohmann::json choices = nlohmann::json::array();
      for (int i = 0; i < n; ++i) {
        choices.push_back({{"index", i}, {"message", {{"role", "assistant"}, {"content", "text " + std::to_string(i)}}}});
      }
      res.set_content(nlohmann::json{{"choices", choices}}.dump(), "application/json");
    });
    port = server.bind_to_any_port("127.0.0.1");
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }
  ~StubServer() {
    server.stop();
    thread.join();
  }

  tl::ChatProviderConfig config() const {
    tl::ChatProviderConfig c;
    c.base_url = "http://127.0.0.1:" + std::to_string(port);
    c.api_key = "secret";
    c.retry.initial_backoff = std::chrono::milliseconds(1);
    c.retry.timeout = std::chrono::milliseconds(2000);
    return c;
  }
};

}  // namespace

TEST_CASE("request validation and keys") {
  auto r = request();
  CHECK_NOTHROW(r.validate());
  r.n = 0;
  CHECK_THROWS_AS(r.validate(), tl::ContractViolation);
  r = request();
  r.temperature = -0.1;
  CHECK_THROWS_AS(r.validate(), tl::ContractViolation);

  const auto base = request().cache_key();
  CHECK(request().cache_key() == base);
  CHECK(base.size() == 64);
  auto changed = request();
  changed.prompt_text += " ";
  CHECK(changed.cache_key() != base);
  changed = request();
  changed.model_id = "m2";
  CHECK(changed.cache_key() != base);
  changed = request();
  changed.temperature = 0.70000001;
  CHECK(changed.cache_key() != base);
  changed = request(4);
  CHECK(changed.cache_key() != base);
  changed = request();
  changed.client_seed = 0;
  CHECK(changed.cache_key() != base);
  changed = request();
  changed.provider = "other";
  CHECK(changed.cache_key() != base);
}

TEST_CASE("canned provider ids are in order") {
  tl::CannedProvider provider({"one", "two"});
  tl::GenerationCache cache;
  tl::ModelClient client(provider, cache);
  auto req = request(3);
  const auto gens = client.sample(req, "p");
  REQUIRE(gens.size() == 3);
  req.provider = provider.endpoint();
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(gens[i].id == req.id_prefix() + ":" + std::to_string(i));
    CHECK(gens[i].prompt_id == "p");
    CHECK(gens[i].sample_index == i);
  }
  CHECK(gens[2].text == "one");
  CHECK_THROWS_AS(client.sample(request(0)), tl::ContractViolation);
  CHECK(provider.calls() == 1);
}

TEST_CASE("cached repeats make no provider call") {
  const auto dir = scratch("cache");
  tl::CannedProvider provider({"alpha", "beta", "gamma"});
  nlohmann::json first_bytes;
  {
    tl::GenerationCache cache(dir);
    tl::ModelClient client(provider, cache);
    const auto a = client.sample(request(), "p");
    const auto b = client.sample(request(), "p");
    CHECK(client.provider_calls() == 1);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].id == b[i].id);
      CHECK(a[i].text == b[i].text);
      CHECK(a[i].temperature == b[i].temperature);
    }
  }
  // A fresh process view of the same directory.
  tl::GenerationCache cache(dir);
  tl::ModelClient client(provider, cache);
  const auto c = client.sample(request(), "q");
  CHECK(client.provider_calls() == 0);
  CHECK(provider.calls() == 1);
  CHECK(c[1].text == "beta");
  CHECK(c[1].prompt_id == "q");
  for (const auto& e : fs::directory_iterator(dir)) CHECK(e.path().extension() == ".json");
  fs::remove_all(dir);
}

TEST_CASE("concurrent identical requests share one call") {
  tl::CannedProvider provider({"x"});
  tl::GenerationCache cache;
  tl::ModelClient client(provider, cache);
  std::vector<std::thread> threads;
  std::vector<std::vector<tl::RawGeneration>> results(8);
  for (int i = 0; i < 8; ++i) {
    threads.emplace_back([&, i] { results[static_cast<std::size_t>(i)] = client.sample(request(5)); });
  }
  for (auto& t : threads) t.join();
  CHECK(provider.calls() == 1);
  for (const auto& r : results) CHECK(r.size() == 5);
}

TEST_CASE("openai-compatible provider") {
  StubServer stub;
  tl::OpenAIChatProvider provider(stub.config());

  SUBCASE("happy path") {
    auto req = request(4);
    req.client_seed = 9;
    const auto texts = provider.complete(req);
    REQUIRE(texts.size() == 4);
    CHECK(texts[3] == "text 3");
    std::lock_guard lock(stub.mu);
    CHECK(stub.last_body["model"] == "m1");
    CHECK(stub.last_body["n"] == 4);
    CHECK(stub.last_body["seed"] == 9);
    CHECK(stub.last_body["messages"][0]["content"] == "Describe a sunrise.");
  }
  SUBCASE("short batch") {
    stub.mode = 1;
    try {
      provider.complete(request(4));
      FAIL("expected PartialResultError");
    } catch (const tl::PartialResultError& e) {
      CHECK(e.completed().size() == 3);
    }
    tl::GenerationCache cache;
    tl::ModelClient client(provider, cache);
    CHECK_THROWS_AS(client.sample(request(4)), tl::PartialResultError);
    auto req = request(4);
    req.provider = provider.endpoint();
    CHECK_FALSE(cache.get(req.cache_key()).has_value());
  }
  SUBCASE("server errors are retried then reported") {
    stub.mode = 2;
    CHECK_THROWS_AS(provider.complete(request()), tl::TransportError);
    CHECK(stub.hits == 3);
  }
  SUBCASE("client errors are not retried") {
    stub.mode = 3;
    CHECK_THROWS_AS(provider.complete(request()), tl::ConfigError);
    CHECK(stub.hits == 1);
  }
}

TEST_CASE("unreachable provider") {
  tl::ChatProviderConfig c;
  c.base_url = "http://127.0.0.1:1";
  c.retry.max_attempts = 2;
  c.retry.initial_backoff = std::chrono::milliseconds(1);
  c.retry.timeout = std::chrono::milliseconds(500);
  tl::OpenAIChatProvider provider(c);
  CHECK_THROWS_AS(provider.complete(request()), tl::TransportError);
}

TEST_CASE("import_corpus") {
  const auto dir = scratch("import");
  {
    std::ofstream out(dir / "twenty.txt");
    for (int i = 0; i < 20; ++i) out << "completion " << (i % 5) << "\n";
  }
  const auto twenty = tl::import_corpus(dir / "twenty.txt", "p");
  REQUIRE(twenty.size() == 20);
  CHECK(twenty[0].text == twenty[5].text);
  CHECK(twenty[0].id != twenty[5].id);
  CHECK(twenty[19].id.ends_with(":20"));

  { std::ofstream out(dir / "empty.txt"); }
  CHECK(tl::import_corpus(dir / "empty.txt", "p").empty());

  {
    std::ofstream out(dir / "records.jsonl");
    out << R"({"text":"a b","prompt_id":"x","meta":{"k":1}})" << "\n\n" << R"({"text":"c"})" << "\n";
  }
  const auto recs = tl::import_corpus(dir / "records.jsonl", "fallback");
  REQUIRE(recs.size() == 2);
  CHECK(recs[0].prompt_id == "x");
  CHECK(recs[1].prompt_id == "fallback");
  CHECK(recs[1].id.ends_with(":3"));
  CHECK(recs[0].id.substr(0, 17) == tl::import_corpus(dir / "records.jsonl", "y")[0].id.substr(0, 17));

  {
    std::ofstream out(dir / "bad.jsonl");
    out << R"({"text":"ok"})" << "\n" << R"({"text":"ok"})" << "\n" << R"({"txt":"no"})" << "\n";
  }
  try {
    tl::import_corpus(dir / "bad.jsonl", "p");
    FAIL("expected ParseError");
  } catch (const tl::ParseError& e) {
    CHECK(e.line() == 3);
  }
  CHECK_THROWS_AS(tl::import_corpus(dir / "missing.txt", "p"), tl::NotFound);
  fs::remove_all(dir);
}
