#include <thread>

#include "doctest.h"
#include "httplib.h"

#include "tl/service.hpp"

using nlohmann::json;

namespace {

struct Fixture {
  tl::FallbackEmbedder embedder;
  tl::LatticeCache cache{embedder};
  tl::SessionStore store;
  tl::CannedProvider provider{{"the sun rose over quiet hills", "the sun rose over the sea", "dawn came slowly"}};
  tl::GenerationCache generation_cache;
  tl::ModelClient client{provider, generation_cache};
  tl::ApiService api{store, cache, &client};

  tl::ApiResponse call(const std::string& method, const std::string& path, const std::string& body = "",
                       std::map<std::string, std::string> query = {},
                       std::map<std::string, std::string> headers = {}) {
    return api.handle({method, path, std::move(query), body, std::move(headers)});
  }

  std::string new_session() {
    const auto r = call("POST", "/sessions");
    REQUIRE(r.status == 201);
    return json::parse(r.body)["session_id"];
  }

  std::string seeded_session() {
    const auto id = new_session();
    const json body{{"prompt_id", "a"},
                    {"prompt_text", "Tell me a story"},
                    {"model_id", "m"},
                    {"n_generations", 4},
                    {"generations",
                     {"once upon a time a fox slept", "once upon a time a bear slept", "a king ruled",
                      {{"text", "once upon a time a fox ran"}, {"id", "custom"}}}}};
    const auto r = call("POST", "/sessions/" + id + "/prompts", body.dump());
    REQUIRE(r.status == 202);
    return id;
  }
};

std::string error_code(const tl::ApiResponse& r) { return json::parse(r.body)["error"]["code"]; }

}  // namespace

TEST_CASE("sessions") {
  Fixture f;
  const auto a = f.new_session();
  const auto b = f.new_session();
  CHECK(a != b);
  const auto got = f.call("GET", "/sessions/" + a);
  CHECK(got.status == 200);
  CHECK(json::parse(got.body)["prompts"].empty());
  CHECK(got.headers.at("Access-Control-Allow-Origin") == "*");

  const auto bad = f.call("POST", "/sessions", "{not json");
  CHECK(bad.status == 400);
  CHECK(error_code(bad) == "bad_request");
  CHECK(json::parse(bad.body)["error"].contains("detail"));
  CHECK(f.call("POST", "/sessions", R"({"bogus":1})").status == 400);
  CHECK(f.call("POST", "/sessions", R"({"view":{"lambda":3}})").status == 400);
  const auto with_view = f.call("POST", "/sessions", R"({"view":{"lambda":0.25}})");
  CHECK(json::parse(with_view.body)["view"]["lambda"] == 0.25);

  CHECK(error_code(f.call("GET", "/sessions/nope")) == "not_found");
  CHECK(f.call("GET", "/nowhere").status == 404);
  CHECK(f.call("GET", "/health").status == 200);
  const auto pre = f.call("OPTIONS", "/sessions/x/graph");
  CHECK(pre.status == 204);
  CHECK(pre.headers.at("Access-Control-Allow-Methods").find("PUT") != std::string::npos);
}

TEST_CASE("prompts and jobs") {
  Fixture f;
  const auto id = f.seeded_session();
  const auto s = json::parse(f.call("GET", "/sessions/" + id).body);
  CHECK(s["generation_count"] == 4);
  CHECK(s["prompts"][0]["palette_color"] == tl::palette_hex(0));

  const json dup{{"prompt_id", "a"}, {"prompt_text", "x"}, {"model_id", "m"}, {"generations", {"t"}}};
  const auto conflict = f.call("POST", "/sessions/" + id + "/prompts", dup.dump());
  CHECK(conflict.status == 409);
  CHECK(error_code(conflict) == "conflict");
  CHECK(error_code(f.call("POST", "/sessions/ghost/prompts", dup.dump())) == "not_found");
  CHECK(error_code(f.call("POST", "/sessions/" + id + "/prompts", R"({"prompt_id":"z","n_generations":0})")) ==
        "bad_request");

  const json sampled{{"prompt_id", "b"}, {"prompt_text", "Describe dawn"}, {"model_id", "m"}, {"n_generations", 5}};
  const auto accepted = f.call("POST", "/sessions/" + id + "/prompts", sampled.dump());
  REQUIRE(accepted.status == 202);
  const std::string job = json::parse(accepted.body)["job_id"];
  f.api.drain();
  const auto polled = json::parse(f.call("GET", "/jobs/" + job).body);
  CHECK(polled["status"] == "done");
  CHECK(polled["generation_count"] == 5);
  CHECK(json::parse(f.call("GET", "/sessions/" + id).body)["generation_count"] == 9);
  CHECK(f.call("GET", "/jobs/none").status == 404);

  // Same request again from another session: served from the generation cache.
  const auto other = f.new_session();
  f.call("POST", "/sessions/" + other + "/prompts", sampled.dump());
  f.api.drain();
  CHECK(f.client.provider_calls() == 1);
}

TEST_CASE("sampling without a provider fails the job") {
  tl::FallbackEmbedder embedder;
  tl::LatticeCache cache(embedder);
  tl::SessionStore store;
  tl::ApiService api(store, cache, nullptr);
  const auto id = json::parse(api.handle({"POST", "/sessions", {}, "", {}}).body)["session_id"].get<std::string>();
  const json body{{"prompt_id", "p"}, {"prompt_text", "x"}, {"model_id", "m"}};
  const auto r = api.handle({"POST", "/sessions/" + id + "/prompts", {}, body.dump(), {}});
  api.drain();
  const auto job = json::parse(api.handle({"GET", "/jobs/" + json::parse(r.body)["job_id"].get<std::string>(), {}, "", {}}).body);
  CHECK(job["status"] == "failed");
  CHECK(job["error"]["code"] == "provider_error");
}

TEST_CASE("graph") {
  Fixture f;
  const auto id = f.seeded_session();
  const std::string path = "/sessions/" + id + "/graph";
  const auto first = f.call("GET", path);
  REQUIRE(first.status == 200);
  const auto second = f.call("GET", path);
  CHECK(first.body == second.body);
  CHECK(first.headers.at("ETag") == second.headers.at("ETag"));
  CHECK(json::parse(f.call("GET", "/sessions/" + id).body)["version"] == 1);

  const auto cached = f.call("GET", path, "", {}, {{"if-none-match", first.headers.at("ETag")}});
  CHECK(cached.status == 304);
  CHECK(cached.body.empty());

  const auto doc = json::parse(first.body);
  const auto& panel = doc["panels"][0];
  const auto lattice = tl::lattice_from_json(panel["lattice"]);
  CHECK(panel["layout"]["schema"] == "tokenlattice/layout");
  CHECK(panel["layout"]["nodes"].size() == lattice.nodes.size());
  CHECK(doc["view"]["threshold"] == 0.5);

  const auto other = f.call("GET", path, "", {{"lambda", "1"}});
  CHECK(other.headers.at("ETag") != first.headers.at("ETag"));

  const auto chains = json::parse(f.call("GET", path, "", {{"threshold", "2"}}).body);
  const auto unmerged = tl::lattice_from_json(chains["panels"][0]["lattice"]);
  CHECK(unmerged.nodes.size() == 4);
  for (const auto& n : unmerged.nodes) CHECK(n.frequency == 1);

  CHECK(error_code(f.call("GET", path, "", {{"selection", "nope"}})) == "bad_request");
  CHECK(error_code(f.call("GET", path, "", {{"longtail", "2"}})) == "bad_request");
  CHECK(error_code(f.call("GET", path, "", {{"lambda", "abc"}})) == "bad_request");
  CHECK(error_code(f.call("GET", path, "", {{"mode", "words"}})) == "bad_request");
  CHECK(error_code(f.call("GET", "/sessions/ghost/graph")) == "not_found");

  const std::string root = lattice.nodes[lattice.traversals[0].path[0]].id;
  const auto filtered = json::parse(f.call("GET", path, "", {{"selection", root}}).body);
  const auto expected = tl::select_nodes(lattice, {root});
  CHECK(filtered["filter"] == tl::to_json(expected));
  for (const auto& p : filtered["panels"][0]["layout"]["paths"]) {
    CHECK(p["emphasized"] == expected.emphasized_generation_ids.contains(p["gen"].get<std::string>()));
  }

  const json hints{{root, {{"rx", 80.0}, {"ry", 20.0}}}};
  const auto hinted = json::parse(f.call("GET", path, "", {{"hints", hints.dump()}}).body);
  bool found = false;
  for (const auto& n : hinted["panels"][0]["layout"]["nodes"]) {
    if (n["id"] == root) {
      found = true;
      CHECK(n["rx"] == 80.0);
    }
  }
  CHECK(found);
  CHECK(error_code(f.call("GET", path, "", {{"hints", "[1]"}})) == "bad_request");

  const auto split = json::parse(f.call("GET", path, "", {{"layout", "side_by_side"}}).body);
  CHECK(split["panels"].size() == 1);
  CHECK(split["panels"][0]["scope"] == "a");
}

TEST_CASE("generations list and crosslink") {
  Fixture f;
  const auto id = f.seeded_session();
  const auto all = json::parse(f.call("GET", "/sessions/" + id + "/generations").body)["generations"];
  REQUIRE(all.size() == 4);
  for (const auto& g : all) CHECK(g["emphasized"] == true);
  CHECK(all[3]["id"] == "custom");
  CHECK(all[0]["id"] == "a:0");

  const auto lattice = tl::lattice_from_json(
      json::parse(f.call("GET", "/sessions/" + id + "/graph").body)["panels"][0]["lattice"]);
  const auto node = lattice.nodes[lattice.traversals[0].path[0]].id;
  const auto expected = tl::select_nodes(lattice, {node});
  const auto part = json::parse(
      f.call("GET", "/sessions/" + id + "/generations", "", {{"selection", node}}).body)["generations"];
  for (const auto& g : part) {
    CHECK(g["emphasized"] == expected.emphasized_generation_ids.contains(g["id"].get<std::string>()));
  }
  const auto none = json::parse(f.call("GET", "/sessions/" + id + "/generations", "",
                                       {{"selection", node}, {"filter", "none"}}).body)["generations"];
  for (const auto& g : none) CHECK(g["emphasized"] == true);
  CHECK(f.call("GET", "/sessions/ghost/generations").status == 404);

  const auto link = json::parse(f.call("GET", "/sessions/" + id + "/generations/a:0/path").body);
  CHECK(link["node_ids"] == tl::crosslink(lattice, "a:0"));
  CHECK(f.call("GET", "/sessions/" + id + "/generations/zzz/path").status == 404);
}

TEST_CASE("view updates, undo and bundles") {
  Fixture f;
  const auto id = f.seeded_session();
  const auto lattice = tl::lattice_from_json(
      json::parse(f.call("GET", "/sessions/" + id + "/graph").body)["panels"][0]["lattice"]);
  const auto node = lattice.nodes[0].id;

  const auto put = f.call("PUT", "/sessions/" + id + "/view",
                          json{{"lambda", 0.9}, {"selected_node_ids", {node}}}.dump());
  REQUIRE(put.status == 200);
  auto view = json::parse(put.body)["view"];
  CHECK(view["lambda"] == 0.9);
  CHECK(view["selected_node_ids"] == json::array({node}));
  CHECK(error_code(f.call("PUT", "/sessions/" + id + "/view", R"({"selected_node_ids":["zz"]})")) == "bad_request");

  const auto lowered = f.call("PUT", "/sessions/" + id + "/view", R"({"threshold":2})");
  view = json::parse(lowered.body)["view"];
  CHECK(view["threshold"] == 2.0);
  CHECK(view["selected_node_ids"].size() == 1);

  const auto graph_default = json::parse(f.call("GET", "/sessions/" + id + "/graph").body);
  CHECK(graph_default["view"]["lambda"] == 0.9);

  const auto exported = f.call("GET", "/sessions/" + id + "/export");
  CHECK(json::parse(exported.body)["schema"] == "tokenlattice/session");

  const auto undone = json::parse(f.call("POST", "/sessions/" + id + "/undo").body);
  CHECK(undone["view"]["threshold"] == 0.5);
  f.call("POST", "/sessions/" + id + "/undo");
  f.call("POST", "/sessions/" + id + "/undo");
  CHECK(json::parse(f.call("GET", "/sessions/" + id).body)["prompts"].empty());
  CHECK(error_code(f.call("POST", "/sessions/" + id + "/undo")) == "conflict");
  CHECK(error_code(f.call("POST", "/sessions/ghost/undo")) == "not_found");

  Fixture g;
  const auto imported = g.call("POST", "/sessions/import", exported.body);
  REQUIRE(imported.status == 201);
  const auto imported_id = json::parse(imported.body)["session_id"].get<std::string>();
  CHECK(json::parse(g.call("GET", "/sessions/" + imported_id).body)["generation_count"] == 4);
  CHECK(g.call("POST", "/sessions/import", R"({"schema":"other"})").status == 400);
}

TEST_CASE("http binding") {
  Fixture f;
  httplib::Server server;
  f.api.bind(server);
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread t([&] { server.listen_after_bind(); });
  server.wait_until_ready();
  httplib::Client client("127.0.0.1", port);

  const auto created = client.Post("/sessions", "", "application/json");
  REQUIRE(created);
  CHECK(created->status == 201);
  const std::string id = json::parse(created->body)["session_id"];
  const json body{{"prompt_id", "a"}, {"prompt_text", "x"}, {"model_id", "m"}, {"generations", {"red fox", "red hen"}}};
  CHECK(client.Post("/sessions/" + id + "/prompts", body.dump(), "application/json")->status == 202);
  const auto g1 = client.Get("/sessions/" + id + "/graph?threshold=0.5&lambda=1");
  REQUIRE(g1);
  CHECK(g1->status == 200);
  const auto etag = g1->get_header_value("ETag");
  CHECK_FALSE(etag.empty());
  CHECK(g1->get_header_value("Access-Control-Allow-Origin") == "*");
  const auto g2 = client.Get("/sessions/" + id + "/graph?threshold=0.5&lambda=1", {{"If-None-Match", etag}});
  CHECK(g2->status == 304);
  const auto bad = client.Get("/sessions/" + id + "/graph?selection=nope");
  CHECK(bad->status == 400);
  CHECK(json::parse(bad->body)["error"]["code"] == "bad_request");

  server.stop();
  t.join();
}
