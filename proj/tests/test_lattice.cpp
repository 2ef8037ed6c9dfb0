#include <fstream>
#include <sstream>

#include "doctest.h"

#include "tl/errors.hpp"
#include "tl/lattice.hpp"

using tl::SegmentationMode;

namespace {

std::vector<tl::RawGeneration> raw_from(const std::vector<std::string>& texts,
                                        const std::string& prompt = "p") {
  std::vector<tl::RawGeneration> out;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    out.push_back({"g" + std::to_string(i), prompt, texts[i], "m", 1.0, i});
  }
  return out;
}

tl::TokenLattice chains_of(const std::vector<std::string>& texts) {
  const auto raw = raw_from(texts);
  return tl::build_chains(tl::segment_generations(raw, SegmentationMode::space),
                          SegmentationMode::space);
}

double exact_match(const tl::TokenLattice& l, std::uint32_t ga, std::uint32_t ia, std::uint32_t gb,
                   std::uint32_t ib) {
  return l.generations[ga].tokens[ia].surface == l.generations[gb].tokens[ib].surface ? 1.0 : 0.0;
}

tl::TokenLattice exact_merge(const tl::TokenLattice& l, double threshold) {
  return tl::merge_similar(l, threshold, [&](auto ga, auto ia, auto gb, auto ib) {
    return exact_match(l, ga, ia, gb, ib);
  });
}

std::vector<tl::RawGeneration> load_fixture(const std::string& name) {
  std::ifstream in(std::string(TL_SOURCE_DIR) + "/tests/fixtures/" + name);
  REQUIRE(in.good());
  std::vector<tl::RawGeneration> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    if (name.ends_with(".jsonl")) {
      const auto j = nlohmann::json::parse(line);
      out.push_back({"f" + std::to_string(out.size()), j.value("prompt_id", "p"),
                     j.at("text").get<std::string>(), "m", 1.0, out.size()});
    } else {
      out.push_back({"f" + std::to_string(out.size()), "p", line, "m", 1.0, out.size()});
    }
  }
  return out;
}

void check_sound(const tl::TokenLattice& l) {
  const auto problems = tl::check_invariants(l);
  for (const auto& p : problems) MESSAGE(p);
  CHECK(problems.empty());
}

}  // namespace

TEST_CASE("build_chains") {
  const auto one = chains_of({"a b c"});
  CHECK(one.nodes.size() == 3);
  CHECK(one.traversal_edges().size() == 2);
  const auto two = chains_of({"a b c", "d e f"});
  CHECK(two.nodes.size() == 6);
  CHECK(two.traversal_edges().size() == 4);
  check_sound(two);
  const auto none = chains_of({});
  CHECK(none.nodes.empty());
  CHECK(tl::stats(none).compression_ratio == 1.0);
}

TEST_CASE("merge with identical tokens branches after the shared prefix") {
  const auto l = chains_of({"a b c", "a b d"});
  const auto m = exact_merge(l, 0.5);
  CHECK(m.nodes.size() == 4);
  check_sound(m);
  const auto b = std::find_if(m.nodes.begin(), m.nodes.end(), [](auto& n) { return n.label == "b"; });
  REQUIRE(b != m.nodes.end());
  CHECK(b->frequency == 2);
  std::size_t out_of_b = 0;
  const auto bi = static_cast<std::uint32_t>(b - m.nodes.begin());
  for (const auto& [e, c] : m.adjacency()) out_of_b += e.first == bi;
  CHECK(out_of_b == 2);

  const auto c = tl::collapse_chains(m);
  CHECK(c.nodes.size() == 3);
  check_sound(c);
}

TEST_CASE("merges that would close a cycle are rejected") {
  const auto l = chains_of({"x y", "y x"});
  const auto m = exact_merge(l, 0.5);
  CHECK(m.nodes.size() == 3);
  check_sound(m);
}

TEST_CASE("threshold above one merges nothing") {
  tl::FallbackEmbedder e;
  const auto raw = raw_from({"the cat sat", "the cat sat", "a dog ran"});
  tl::LatticeBuilder b(raw, e);
  const auto m = b.merged(1.01);
  CHECK(m.nodes.size() == 9);
  CHECK(tl::to_json(m)["nodes"] == tl::to_json(b.chains())["nodes"]);
}

TEST_CASE("collapse") {
  const auto chain = tl::collapse_chains(chains_of({"a b c"}));
  REQUIRE(chain.nodes.size() == 1);
  CHECK(chain.nodes[0].label == "a b c");

  const auto branched = tl::collapse_chains(exact_merge(chains_of({"a b", "a c"}), 0.5));
  CHECK(branched.nodes.size() == 3);
  for (const auto& n : branched.nodes) CHECK(n.label.size() == 1);

  const auto joined = tl::collapse_chains(exact_merge(chains_of({"b d", "c d"}), 0.5));
  CHECK(joined.nodes.size() == 3);
  check_sound(joined);
}

TEST_CASE("stats for identical and disjoint corpora") {
  tl::FallbackEmbedder e;
  const std::vector<std::string> same(10, "the quick brown fox jumps");
  tl::LatticeBuilder b(raw_from(same), e);
  const auto s = tl::stats(b.rebuild_with_threshold(0.5));
  CHECK(s.node_count == 1);
  CHECK(s.distinct_path_count == 1);
  CHECK(s.compression_ratio == doctest::Approx(1.0 / 50.0));

  std::vector<std::string> disjoint;
  for (int i = 0; i < 10; ++i) disjoint.push_back("w" + std::to_string(i) + "a");
  const auto d = tl::stats(tl::collapse_chains(chains_of(disjoint)));
  CHECK(d.compression_ratio == 1.0);
  CHECK(d.distinct_path_count == 10);
}

TEST_CASE("paraphrase fixture matches the oracle") {
  tl::FallbackEmbedder e;
  tl::LatticeBuilder b(load_fixture("paraphrase5.txt"), e);
  const auto merged = b.merged(0.5);
  CHECK(merged.nodes.size() == 26);
  const auto l = b.rebuild_with_threshold(0.5);
  check_sound(l);
  const auto s = tl::stats(l);
  CHECK(s.node_count == 18);
  CHECK(s.distinct_path_count == 5);
  CHECK(s.traversal_edge_count == 33);
  CHECK(s.compression_ratio == doctest::Approx(0.3673469387755102));
  CHECK(s.mean_out_degree == doctest::Approx(1.2777777777777777));
}

TEST_CASE("mixed fixture threshold sweep matches the oracle") {
  struct Golden {
    double t;
    std::size_t merged, nodes, paths, edges;
    double ratio, degree;
  };
  const Golden goldens[] = {
      {0.2, 31, 22, 6, 64, 0.23157894736842105, 1.2272727272727273},
      {0.5, 45, 25, 7, 51, 0.2631578947368421, 1.2},
      {0.8, 46, 28, 7, 59, 0.29473684210526313, 1.2142857142857142},
  };
  tl::FallbackEmbedder e;
  tl::LatticeBuilder b(load_fixture("mixed.jsonl"), e);
  for (const auto& g : goldens) {
    CAPTURE(g.t);
    CHECK(b.merged(g.t).nodes.size() == g.merged);
    const auto l = b.rebuild_with_threshold(g.t);
    check_sound(l);
    const auto s = tl::stats(l);
    CHECK(s.node_count == g.nodes);
    CHECK(s.distinct_path_count == g.paths);
    CHECK(s.traversal_edge_count == g.edges);
    CHECK(s.compression_ratio == doctest::Approx(g.ratio));
    CHECK(s.mean_out_degree == doctest::Approx(g.degree));
  }
}

TEST_CASE("rebuild is deterministic and reuses scores") {
  tl::FallbackEmbedder e;
  tl::LatticeBuilder b(load_fixture("mixed.jsonl"), e);
  const auto first = tl::to_json(b.rebuild_with_threshold(0.5)).dump();
  const auto evaluations = b.scorer().evaluations();
  CHECK(tl::to_json(b.rebuild_with_threshold(0.5)).dump() == first);
  CHECK(tl::to_json(b.rebuild_with_threshold(0.7)).dump() != first);
  CHECK(b.scorer().evaluations() == evaluations);

  tl::FallbackEmbedder e2;
  tl::LatticeBuilder again(load_fixture("mixed.jsonl"), e2);
  CHECK(tl::to_json(again.rebuild_with_threshold(0.5)).dump() == first);
}

TEST_CASE("scorer agrees with token_similarity off the fast path") {
  tl::FallbackEmbedder e;
  const auto gens = tl::segment_generations(load_fixture("mixed.jsonl"), SegmentationMode::space);
  tl::PairScorer scorer(gens, e);
  for (std::uint32_t i = 0; i < gens[0].tokens.size(); ++i) {
    for (std::uint32_t j = 0; j < gens[5].tokens.size(); ++j) {
      if (tl::ascii_fold(gens[0].tokens[i].surface) == tl::ascii_fold(gens[5].tokens[j].surface)) continue;
      const double want = tl::token_similarity(e, {&gens[0].tokens, i}, {&gens[5].tokens, j});
      CHECK(scorer.score(0, i, 5, j) == doctest::Approx(want).epsilon(1e-12));
    }
  }
}

TEST_CASE("path reconstruction across modes") {
  tl::FallbackEmbedder e;
  const auto raw = raw_from({"  Once, there was a fox.  It ran far!", "Once, there was a dog. It ran,\tfar!\n",
                             "Nothing here"});
  for (auto mode : {SegmentationMode::space, SegmentationMode::sentence, SegmentationMode::phrase}) {
    tl::LatticeBuilder b(raw, e, {mode, {}});
    for (double t : {0.0, 0.5, 1.01}) {
      const auto l = b.rebuild_with_threshold(t);
      check_sound(l);
      for (std::size_t g = 0; g < raw.size(); ++g) CHECK(l.reconstruct(g) == raw[g].text);
    }
  }
}

TEST_CASE("json round trip and validation") {
  tl::FallbackEmbedder e;
  tl::LatticeBuilder b(load_fixture("mixed.jsonl"), e);
  const auto l = b.rebuild_with_threshold(0.5);
  const auto doc = tl::to_json(l);
  const auto back = tl::lattice_from_json(doc);
  CHECK(tl::to_json(back) == doc);
  CHECK(back.merge_threshold == 0.5);

  auto broken = doc;
  broken["traversals"][0]["path"].erase(0);
  CHECK_THROWS_AS(tl::lattice_from_json(broken), tl::ParseError);
  auto wrong = doc;
  wrong["schema"] = "other";
  CHECK_THROWS_AS(tl::lattice_from_json(wrong), tl::ParseError);
  CHECK_THROWS_AS(tl::lattice_from_json(nlohmann::json::array()), tl::ParseError);

  const auto dot = tl::to_dot(l);
  CHECK(dot.find("digraph") != std::string::npos);
}
