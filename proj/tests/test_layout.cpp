#include <cmath>
#include <fstream>

#include "doctest.h"

#include "tl/errors.hpp"
#include "tl/layout.hpp"

using tl::SegmentationMode;

namespace {

tl::TokenLattice lattice_of(const std::vector<std::string>& texts,
                            const std::vector<std::string>& prompts = {}, double threshold = 0.5) {
  std::vector<tl::RawGeneration> raw;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    raw.push_back({"g" + std::to_string(i), prompts.empty() ? "p" : prompts[i], texts[i], "m", 1.0, i});
  }
  tl::FallbackEmbedder e;
  tl::LatticeBuilder b(raw, e);
  return b.rebuild_with_threshold(threshold);
}

// Twelve nodes, two branch points.
tl::TokenLattice twelve_node_fixture() {
  std::ifstream in(std::string(TL_SOURCE_DIR) + "/tests/fixtures/layout12.json");
  REQUIRE(in.good());
  return tl::lattice_from_json(nlohmann::json::parse(in));
}

bool same_result(const tl::LayoutResult& a, const tl::LayoutResult& b) {
  if (a.nodes.size() != b.nodes.size() || a.iterations_used != b.iterations_used) return false;
  for (std::size_t i = 0; i < a.nodes.size(); ++i) {
    if (a.nodes[i].x != b.nodes[i].x || a.nodes[i].y != b.nodes[i].y) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("horizontal target") {
  CHECK(tl::horizontal_target({}, 0.5, 40.0) == 40.0);
  const double parents[] = {100.0, 300.0};
  CHECK(tl::horizontal_target(parents, 1.0, 40.0) == 300.0);
  CHECK(tl::horizontal_target(parents, 0.5, 40.0) == 200.0);
  CHECK(tl::horizontal_target(parents, 0.0, 40.0) == 100.0);
  const double one[] = {120.0};
  CHECK(tl::horizontal_target(one, 0.3, 40.0) == 120.0);
}

TEST_CASE("node size") {
  CHECK(tl::node_size(1, 20) == 0.5);
  CHECK(tl::node_size(20, 20) == 2.0);
  CHECK(tl::node_size(4, 16) / tl::node_size(1, 16) == doctest::Approx(2.0));
  double last = 0.0;
  for (std::size_t f = 1; f <= 20; ++f) {
    const double s = tl::node_size(f, 20);
    CHECK(s >= last);
    last = s;
  }
}

TEST_CASE("node colour") {
  const tl::PromptPalette palette{{"A", tl::rgb_from_hex("#E69F00")}, {"B", tl::rgb_from_hex("#56B4E9")}};
  const auto a = palette.at("A"), b = palette.at("B");
  CHECK(tl::node_color({{"A", 5}}, palette) == a);
  const auto even = tl::node_color({{"A", 1}, {"B", 1}}, palette);
  CHECK(even.r == doctest::Approx(0.5 * a.r + 0.5 * b.r));
  CHECK(even.b == doctest::Approx(0.5 * a.b + 0.5 * b.b));
  const auto weighted = tl::node_color({{"A", 3}, {"B", 1}}, palette);
  CHECK(weighted.g == doctest::Approx(0.75 * a.g + 0.25 * b.g));
  CHECK_THROWS_AS(tl::node_color({{"C", 1}}, palette), tl::ContractViolation);
  CHECK(tl::rgb_to_hex(a) == "#E69F00");
  CHECK(tl::palette_hex(0) == "#E69F00");
  CHECK(tl::palette_hex(1) == "#56B4E9");
  CHECK(tl::palette_hex(8) != tl::palette_hex(0));
  CHECK(tl::palette_hex(16) != tl::palette_hex(8));
  CHECK_THROWS_AS(tl::rgb_from_hex("red"), tl::InvalidArgument);
}

TEST_CASE("longtail opacity") {
  CHECK(tl::longtail_opacity(1, 20, 0.0) == 1.0);
  CHECK(tl::longtail_opacity(20, 20, 0.7) == 1.0);
  CHECK(tl::longtail_opacity(1, 20, 0.5) == doctest::Approx(0.1));
  CHECK(tl::longtail_opacity(1, 100, 1.0) == 0.08);
}

TEST_CASE("params validation") {
  tl::LayoutParams p;
  CHECK_NOTHROW(p.validate());
  p.lambda = 1.5;
  CHECK_THROWS_AS(p.validate(), tl::InvalidArgument);
  p = {};
  p.max_iterations = 0;
  CHECK_THROWS_AS(p.validate(), tl::InvalidArgument);
  p = {};
  p.convergence_epsilon = 0.0;
  CHECK_THROWS_AS(p.validate(), tl::InvalidArgument);
  const auto back = tl::layout_params_from_json(tl::to_json(tl::LayoutParams{}));
  CHECK(tl::to_json(back) == tl::to_json(tl::LayoutParams{}));
  CHECK_THROWS_AS(tl::layout_params_from_json({{"lambda", "x"}}), tl::InvalidArgument);
}

TEST_CASE("single chain lays out left to right near the midline") {
  const auto l = lattice_of({"one two three four"}, {}, 1.01);
  tl::LayoutParams p;
  const auto before_collapse = tl::build_chains(l.generations, SegmentationMode::space);
  const auto r = tl::compute_layout(before_collapse, p);
  REQUIRE(r.nodes.size() == 4);
  for (std::size_t i = 1; i < 4; ++i) CHECK(r.nodes[i].x > r.nodes[i - 1].x);
  for (const auto& n : r.nodes) CHECK(std::abs(n.y - p.canvas_height / 2) < 2.0);
  CHECK(r.converged);
  CHECK(r.paths.size() == 1);
  CHECK(r.paths[0].points.size() == 4);
  CHECK(r.nodes[0].x - r.nodes[0].rx == doctest::Approx(p.left_offset));
}

TEST_CASE("layout is deterministic and overlap free") {
  const auto l = lattice_of({"the cat sat on the mat", "the dog sat on the rug", "a cat ran to the mat",
                             "the cat sat on the mat"});
  tl::LayoutParams p;
  const auto a = tl::compute_layout(l, p);
  const auto b = tl::compute_layout(l, p);
  CHECK(same_result(a, b));
  CHECK(tl::render_svg(a, p) == tl::render_svg(b, p));
  CHECK(tl::to_json(a, p).dump() == tl::to_json(b, p).dump());
  CHECK(tl::min_ellipse_metric(a, p.collision_padding) >= 1.0 - 1e-3);
  p.seed = 7;
  CHECK(tl::min_ellipse_metric(tl::compute_layout(l, p), p.collision_padding) >= 1.0 - 1e-3);
}

TEST_CASE("children sit right of their parents at lambda 1") {
  const auto l = lattice_of({"we went to the park", "they went to the beach", "we ran to the park today",
                             "you walked to a park"});
  tl::LayoutParams p;
  p.lambda = 1.0;
  const auto r = tl::compute_layout(l, p);
  for (const auto& [edge, count] : l.adjacency()) {
    const auto& parent = r.nodes[edge.first];
    const auto& child = r.nodes[edge.second];
    CHECK(child.x - child.rx >= parent.x + parent.rx + p.horizontal_gap - p.convergence_epsilon);
  }
}

TEST_CASE("emphasis flags never remove anything") {
  const auto l = lattice_of({"red fox runs", "red fox sleeps", "blue bird sings"});
  tl::LayoutParams p;
  auto r = tl::compute_layout(l, p);
  tl::apply_emphasis(r, l, {"g0"});
  CHECK(r.nodes.size() == l.nodes.size());
  CHECK(r.paths.size() == 3);
  CHECK(r.paths[0].emphasized);
  CHECK_FALSE(r.paths[1].emphasized);
  CHECK_FALSE(r.paths[2].emphasized);
  std::size_t lit = 0;
  for (const auto& n : r.nodes) lit += n.emphasized;
  CHECK(lit == l.traversals[0].path.size());
  const auto svg = tl::render_svg(r, p);
  CHECK(svg.find("<ellipse") != std::string::npos);
  CHECK(svg.find("data-gen=\"g2\"") != std::string::npos);
}

TEST_CASE("geometry hints replace label geometry") {
  const auto l = lattice_of({"alpha beta"});
  tl::GeometryHints hints{{l.nodes[0].id, {30.0, 9.0}}};
  const auto r = tl::compute_layout(l, {}, {}, hints);
  CHECK(r.nodes[0].rx == 30.0);
  CHECK(r.nodes[0].ry == 9.0);
  hints[l.nodes[0].id] = {0.0, 1.0};
  CHECK_THROWS_AS(tl::compute_layout(l, {}, {}, hints), tl::InvalidArgument);
}

TEST_CASE("twelve node fixture matches frozen coordinates") {
  const auto l = twelve_node_fixture();
  REQUIRE(l.nodes.size() == 12);
  std::ifstream in(std::string(TL_SOURCE_DIR) + "/tests/fixtures/layout12_golden.json");
  REQUIRE(in.good());
  const auto golden = nlohmann::json::parse(in);
  const auto r = tl::compute_layout(l, {});
  REQUIRE(golden.size() == r.nodes.size());
  for (std::size_t i = 0; i < r.nodes.size(); ++i) {
    CAPTURE(i);
    CHECK(golden[i]["id"] == r.nodes[i].node_id);
    CHECK(std::abs(golden[i]["x"].get<double>() - r.nodes[i].x) <= 0.5);
    CHECK(std::abs(golden[i]["y"].get<double>() - r.nodes[i].y) <= 0.5);
  }
}
