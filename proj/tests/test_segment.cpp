#include "doctest.h"

#include "tl/segment.hpp"

using tl::SegmentationMode;

namespace {

std::vector<std::string> surfaces(const tl::TokenSequence& seq) {
  std::vector<std::string> out;
  for (const auto& t : seq.tokens) out.push_back(t.surface);
  return out;
}

}  // namespace

TEST_CASE("space mode splits every whitespace run") {
  const auto seq = tl::segment("the cat  sat\n", SegmentationMode::space, "g");
  CHECK(surfaces(seq) == std::vector<std::string>{"the", "cat", "sat"});
  CHECK(seq.tokens[1].trailing_separator == "  ");
  CHECK(seq.tokens[2].trailing_separator == "\n");
  CHECK(seq.generation_id == "g");
  CHECK(tl::reconstruct(seq) == "the cat  sat\n");
}

TEST_CASE("sentence mode keeps sentences whole") {
  const auto seq = tl::segment("It rained. We stayed in! Did you? yes", SegmentationMode::sentence);
  CHECK(surfaces(seq) ==
        std::vector<std::string>{"It rained.", "We stayed in!", "Did you?", "yes"});
}

TEST_CASE("phrase mode splits at commas and sentence ends") {
  const auto seq = tl::segment("First, we wait. Then,we go", SegmentationMode::phrase);
  CHECK(surfaces(seq) == std::vector<std::string>{"First,", "we wait.", "Then,we go"});
}

TEST_CASE("empty and whitespace-only input") {
  CHECK(tl::segment("", SegmentationMode::space).empty());
  const auto ws = tl::segment(" \t\n", SegmentationMode::sentence);
  CHECK(ws.empty());
  CHECK(tl::reconstruct(ws) == " \t\n");
}

TEST_CASE("leading whitespace round-trips") {
  for (auto mode : {SegmentationMode::space, SegmentationMode::sentence, SegmentationMode::phrase}) {
    const std::string text = "  hello there.  General Kenobi ";
    CHECK(tl::reconstruct(tl::segment(text, mode)) == text);
  }
}

TEST_CASE("unicode whitespace and invalid bytes") {
  const std::string nbsp = "a\xC2\xA0" "b\xE3\x80\x80" "c";
  CHECK(surfaces(tl::segment(nbsp, SegmentationMode::space)) ==
        std::vector<std::string>{"a", "b", "c"});
  const std::string bad = "x\xFF y\xC2";
  const auto seq = tl::segment(bad, SegmentationMode::space);
  CHECK(surfaces(seq) == std::vector<std::string>{"x\xFF", "y\xC2"});
  CHECK(tl::reconstruct(seq) == bad);
  CHECK(tl::utf8_length("h\xC3\xA9llo") == 5);
}

TEST_CASE("token counts are ordered across modes") {
  const std::string text = "One, two three. Four five, six! Seven";
  const auto space = tl::segment(text, SegmentationMode::space).size();
  const auto phrase = tl::segment(text, SegmentationMode::phrase).size();
  const auto sentence = tl::segment(text, SegmentationMode::sentence).size();
  CHECK(space >= phrase);
  CHECK(phrase >= sentence);
}

TEST_CASE("span_text omits the final separator") {
  const auto seq = tl::segment("a  b c", SegmentationMode::space);
  CHECK(tl::span_text(seq, 0, 2) == "a  b");
  CHECK(tl::span_text(seq, 2, 3) == "c");
}

TEST_CASE("mode names") {
  CHECK(tl::to_string(SegmentationMode::phrase) == "phrase");
  CHECK(tl::parse_segmentation_mode("sentence") == SegmentationMode::sentence);
  CHECK_FALSE(tl::parse_segmentation_mode("word").has_value());
}
