#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace tl {

enum class SegmentationMode { space, sentence, phrase };

std::string_view to_string(SegmentationMode mode) noexcept;
std::optional<SegmentationMode> parse_segmentation_mode(std::string_view name) noexcept;

// One sampled completion as it came from a provider or a corpus file.
struct RawGeneration {
  std::string id;
  std::string prompt_id;
  std::string text;
  std::string model_id;
  double temperature = 0.0;
  std::size_t sample_index = 0;
};

struct Token {
  std::size_t index = 0;
  std::string surface;             // verbatim, never empty
  std::string trailing_separator;  // whitespace run that follows, possibly empty
};

struct TokenSequence {
  std::string generation_id;
  // Whitespace before the first token. Kept so that reconstruct() is exact
  // for texts that start with whitespace.
  std::string leading_separator;
  std::vector<Token> tokens;

  std::size_t size() const noexcept { return tokens.size(); }
  bool empty() const noexcept { return tokens.empty(); }
  const Token& operator[](std::size_t i) const { return tokens[i]; }
};

// Splits `text` at whitespace runs. Which runs count as boundaries depends on
// the mode:
//   space     every run
//   sentence  runs preceded by '.', '!' or '?'
//   phrase    runs preceded by ',' or a sentence terminator
// Runs touching the start or end of the text are always separators. Runs that
// are not boundaries stay inside the token surface. Total, pure and
// byte-preserving (invalid UTF-8 is carried through as non-whitespace).
TokenSequence segment(std::string_view text, SegmentationMode mode,
                      std::string generation_id = {});

std::string reconstruct(const TokenSequence& seq);

// Text of tokens [begin, end) including the separators between them but not
// the trailing separator of the last one.
std::string span_text(const TokenSequence& seq, std::size_t begin, std::size_t end);

// Unicode White_Space property.
bool is_unicode_whitespace(char32_t cp) noexcept;

// Number of code points (invalid bytes count as one each).
std::size_t utf8_length(std::string_view text) noexcept;

}  // namespace tl
