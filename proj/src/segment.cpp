#include "tl/segment.hpp"

namespace tl {
namespace {

struct Decoded {
  char32_t cp;
  std::size_t len;  // bytes consumed, >= 1
};

// Lenient decoder: malformed sequences decode as U+FFFD consuming one byte.
Decoded decode_utf8(std::string_view s, std::size_t i) noexcept {
  const auto b0 = static_cast<unsigned char>(s[i]);
  if (b0 < 0x80) return {b0, 1};
  std::size_t len = 0;
  char32_t cp = 0;
  if ((b0 & 0xE0) == 0xC0) {
    len = 2;
    cp = b0 & 0x1F;
  } else if ((b0 & 0xF0) == 0xE0) {
    len = 3;
    cp = b0 & 0x0F;
  } else if ((b0 & 0xF8) == 0xF0) {
    len = 4;
    cp = b0 & 0x07;
  } else {
    return {0xFFFD, 1};
  }
  if (i + len > s.size()) return {0xFFFD, 1};
  for (std::size_t k = 1; k < len; ++k) {
    const auto b = static_cast<unsigned char>(s[i + k]);
    if ((b & 0xC0) != 0x80) return {0xFFFD, 1};
    cp = (cp << 6) | (b & 0x3F);
  }
  return {cp, len};
}

bool ends_sentence(char c) noexcept { return c == '.' || c == '!' || c == '?'; }

bool is_boundary(SegmentationMode mode, char before) noexcept {
  switch (mode) {
    case SegmentationMode::space:
      return true;
    case SegmentationMode::sentence:
      return ends_sentence(before);
    case SegmentationMode::phrase:
      return before == ',' || ends_sentence(before);
  }
  return true;
}

}  // namespace

std::string_view to_string(SegmentationMode mode) noexcept {
  switch (mode) {
    case SegmentationMode::space:
      return "space";
    case SegmentationMode::sentence:
      return "sentence";
    case SegmentationMode::phrase:
      return "phrase";
  }
  return "space";
}

std::optional<SegmentationMode> parse_segmentation_mode(std::string_view name) noexcept {
  if (name == "space") return SegmentationMode::space;
  if (name == "sentence") return SegmentationMode::sentence;
  if (name == "phrase") return SegmentationMode::phrase;
  return std::nullopt;
}

bool is_unicode_whitespace(char32_t cp) noexcept {
  if (cp >= 0x09 && cp <= 0x0D) return true;
  if (cp >= 0x2000 && cp <= 0x200A) return true;
  switch (cp) {
    case 0x20:
    case 0x85:
    case 0xA0:
    case 0x1680:
    case 0x2028:
    case 0x2029:
    case 0x202F:
    case 0x205F:
    case 0x3000:
      return true;
    default:
      return false;
  }
}

std::size_t utf8_length(std::string_view text) noexcept {
  std::size_t n = 0;
  for (std::size_t i = 0; i < text.size(); ++n) i += decode_utf8(text, i).len;
  return n;
}

TokenSequence segment(std::string_view text, SegmentationMode mode, std::string generation_id) {
  TokenSequence seq;
  seq.generation_id = std::move(generation_id);

  // Whitespace runs as [begin, end) byte ranges.
  struct Run {
    std::size_t begin, end;
  };
  std::vector<Run> runs;
  for (std::size_t i = 0; i < text.size();) {
    const Decoded d = decode_utf8(text, i);
    if (is_unicode_whitespace(d.cp)) {
      if (!runs.empty() && runs.back().end == i) {
        runs.back().end = i + d.len;
      } else {
        runs.push_back({i, i + d.len});
      }
    }
    i += d.len;
  }

  std::size_t token_start = 0;
  for (const Run& run : runs) {
    if (run.begin == 0) {
      seq.leading_separator.assign(text.substr(0, run.end));
      token_start = run.end;
      continue;
    }
    const bool at_end = run.end == text.size();
    if (!at_end && !is_boundary(mode, text[run.begin - 1])) continue;
    seq.tokens.push_back(Token{seq.tokens.size(),
                               std::string(text.substr(token_start, run.begin - token_start)),
                               std::string(text.substr(run.begin, run.end - run.begin))});
    token_start = run.end;
  }
  if (token_start < text.size()) {
    seq.tokens.push_back(Token{seq.tokens.size(), std::string(text.substr(token_start)), {}});
  }
  return seq;
}

std::string reconstruct(const TokenSequence& seq) {
  std::string out = seq.leading_separator;
  for (const Token& t : seq.tokens) {
    out += t.surface;
    out += t.trailing_separator;
  }
  return out;
}

std::string span_text(const TokenSequence& seq, std::size_t begin, std::size_t end) {
  std::string out;
  for (std::size_t i = begin; i < end && i < seq.tokens.size(); ++i) {
    out += seq.tokens[i].surface;
    if (i + 1 < end) out += seq.tokens[i].trailing_separator;
  }
  return out;
}

}  // namespace tl
