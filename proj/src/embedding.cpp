#include "tl/embedding.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "tl/digest.hpp"
#include "tl/errors.hpp"
#include "tl/simd.hpp"

namespace tl {

namespace detail {
extern const char* const kBuiltinStopwords;
}

EmbeddingVector EmbeddingProvider::embed(const std::string& input) {
  auto out = embed_batch(std::span<const std::string>(&input, 1));
  return std::move(out.at(0));
}

void FallbackEmbedder::embed_into(std::string_view input, std::span<double> out) {
  std::fill(out.begin(), out.end(), 0.0);
  std::string padded;
  padded.reserve(input.size() + 2);
  padded.push_back('\x02');
  padded.append(input);
  padded.push_back('\x03');
  for (std::size_t i = 0; i + 3 <= padded.size(); ++i) {
    std::uint64_t state = fnv1a64(std::string_view(padded).substr(i, 3)) ^ kSeed;
    for (std::size_t d = 0; d < kDimension; ++d) {
      out[d] += unit_double(splitmix64(state)) * 2.0 - 1.0;
    }
  }
  // Sequential sum keeps the result platform independent.
  double norm_sq = 0.0;
  for (double v : out) norm_sq += v * v;
  const double norm = std::sqrt(norm_sq);
  if (norm == 0.0) {
    out[0] = 1.0;
    return;
  }
  for (double& v : out) v /= norm;
}

std::vector<EmbeddingVector> FallbackEmbedder::embed_batch(std::span<const std::string> inputs) {
  std::vector<EmbeddingVector> out(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    out[i].values.resize(kDimension);
    out[i].provider_tag = name();
    embed_into(inputs[i], out[i].values);
  }
  return out;
}

double cosine(const EmbeddingVector& a, const EmbeddingVector& b) {
  if (a.dimension() != b.dimension()) {
    throw ContractViolation("cosine: dimension mismatch (" + std::to_string(a.dimension()) +
                            " vs " + std::to_string(b.dimension()) + ")");
  }
  if (a.provider_tag != b.provider_tag) {
    throw ContractViolation("cosine: vectors from different providers ('" + a.provider_tag +
                            "' vs '" + b.provider_tag + "')");
  }
  const double na = simd::dot(a.values, a.values);
  const double nb = simd::dot(b.values, b.values);
  if (na == 0.0 || nb == 0.0) throw ContractViolation("cosine: zero vector");
  return cosine_from_parts(simd::dot(a.values, b.values), na, nb);
}

std::string_view trim_punctuation(std::string_view s) noexcept {
  auto curly_at = [](std::string_view v, std::size_t pos) {
    // U+2018, U+2019, U+201C, U+201D
    return pos + 3 <= v.size() && static_cast<unsigned char>(v[pos]) == 0xE2 &&
           static_cast<unsigned char>(v[pos + 1]) == 0x80 &&
           (static_cast<unsigned char>(v[pos + 2]) == 0x98 ||
            static_cast<unsigned char>(v[pos + 2]) == 0x99 ||
            static_cast<unsigned char>(v[pos + 2]) == 0x9C ||
            static_cast<unsigned char>(v[pos + 2]) == 0x9D);
  };
  auto ascii_punct = [](char c) {
    const auto u = static_cast<unsigned char>(c);
    return u < 0x80 && std::ispunct(u);
  };
  while (!s.empty()) {
    if (ascii_punct(s.front())) {
      s.remove_prefix(1);
    } else if (curly_at(s, 0)) {
      s.remove_prefix(3);
    } else {
      break;
    }
  }
  while (!s.empty()) {
    if (ascii_punct(s.back())) {
      s.remove_suffix(1);
    } else if (s.size() >= 3 && curly_at(s, s.size() - 3)) {
      s.remove_suffix(3);
    } else {
      break;
    }
  }
  return s;
}

std::string ascii_fold(std::string_view s) {
  std::string out(s);
  for (char& c : out) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  return out;
}

StopwordList StopwordList::parse(std::string_view contents) {
  StopwordList list;
  std::istringstream in{std::string(contents)};
  std::string line;
  while (std::getline(in, line)) {
    std::string_view v(line);
    while (!v.empty() && std::isspace(static_cast<unsigned char>(v.front()))) v.remove_prefix(1);
    while (!v.empty() && std::isspace(static_cast<unsigned char>(v.back()))) v.remove_suffix(1);
    if (v.empty() || v.front() == '#') continue;
    list.words_.insert(ascii_fold(v));
  }
  return list;
}

StopwordList StopwordList::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFound("stopword list not found: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

const StopwordList& StopwordList::builtin() {
  static const StopwordList list = parse(detail::kBuiltinStopwords);
  return list;
}

bool StopwordList::contains(std::string_view surface) const {
  const std::string_view trimmed = trim_punctuation(surface);
  if (trimmed.empty()) return false;
  return words_.count(ascii_fold(trimmed)) != 0;
}

bool is_stopword(std::string_view surface) { return StopwordList::builtin().contains(surface); }

std::string context_text(const TokenSequence& seq, std::size_t index, std::size_t window) {
  if (index >= seq.size()) {
    throw ContractViolation("context_text: index " + std::to_string(index) +
                            " out of range for sequence of length " + std::to_string(seq.size()));
  }
  const std::size_t lo = index >= window ? index - window : 0;
  const std::size_t hi = std::min(seq.size() - 1, index + window);
  std::string out;
  for (std::size_t i = lo; i <= hi; ++i) {
    if (i != lo) out.push_back(' ');
    out += seq[i].surface;
  }
  return out;
}

EmbeddingVector embed_in_context(EmbeddingProvider& provider, const TokenSequence& seq,
                                 std::size_t index, std::size_t window) {
  return provider.embed(context_text(seq, index, window));
}

double token_similarity(EmbeddingProvider& provider, TokenRef a, TokenRef b, std::size_t window,
                        const StopwordList& stopwords) {
  const TokenSequence& sa = *a.seq;
  const TokenSequence& sb = *b.seq;
  if (a.index >= sa.size() || b.index >= sb.size()) {
    throw ContractViolation("token_similarity: token position out of range");
  }
  double score = 0.0;
  if (stopwords.contains(sa[a.index].surface) && stopwords.contains(sb[b.index].surface)) {
    auto bare = [&] {
      return cosine(provider.embed(sa[a.index].surface), provider.embed(sb[b.index].surface));
    };
    const double sim_prev =
        (a.index > 0 && b.index > 0)
            ? cosine(embed_in_context(provider, sa, a.index - 1, window),
                     embed_in_context(provider, sb, b.index - 1, window))
            : bare();
    const double sim_next =
        (a.index + 1 < sa.size() && b.index + 1 < sb.size())
            ? cosine(embed_in_context(provider, sa, a.index + 1, window),
                     embed_in_context(provider, sb, b.index + 1, window))
            : bare();
    score = (sim_prev + sim_next) / 2.0;
  } else {
    score = cosine(embed_in_context(provider, sa, a.index, window),
                   embed_in_context(provider, sb, b.index, window));
  }
  return score - positional_penalty(a.index, b.index);
}

}  // namespace tl
