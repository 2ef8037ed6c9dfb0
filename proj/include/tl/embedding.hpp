#pragma once

#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "tl/segment.hpp"

namespace tl {

inline constexpr std::size_t kDefaultContextWindow = 2;
inline constexpr double kPositionalPenaltyDivisor = 20.0;

struct EmbeddingVector {
  std::vector<double> values;
  std::string provider_tag;

  std::size_t dimension() const noexcept { return values.size(); }
};

// Anything that maps strings to vectors. Implementations must return the
// same vector for the same string for the lifetime of the instance.
class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;

  virtual std::string name() const = 0;
  virtual std::size_t dimension() const = 0;

  // Output order matches input order.
  virtual std::vector<EmbeddingVector> embed_batch(std::span<const std::string> inputs) = 0;

  EmbeddingVector embed(const std::string& input);
};

// Offline provider: signed random projection of the byte-trigram bag of the
// input (padded with STX/ETX), 64 dimensions, L2-normalized. Pure, reentrant
// and bit-identical across platforms.
class FallbackEmbedder final : public EmbeddingProvider {
 public:
  static constexpr std::size_t kDimension = 64;
  static constexpr std::uint64_t kSeed = 0x51ED270B27A1C5E3ULL;

  std::string name() const override { return "fallback-trigram64"; }
  std::size_t dimension() const override { return kDimension; }
  std::vector<EmbeddingVector> embed_batch(std::span<const std::string> inputs) override;

  // Writes kDimension values into `out`.
  static void embed_into(std::string_view input, std::span<double> out);
};

struct RemoteEmbedderConfig {
  std::string base_url = "http://127.0.0.1:8090";
  std::string path = "/embed";
  std::string model = "Xenova/all-MiniLM-L6-v2";
  std::string api_key;  // sent as a bearer token when non-empty
  std::chrono::milliseconds timeout{30000};
  int max_attempts = 3;
  std::chrono::milliseconds initial_backoff{500};
  std::size_t batch_size = 64;
};

// HTTP JSON contract: POST {model, inputs: [string]} -> {vectors: [[number]]}.
// Results are memoized per input string so repeated lookups are stable even
// if the server is not.
class RemoteEmbedder final : public EmbeddingProvider {
 public:
  explicit RemoteEmbedder(RemoteEmbedderConfig config);

  std::string name() const override { return "remote:" + config_.model; }
  std::size_t dimension() const override;
  std::vector<EmbeddingVector> embed_batch(std::span<const std::string> inputs) override;

  std::size_t request_count() const noexcept;

 private:
  std::vector<std::vector<double>> fetch(std::span<const std::string> inputs);

  RemoteEmbedderConfig config_;
  mutable std::mutex mu_;
  std::unordered_map<std::string, std::vector<double>> memo_;
  std::size_t dimension_ = 0;
  std::size_t requests_ = 0;
};

// Cosine similarity clamped to [-1, 1]. Throws ContractViolation on mismatched
// dimension or provider tag, or a zero vector.
double cosine(const EmbeddingVector& a, const EmbeddingVector& b);

class StopwordList {
 public:
  StopwordList() = default;

  // UTF-8, one word per line, '#' starts a comment line.
  static StopwordList parse(std::string_view contents);
  static StopwordList load(const std::string& path);
  // The list shipped in data/stopwords.txt, compiled in.
  static const StopwordList& builtin();

  // Membership after trimming surrounding punctuation and ASCII case-folding.
  bool contains(std::string_view surface) const;
  std::size_t size() const noexcept { return words_.size(); }

 private:
  std::unordered_set<std::string> words_;
};

bool is_stopword(std::string_view surface);

// Strips leading/trailing ASCII punctuation and curly quotes.
std::string_view trim_punctuation(std::string_view surface) noexcept;
std::string ascii_fold(std::string_view s);

// Token surface joined by single spaces with up to `window` neighbours on
// each side; out-of-range neighbours are omitted.
std::string context_text(const TokenSequence& seq, std::size_t index, std::size_t window);

EmbeddingVector embed_in_context(EmbeddingProvider& provider, const TokenSequence& seq,
                                 std::size_t index, std::size_t window = kDefaultContextWindow);

struct TokenRef {
  const TokenSequence* seq;
  std::size_t index;
};

inline double positional_penalty(std::size_t index_a, std::size_t index_b) noexcept {
  const std::size_t diff = index_a > index_b ? index_a - index_b : index_b - index_a;
  return static_cast<double>(diff) / kPositionalPenaltyDivisor;
}

// Merge score for two token positions:
//   both stopwords: mean of the cosines of the previous-neighbour and the
//     next-neighbour contextual embeddings (a side missing on either token is
//     replaced by the bare-token cosine of the two stopwords);
//   otherwise: cosine of the two contextual embeddings;
// minus |index_a - index_b| / 20.
double token_similarity(EmbeddingProvider& provider, TokenRef a, TokenRef b,
                        std::size_t window = kDefaultContextWindow,
                        const StopwordList& stopwords = StopwordList::builtin());

// Cosine from a precomputed dot product and squared norms. Shared by the
// pairwise scorer so both routes round identically.
inline double cosine_from_parts(double dot, double norm_sq_a, double norm_sq_b) noexcept {
  const double c = dot / std::sqrt(norm_sq_a * norm_sq_b);
  return c > 1.0 ? 1.0 : (c < -1.0 ? -1.0 : c);
}

}  // namespace tl
