#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"

#include "tl/embedding.hpp"
#include "tl/segment.hpp"

namespace tl {

inline constexpr double kDefaultMergeThreshold = 0.5;
inline constexpr int kLatticeSchemaVersion = 1;

struct LatticeGeneration {
  std::string id;
  std::string prompt_id;
  TokenSequence tokens;
};

// Token range [begin, end) of one generation (by ordinal in
// TokenLattice::generations).
struct Member {
  std::uint32_t generation = 0;
  std::uint32_t begin = 0;
  std::uint32_t end = 0;

  friend bool operator==(const Member&, const Member&) = default;
  friend auto operator<=>(const Member&, const Member&) = default;
};

struct LatticeNode {
  std::string id;     // content hash of the member set
  std::string label;  // text of the first member span
  std::vector<Member> members;  // sorted by (generation, begin)
  std::size_t frequency = 0;    // distinct generations among members
  std::map<std::string, std::size_t> prompt_counts;
};

// The node sequence one generation walks; rendering draws this, never the
// bare adjacency.
struct Traversal {
  std::uint32_t generation = 0;
  std::vector<std::uint32_t> path;  // node indices
};

struct TraversalEdge {
  std::uint32_t from = 0;
  std::uint32_t to = 0;
  std::uint32_t generation = 0;
  std::uint32_t step = 0;
};

using Adjacency = std::map<std::pair<std::uint32_t, std::uint32_t>, std::size_t>;

struct TokenLattice {
  SegmentationMode mode = SegmentationMode::space;
  std::optional<double> merge_threshold;  // empty for unmerged chains
  std::vector<LatticeGeneration> generations;
  std::vector<LatticeNode> nodes;
  std::vector<Traversal> traversals;  // parallel to generations

  std::vector<TraversalEdge> traversal_edges() const;
  // Distinct node-to-node edges with the number of traversals that use them.
  Adjacency adjacency() const;
  std::optional<std::uint32_t> find_node(std::string_view id) const;
  std::optional<std::uint32_t> find_generation(std::string_view id) const;
  std::string member_text(const Member& m) const;
  // Leading separator + member spans along the traversal, each followed by the
  // separator stored after its last token.
  std::string reconstruct(std::size_t generation) const;
  std::size_t total_tokens() const;
};

struct LatticeStats {
  std::size_t node_count = 0;
  std::size_t traversal_edge_count = 0;
  double compression_ratio = 1.0;  // nodes / tokens; 1 for an empty lattice
  double mean_out_degree = 0.0;    // distinct adjacency edges / nodes
  std::size_t distinct_path_count = 0;
  std::size_t total_tokens = 0;
  std::size_t generation_count = 0;
};

std::vector<LatticeGeneration> segment_generations(std::span<const RawGeneration> raw,
                                                   SegmentationMode mode);

// One node per token occurrence, one chain per generation.
TokenLattice build_chains(std::vector<LatticeGeneration> generations, SegmentationMode mode);

// A candidate merge between two token occurrences. Occurrence ids enumerate
// tokens generation-major, so `a < b` orders by (generation, index).
struct ScoredPair {
  double score = 0.0;
  std::uint32_t a = 0;
  std::uint32_t b = 0;
};

// Merge order: descending score, then (a, b) ascending.
bool merge_order(const ScoredPair& x, const ScoredPair& y) noexcept;

struct ScorerOptions {
  std::size_t window = kDefaultContextWindow;
  const StopwordList* stopwords = nullptr;  // builtin when null
  unsigned threads = 0;                     // 0: hardware concurrency
};

// Merge scores for token occurrences of one set of generations. Contextual
// embeddings are fetched once up front; candidate lists are cached so that
// re-thresholding above the cached floor costs no scoring at all.
//
// Identical tokens (ASCII case-folded) skip the embedding and score
// 1 - positional penalty; all other pairs use token_similarity's rule.
class PairScorer {
 public:
  PairScorer(const std::vector<LatticeGeneration>& generations, EmbeddingProvider& provider,
             ScorerOptions options = {});

  double score(std::uint32_t gen_a, std::uint32_t idx_a, std::uint32_t gen_b,
               std::uint32_t idx_b) const;

  // Cross-generation pairs with score >= threshold in merge order.
  std::span<const ScoredPair> candidates(double threshold);

  std::size_t occurrence_count() const noexcept { return offsets_.back(); }
  std::size_t generation_count() const noexcept { return offsets_.size() - 1; }
  std::uint32_t occurrence(std::uint32_t gen, std::uint32_t idx) const {
    return offsets_[gen] + idx;
  }
  // Total pair evaluations so far (observes caching).
  std::size_t evaluations() const noexcept { return evaluations_; }

 private:
  void score_band(std::uint32_t g1, std::size_t max_delta, double threshold,
                  std::vector<ScoredPair>& out, std::vector<double>& scratch) const;
  double stopword_score(std::uint32_t oa, std::uint32_t ob, std::uint32_t gen_a,
                        std::uint32_t idx_a, std::uint32_t gen_b, std::uint32_t idx_b) const;
  double context_cosine(std::uint32_t oa, std::uint32_t ob) const;

  ScorerOptions options_;
  std::size_t dim_ = 0;
  std::vector<std::uint32_t> offsets_;     // per generation, plus total
  std::vector<double> context_vectors_;    // occurrence-major, dim_ each
  std::vector<double> context_norm_sq_;
  std::vector<std::uint32_t> folded_id_;   // interned case-folded surface
  std::vector<std::uint8_t> stopword_;
  std::vector<std::int32_t> bare_index_;   // row in bare_vectors_ or -1
  std::vector<double> bare_vectors_;
  std::vector<double> bare_norm_sq_;
  std::size_t max_length_ = 0;

  std::optional<double> cached_floor_;
  std::vector<ScoredPair> cached_;
  std::size_t evaluations_ = 0;
};

using OccurrenceScoreFn = std::function<double(std::uint32_t gen_a, std::uint32_t idx_a,
                                               std::uint32_t gen_b, std::uint32_t idx_b)>;

// Greedy merge: candidates in merge order, each applied iff its score is
// >= threshold and unifying the two nodes keeps the adjacency acyclic. Only
// token-level (unmerged or previously merged, uncollapsed) lattices are valid
// input.
TokenLattice merge_similar(const TokenLattice& lattice, double threshold, PairScorer& scorer);

// Same rule over every cross-generation pair scored by `score`.
TokenLattice merge_similar(const TokenLattice& lattice, double threshold,
                           const OccurrenceScoreFn& score);

// Candidates must be sorted in merge order; those below threshold are ignored.
TokenLattice merge_candidates(const TokenLattice& lattice, double threshold,
                              std::span<const ScoredPair> candidates);

// Collapses every edge u->v where v is u's only successor, u is v's only
// predecessor and exactly the same generations visit both.
TokenLattice collapse_chains(const TokenLattice& lattice);

LatticeStats stats(const TokenLattice& lattice);

// Human-readable violations of the lattice invariants (path reconstruction,
// acyclicity, witnessed edges, member consistency). Empty when sound.
std::vector<std::string> check_invariants(const TokenLattice& lattice);

struct BuilderOptions {
  SegmentationMode mode = SegmentationMode::space;
  ScorerOptions scorer;
};

// Segments once, scores once, then rebuilds at any threshold.
class LatticeBuilder {
 public:
  LatticeBuilder(const LatticeBuilder&) = delete;
  LatticeBuilder& operator=(const LatticeBuilder&) = delete;

  LatticeBuilder(std::vector<LatticeGeneration> generations, EmbeddingProvider& provider,
                 BuilderOptions options = {});
  LatticeBuilder(std::span<const RawGeneration> raw, EmbeddingProvider& provider,
                 BuilderOptions options = {});

  const TokenLattice& chains() const noexcept { return chains_; }
  TokenLattice merged(double threshold);
  // build_chains -> merge_similar(threshold) -> collapse_chains
  TokenLattice rebuild_with_threshold(double threshold);
  const PairScorer& scorer() const noexcept { return *scorer_; }

 private:
  TokenLattice chains_;
  std::unique_ptr<PairScorer> scorer_;
};

nlohmann::json to_json(const TokenLattice& lattice);
nlohmann::json to_json(const LatticeStats& stats);
// Validates structure; throws ParseError on schema violations.
TokenLattice lattice_from_json(const nlohmann::json& doc);

// Adjacency only, for debugging; paths through it are not faithful.
std::string to_dot(const TokenLattice& lattice);

}  // namespace tl
