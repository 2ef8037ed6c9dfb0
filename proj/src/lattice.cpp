#include <limits>
#include "tl/lattice.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <queue>
#include <set>
#include <thread>
#include <unordered_map>

#include "tl/digest.hpp"
#include "tl/errors.hpp"
#include "tl/simd.hpp"

namespace tl {
namespace {

constexpr std::uint32_t kDead = std::numeric_limits<std::uint32_t>::max();

std::vector<std::uint32_t> generation_offsets(const std::vector<LatticeGeneration>& gens) {
  std::vector<std::uint32_t> offsets(gens.size() + 1, 0);
  for (std::size_t g = 0; g < gens.size(); ++g) {
    offsets[g + 1] = offsets[g] + static_cast<std::uint32_t>(gens[g].tokens.size());
  }
  return offsets;
}

std::string node_id_for(const std::vector<LatticeGeneration>& gens,
                        const std::vector<Member>& members) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const Member& m : members) {
    h = fnv1a64(gens[m.generation].id, h);
    const std::string range =
        "\x1f" + std::to_string(m.begin) + "," + std::to_string(m.end) + "\x1e";
    h = fnv1a64(range, h);
  }
  return "n" + hex64(h);
}

// Builds nodes and traversals from a grouping of token occurrences.
// `group_of[occurrence]` is any key < key_count; occurrences sharing a key
// become one node.
TokenLattice assemble(SegmentationMode mode, std::optional<double> threshold,
                      std::vector<LatticeGeneration> gens,
                      const std::vector<std::uint32_t>& group_of, std::size_t key_count) {
  const auto offsets = generation_offsets(gens);
  std::vector<std::vector<Member>> members(key_count);
  for (std::uint32_t g = 0; g < gens.size(); ++g) {
    for (std::uint32_t i = 0; i < gens[g].tokens.size(); ++i) {
      auto& list = members[group_of[offsets[g] + i]];
      if (!list.empty() && list.back().generation == g && list.back().end == i) {
        ++list.back().end;
      } else {
        list.push_back(Member{g, i, i + 1});
      }
    }
  }

  std::vector<std::uint32_t> keys;
  for (std::uint32_t k = 0; k < key_count; ++k) {
    if (!members[k].empty()) keys.push_back(k);
  }
  std::sort(keys.begin(), keys.end(), [&](std::uint32_t x, std::uint32_t y) {
    return members[x].front() < members[y].front();
  });

  TokenLattice out;
  out.mode = mode;
  out.merge_threshold = threshold;
  std::vector<std::uint32_t> node_of_key(key_count, kDead);
  out.nodes.reserve(keys.size());
  for (std::uint32_t k : keys) {
    LatticeNode node;
    node.members = std::move(members[k]);
    node.id = node_id_for(gens, node.members);
    const Member& first = node.members.front();
    node.label = span_text(gens[first.generation].tokens, first.begin, first.end);
    std::uint32_t last_gen = kDead;
    for (const Member& m : node.members) {
      if (m.generation == last_gen) continue;
      last_gen = m.generation;
      ++node.frequency;
      ++node.prompt_counts[gens[m.generation].prompt_id];
    }
    node_of_key[k] = static_cast<std::uint32_t>(out.nodes.size());
    out.nodes.push_back(std::move(node));
  }

  out.traversals.resize(gens.size());
  for (std::uint32_t g = 0; g < gens.size(); ++g) {
    Traversal& t = out.traversals[g];
    t.generation = g;
    for (std::uint32_t i = 0; i < gens[g].tokens.size(); ++i) {
      const std::uint32_t n = node_of_key[group_of[offsets[g] + i]];
      if (t.path.empty() || t.path.back() != n) t.path.push_back(n);
    }
  }
  out.generations = std::move(gens);
  return out;
}

class UnionFind {
 public:
  explicit UnionFind(std::size_t n) : parent_(n), size_(n, 1) {
    std::iota(parent_.begin(), parent_.end(), 0u);
  }

  std::uint32_t find(std::uint32_t x) noexcept {
    std::uint32_t root = x;
    while (parent_[root] != root) root = parent_[root];
    while (parent_[x] != root) {
      const std::uint32_t next = parent_[x];
      parent_[x] = root;
      x = next;
    }
    return root;
  }

  // Returns the surviving root.
  std::uint32_t unite(std::uint32_t a, std::uint32_t b) noexcept {
    a = find(a);
    b = find(b);
    if (a == b) return a;
    if (size_[a] < size_[b]) std::swap(a, b);
    parent_[b] = a;
    size_[a] += size_[b];
    return a;
  }

 private:
  std::vector<std::uint32_t> parent_;
  std::vector<std::uint32_t> size_;
};

// Greedy node unification over token occurrences with cycle rejection.
//
// Keeps a topological order of the current quotient graph. A merge of roots
// lo, hi (pos[lo] < pos[hi]) closes a cycle iff hi is reachable from lo, and
// any such path stays inside the window (pos[lo], pos[hi]); the search is
// pruned to it. On success the nodes reached from lo are moved behind
// everything else in the window, which leaves hi and lo adjacent, so the
// merged node can take hi's slot without invalidating the order.
class MergeEngine {
 public:
  explicit MergeEngine(const TokenLattice& lattice)
      : offsets_(generation_offsets(lattice.generations)),
        n_(offsets_.back()),
        uf_(n_),
        out_(n_),
        pos_(n_, kDead),
        mark_(n_, 0) {
    for (const LatticeNode& node : lattice.nodes) {
      std::uint32_t first = kDead;
      for (const Member& m : node.members) {
        if (m.end != m.begin + 1) {
          throw ContractViolation("merge_similar: lattice has collapsed multi-token nodes");
        }
        const std::uint32_t o = offsets_[m.generation] + m.begin;
        if (first == kDead) {
          first = o;
        } else {
          uf_.unite(first, o);
        }
      }
    }
    std::vector<std::uint32_t> indegree(n_, 0);
    for (std::uint32_t g = 0; g + 1 < offsets_.size(); ++g) {
      for (std::uint32_t o = offsets_[g]; o + 1 < offsets_[g + 1]; ++o) {
        out_[uf_.find(o)].push_back(o + 1);
        ++indegree[uf_.find(o + 1)];
      }
    }
    // Kahn's algorithm, preferring low token index so related tokens of
    // different generations sit close together and merge windows stay small.
    auto index_of = [&](std::uint32_t o) {
      const auto it = std::upper_bound(offsets_.begin(), offsets_.end(), o);
      return o - *(it - 1);
    };
    using Key = std::pair<std::uint32_t, std::uint32_t>;
    std::priority_queue<Key, std::vector<Key>, std::greater<>> ready;
    std::size_t roots = 0;
    for (std::uint32_t o = 0; o < n_; ++o) {
      if (uf_.find(o) != o) continue;
      ++roots;
      if (indegree[o] == 0) ready.emplace(index_of(o), o);
    }
    order_.reserve(roots);
    while (!ready.empty()) {
      const std::uint32_t u = ready.top().second;
      ready.pop();
      pos_[u] = static_cast<std::uint32_t>(order_.size());
      order_.push_back(u);
      for (std::uint32_t o : out_[u]) {
        const std::uint32_t w = uf_.find(o);
        if (--indegree[w] == 0) ready.emplace(index_of(w), w);
      }
    }
    if (order_.size() != roots) throw ContractViolation("merge_similar: input lattice is cyclic");
  }

  bool try_merge(std::uint32_t a, std::uint32_t b) {
    std::uint32_t lo = uf_.find(a);
    std::uint32_t hi = uf_.find(b);
    if (lo == hi) return false;
    if (pos_[lo] > pos_[hi]) std::swap(lo, hi);

    ++epoch_;
    const std::uint32_t limit = pos_[hi];
    stack_.assign(1, lo);
    mark_[lo] = epoch_;
    while (!stack_.empty()) {
      const std::uint32_t u = stack_.back();
      stack_.pop_back();
      for (std::uint32_t o : out_[u]) {
        const std::uint32_t w = uf_.find(o);
        if (w == hi) return false;
        if (pos_[w] < limit && mark_[w] != epoch_) {
          mark_[w] = epoch_;
          stack_.push_back(w);
        }
      }
    }

    slots_.clear();
    behind_.clear();
    ahead_.clear();
    for (std::uint32_t p = pos_[lo]; p <= limit; ++p) {
      const std::uint32_t r = order_[p];
      if (r == kDead) continue;
      slots_.push_back(p);
      (mark_[r] == epoch_ ? behind_ : ahead_).push_back(r);
    }
    ahead_.insert(ahead_.end(), behind_.begin(), behind_.end());
    for (std::size_t k = 0; k < slots_.size(); ++k) {
      order_[slots_[k]] = ahead_[k];
      pos_[ahead_[k]] = slots_[k];
    }

    const std::uint32_t slot_hi = pos_[hi];
    const std::uint32_t slot_lo = pos_[lo];
    const std::uint32_t root = uf_.unite(lo, hi);
    const std::uint32_t gone = root == lo ? hi : lo;
    order_[slot_hi] = root;
    pos_[root] = slot_hi;
    order_[slot_lo] = kDead;
    pos_[gone] = kDead;

    auto& keep = out_[root];
    auto& drop = out_[gone];
    keep.insert(keep.end(), drop.begin(), drop.end());
    drop.clear();
    drop.shrink_to_fit();
    if (keep.size() >= 8) dedupe(keep);
    return true;
  }

  std::vector<std::uint32_t> groups() {
    std::vector<std::uint32_t> out(n_);
    for (std::uint32_t o = 0; o < n_; ++o) out[o] = uf_.find(o);
    return out;
  }

  std::size_t occurrence_count() const noexcept { return n_; }

 private:
  // Keeps one edge entry per distinct target root.
  void dedupe(std::vector<std::uint32_t>& edges) {
    for (auto& o : edges) o = uf_.find(o);
    std::sort(edges.begin(), edges.end());
    edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  }

  std::vector<std::uint32_t> offsets_;
  std::uint32_t n_;
  UnionFind uf_;
  std::vector<std::vector<std::uint32_t>> out_;
  std::vector<std::uint32_t> order_;
  std::vector<std::uint32_t> pos_;
  std::vector<std::uint32_t> mark_;
  std::uint32_t epoch_ = 0;
  std::vector<std::uint32_t> stack_, slots_, behind_, ahead_;
};

std::size_t max_delta_for(double threshold, std::size_t max_length) {
  std::size_t d = 0;
  while (d + 1 < max_length &&
         1.0 - static_cast<double>(d + 1) / kPositionalPenaltyDivisor >= threshold) {
    ++d;
  }
  return d;
}

void require_finite(double threshold) {
  if (!std::isfinite(threshold)) throw InvalidArgument("merge threshold must be finite");
}

}  // namespace

// --- TokenLattice ----------------------------------------------------------

std::vector<TraversalEdge> TokenLattice::traversal_edges() const {
  std::vector<TraversalEdge> out;
  for (const Traversal& t : traversals) {
    for (std::size_t s = 0; s + 1 < t.path.size(); ++s) {
      out.push_back({t.path[s], t.path[s + 1], t.generation, static_cast<std::uint32_t>(s)});
    }
  }
  return out;
}

Adjacency TokenLattice::adjacency() const {
  Adjacency adj;
  for (const Traversal& t : traversals) {
    for (std::size_t s = 0; s + 1 < t.path.size(); ++s) ++adj[{t.path[s], t.path[s + 1]}];
  }
  return adj;
}

std::optional<std::uint32_t> TokenLattice::find_node(std::string_view id) const {
  for (std::uint32_t i = 0; i < nodes.size(); ++i) {
    if (nodes[i].id == id) return i;
  }
  return std::nullopt;
}

std::optional<std::uint32_t> TokenLattice::find_generation(std::string_view id) const {
  for (std::uint32_t i = 0; i < generations.size(); ++i) {
    if (generations[i].id == id) return i;
  }
  return std::nullopt;
}

std::string TokenLattice::member_text(const Member& m) const {
  return span_text(generations.at(m.generation).tokens, m.begin, m.end);
}

std::string TokenLattice::reconstruct(std::size_t generation) const {
  const LatticeGeneration& gen = generations.at(generation);
  std::string out = gen.tokens.leading_separator;
  for (std::uint32_t n : traversals.at(generation).path) {
    const auto& members = nodes.at(n).members;
    const auto it = std::lower_bound(members.begin(), members.end(),
                                     Member{static_cast<std::uint32_t>(generation), 0, 0});
    if (it == members.end() || it->generation != generation) {
      throw ContractViolation("traversal visits a node without a member for its generation");
    }
    out += member_text(*it);
    out += gen.tokens.tokens.at(it->end - 1).trailing_separator;
  }
  return out;
}

std::size_t TokenLattice::total_tokens() const {
  std::size_t n = 0;
  for (const auto& g : generations) n += g.tokens.size();
  return n;
}

// --- construction ----------------------------------------------------------

std::vector<LatticeGeneration> segment_generations(std::span<const RawGeneration> raw,
                                                   SegmentationMode mode) {
  std::vector<LatticeGeneration> out;
  out.reserve(raw.size());
  for (const RawGeneration& r : raw) {
    out.push_back(LatticeGeneration{r.id, r.prompt_id, segment(r.text, mode, r.id)});
  }
  return out;
}

TokenLattice build_chains(std::vector<LatticeGeneration> generations, SegmentationMode mode) {
  const auto offsets = generation_offsets(generations);
  std::vector<std::uint32_t> identity(offsets.back());
  std::iota(identity.begin(), identity.end(), 0u);
  return assemble(mode, std::nullopt, std::move(generations), identity, identity.size());
}

bool merge_order(const ScoredPair& x, const ScoredPair& y) noexcept {
  if (x.score != y.score) return x.score > y.score;
  if (x.a != y.a) return x.a < y.a;
  return x.b < y.b;
}

TokenLattice merge_candidates(const TokenLattice& lattice, double threshold,
                              std::span<const ScoredPair> candidates) {
  require_finite(threshold);
  MergeEngine engine(lattice);
  for (const ScoredPair& c : candidates) {
    if (c.score < threshold) continue;
    engine.try_merge(c.a, c.b);
  }
  return assemble(lattice.mode, threshold, lattice.generations, engine.groups(),
                  engine.occurrence_count());
}

TokenLattice merge_similar(const TokenLattice& lattice, double threshold, PairScorer& scorer) {
  if (scorer.occurrence_count() != lattice.total_tokens() ||
      scorer.generation_count() != lattice.generations.size()) {
    throw ContractViolation("merge_similar: scorer was built for different generations");
  }
  return merge_candidates(lattice, threshold, scorer.candidates(threshold));
}

TokenLattice merge_similar(const TokenLattice& lattice, double threshold,
                           const OccurrenceScoreFn& score) {
  require_finite(threshold);
  const auto offsets = generation_offsets(lattice.generations);
  std::vector<ScoredPair> cands;
  const auto& gens = lattice.generations;
  for (std::uint32_t g1 = 0; g1 < gens.size(); ++g1) {
    for (std::uint32_t g2 = g1 + 1; g2 < gens.size(); ++g2) {
      for (std::uint32_t i = 0; i < gens[g1].tokens.size(); ++i) {
        for (std::uint32_t j = 0; j < gens[g2].tokens.size(); ++j) {
          const double s = score(g1, i, g2, j);
          if (s >= threshold) cands.push_back({s, offsets[g1] + i, offsets[g2] + j});
        }
      }
    }
  }
  std::sort(cands.begin(), cands.end(), merge_order);
  return merge_candidates(lattice, threshold, cands);
}

TokenLattice collapse_chains(const TokenLattice& lattice) {
  const std::size_t n = lattice.nodes.size();
  std::vector<std::uint32_t> out_degree(n, 0), in_degree(n, 0);
  const Adjacency adj = lattice.adjacency();
  for (const auto& [edge, count] : adj) {
    ++out_degree[edge.first];
    ++in_degree[edge.second];
  }
  UnionFind uf(n);
  for (const auto& [edge, count] : adj) {
    const auto [u, v] = edge;
    if (out_degree[u] == 1 && in_degree[v] == 1 && count == lattice.nodes[u].frequency &&
        count == lattice.nodes[v].frequency) {
      uf.unite(u, v);
    }
  }
  const auto offsets = generation_offsets(lattice.generations);
  std::vector<std::uint32_t> group_of(offsets.back(), 0);
  for (std::uint32_t k = 0; k < n; ++k) {
    const std::uint32_t root = uf.find(k);
    for (const Member& m : lattice.nodes[k].members) {
      for (std::uint32_t i = m.begin; i < m.end; ++i) group_of[offsets[m.generation] + i] = root;
    }
  }
  return assemble(lattice.mode, lattice.merge_threshold, lattice.generations, group_of,
                  std::max<std::size_t>(n, 1));
}

LatticeStats stats(const TokenLattice& lattice) {
  LatticeStats s;
  s.node_count = lattice.nodes.size();
  s.total_tokens = lattice.total_tokens();
  s.generation_count = lattice.generations.size();
  std::set<std::vector<std::uint32_t>> paths;
  for (const Traversal& t : lattice.traversals) {
    if (!t.path.empty()) s.traversal_edge_count += t.path.size() - 1;
    paths.insert(t.path);
  }
  s.distinct_path_count = paths.size();
  s.compression_ratio =
      s.total_tokens == 0 ? 1.0
                          : static_cast<double>(s.node_count) / static_cast<double>(s.total_tokens);
  s.mean_out_degree = s.node_count == 0 ? 0.0
                                        : static_cast<double>(lattice.adjacency().size()) /
                                              static_cast<double>(s.node_count);
  return s;
}

std::vector<std::string> check_invariants(const TokenLattice& lattice) {
  std::vector<std::string> problems;
  auto report = [&](std::string msg) { problems.push_back(std::move(msg)); };

  if (lattice.traversals.size() != lattice.generations.size()) {
    report("traversal count differs from generation count");
    return problems;
  }
  const std::size_t n = lattice.nodes.size();
  for (std::uint32_t k = 0; k < n; ++k) {
    const LatticeNode& node = lattice.nodes[k];
    if (node.members.empty()) report("node " + node.id + " has no members");
    std::set<std::uint32_t> gens;
    for (std::size_t i = 0; i < node.members.size(); ++i) {
      const Member& m = node.members[i];
      if (m.generation >= lattice.generations.size() || m.begin >= m.end ||
          m.end > lattice.generations[m.generation].tokens.size()) {
        report("node " + node.id + " has an out-of-range member");
        return problems;
      }
      if (!gens.insert(m.generation).second) {
        report("node " + node.id + " is visited twice by one generation");
      }
    }
    if (node.frequency != gens.size()) report("node " + node.id + " frequency mismatch");
  }

  for (std::uint32_t g = 0; g < lattice.generations.size(); ++g) {
    const Traversal& t = lattice.traversals[g];
    const auto& gen = lattice.generations[g];
    if (t.generation != g) report("traversal order mismatch at " + gen.id);
    std::uint32_t expected = 0;
    std::set<std::uint32_t> seen;
    for (std::uint32_t node : t.path) {
      if (node >= n) {
        report("traversal of " + gen.id + " references a missing node");
        return problems;
      }
      if (!seen.insert(node).second) report("traversal of " + gen.id + " is not simple");
      const auto& members = lattice.nodes[node].members;
      const auto it = std::lower_bound(members.begin(), members.end(), Member{g, 0, 0});
      if (it == members.end() || it->generation != g || it->begin != expected) {
        report("traversal of " + gen.id + " does not cover its tokens in order");
        break;
      }
      expected = it->end;
    }
    if (expected != gen.tokens.size() && problems.empty()) {
      report("traversal of " + gen.id + " does not cover all tokens");
    }
    if (problems.empty() && lattice.reconstruct(g) != reconstruct(gen.tokens)) {
      report("path of " + gen.id + " does not reproduce its text");
    }
  }

  // Acyclicity of the adjacency (every edge is witnessed by construction,
  // adjacency() derives from traversals).
  std::vector<std::vector<std::uint32_t>> succ(n);
  std::vector<std::uint32_t> indeg(n, 0);
  for (const auto& [edge, count] : lattice.adjacency()) {
    if (count == 0) report("unwitnessed edge");
    succ[edge.first].push_back(edge.second);
    ++indeg[edge.second];
  }
  std::vector<std::uint32_t> ready;
  for (std::uint32_t k = 0; k < n; ++k) {
    if (indeg[k] == 0) ready.push_back(k);
  }
  std::size_t visited = 0;
  while (!ready.empty()) {
    const std::uint32_t u = ready.back();
    ready.pop_back();
    ++visited;
    for (std::uint32_t v : succ[u]) {
      if (--indeg[v] == 0) ready.push_back(v);
    }
  }
  if (visited != n) report("node adjacency contains a cycle");
  return problems;
}

// --- PairScorer --------------------------------------------------------------

PairScorer::PairScorer(const std::vector<LatticeGeneration>& generations,
                       EmbeddingProvider& provider, ScorerOptions options)
    : options_(options), offsets_(generation_offsets(generations)) {
  if (options_.stopwords == nullptr) options_.stopwords = &StopwordList::builtin();
  const std::size_t n = offsets_.back();
  for (const auto& g : generations) max_length_ = std::max(max_length_, g.tokens.size());

  std::vector<std::string> unique_contexts;
  std::unordered_map<std::string, std::uint32_t> context_row;
  std::vector<std::uint32_t> row_of(n);
  std::unordered_map<std::string, std::uint32_t> folded;
  folded_id_.resize(n);
  stopword_.resize(n);
  bare_index_.assign(n, -1);
  std::vector<std::string> bare_surfaces;
  std::unordered_map<std::string, std::int32_t> bare_row;

  for (std::uint32_t g = 0; g < generations.size(); ++g) {
    const TokenSequence& seq = generations[g].tokens;
    for (std::uint32_t i = 0; i < seq.size(); ++i) {
      const std::uint32_t o = offsets_[g] + i;
      auto ctx = context_text(seq, i, options_.window);
      auto [it, inserted] =
          context_row.emplace(std::move(ctx), static_cast<std::uint32_t>(unique_contexts.size()));
      if (inserted) unique_contexts.push_back(it->first);
      row_of[o] = it->second;
      folded_id_[o] = folded.emplace(ascii_fold(seq[i].surface),
                                     static_cast<std::uint32_t>(folded.size()))
                          .first->second;
      stopword_[o] = options_.stopwords->contains(seq[i].surface) ? 1 : 0;
      if (stopword_[o]) {
        auto [bit, binserted] = bare_row.emplace(
            seq[i].surface, static_cast<std::int32_t>(bare_surfaces.size()));
        if (binserted) bare_surfaces.push_back(seq[i].surface);
        bare_index_[o] = bit->second;
      }
    }
  }
  if (n == 0) return;

  auto contexts = provider.embed_batch(unique_contexts);
  dim_ = contexts.front().dimension();
  const auto& k = simd::kernels();
  auto check = [&](const EmbeddingVector& v) {
    if (v.dimension() != dim_ || dim_ == 0) {
      throw ContractViolation("embedding provider returned inconsistent dimensions");
    }
  };
  context_vectors_.resize(n * dim_);
  context_norm_sq_.resize(n);
  std::vector<double> row_norm(contexts.size());
  for (std::size_t r = 0; r < contexts.size(); ++r) {
    check(contexts[r]);
    row_norm[r] = k.dot(contexts[r].values.data(), contexts[r].values.data(), dim_);
    if (row_norm[r] == 0.0) throw ContractViolation("embedding provider returned a zero vector");
  }
  for (std::uint32_t o = 0; o < n; ++o) {
    std::copy(contexts[row_of[o]].values.begin(), contexts[row_of[o]].values.end(),
              context_vectors_.begin() + static_cast<std::ptrdiff_t>(o * dim_));
    context_norm_sq_[o] = row_norm[row_of[o]];
  }
  if (!bare_surfaces.empty()) {
    auto bare = provider.embed_batch(bare_surfaces);
    bare_vectors_.resize(bare.size() * dim_);
    bare_norm_sq_.resize(bare.size());
    for (std::size_t r = 0; r < bare.size(); ++r) {
      check(bare[r]);
      std::copy(bare[r].values.begin(), bare[r].values.end(),
                bare_vectors_.begin() + static_cast<std::ptrdiff_t>(r * dim_));
      bare_norm_sq_[r] = k.dot(bare[r].values.data(), bare[r].values.data(), dim_);
      if (bare_norm_sq_[r] == 0.0) {
        throw ContractViolation("embedding provider returned a zero vector");
      }
    }
  }
}

double PairScorer::context_cosine(std::uint32_t oa, std::uint32_t ob) const {
  const double d =
      simd::kernels().dot(&context_vectors_[oa * dim_], &context_vectors_[ob * dim_], dim_);
  return cosine_from_parts(d, context_norm_sq_[oa], context_norm_sq_[ob]);
}

double PairScorer::stopword_score(std::uint32_t oa, std::uint32_t ob, std::uint32_t gen_a,
                                  std::uint32_t idx_a, std::uint32_t gen_b,
                                  std::uint32_t idx_b) const {
  const std::uint32_t len_a = offsets_[gen_a + 1] - offsets_[gen_a];
  const std::uint32_t len_b = offsets_[gen_b + 1] - offsets_[gen_b];
  auto bare = [&] {
    const auto ra = static_cast<std::size_t>(bare_index_[oa]);
    const auto rb = static_cast<std::size_t>(bare_index_[ob]);
    const double d = simd::kernels().dot(&bare_vectors_[ra * dim_], &bare_vectors_[rb * dim_], dim_);
    return cosine_from_parts(d, bare_norm_sq_[ra], bare_norm_sq_[rb]);
  };
  const double prev = (idx_a > 0 && idx_b > 0) ? context_cosine(oa - 1, ob - 1) : bare();
  const double next =
      (idx_a + 1 < len_a && idx_b + 1 < len_b) ? context_cosine(oa + 1, ob + 1) : bare();
  return (prev + next) / 2.0;
}

double PairScorer::score(std::uint32_t gen_a, std::uint32_t idx_a, std::uint32_t gen_b,
                         std::uint32_t idx_b) const {
  const std::uint32_t oa = occurrence(gen_a, idx_a);
  const std::uint32_t ob = occurrence(gen_b, idx_b);
  if (idx_a >= offsets_[gen_a + 1] - offsets_[gen_a] ||
      idx_b >= offsets_[gen_b + 1] - offsets_[gen_b]) {
    throw ContractViolation("PairScorer::score: token position out of range");
  }
  const double penalty = positional_penalty(idx_a, idx_b);
  if (folded_id_[oa] == folded_id_[ob]) return 1.0 - penalty;
  if (stopword_[oa] && stopword_[ob]) {
    return stopword_score(oa, ob, gen_a, idx_a, gen_b, idx_b) - penalty;
  }
  return context_cosine(oa, ob) - penalty;
}

void PairScorer::score_band(std::uint32_t g1, std::size_t max_delta, double threshold,
                            std::vector<ScoredPair>& out, std::vector<double>& scratch) const {
  const auto& k = simd::kernels();
  const std::size_t gens = offsets_.size() - 1;
  const std::uint32_t len1 = offsets_[g1 + 1] - offsets_[g1];
  for (std::uint32_t g2 = g1 + 1; g2 < gens; ++g2) {
    const std::uint32_t len2 = offsets_[g2 + 1] - offsets_[g2];
    if (len2 == 0) continue;
    for (std::uint32_t i = 0; i < len1; ++i) {
      const std::uint32_t jlo = i > max_delta ? static_cast<std::uint32_t>(i - max_delta) : 0;
      const std::uint32_t jhi =
          static_cast<std::uint32_t>(std::min<std::size_t>(len2 - 1, i + max_delta));
      if (jlo > jhi) continue;
      const std::uint32_t oa = offsets_[g1] + i;
      const std::uint32_t ob0 = offsets_[g2] + jlo;
      const std::size_t count = jhi - jlo + 1;
      scratch.resize(count);
      k.dot_rows(&context_vectors_[oa * dim_], &context_vectors_[ob0 * dim_], count, dim_,
                 scratch.data());
      for (std::uint32_t j = jlo; j <= jhi; ++j) {
        const std::uint32_t ob = offsets_[g2] + j;
        const double penalty = positional_penalty(i, j);
        double s;
        if (folded_id_[oa] == folded_id_[ob]) {
          s = 1.0 - penalty;
        } else if (stopword_[oa] && stopword_[ob]) {
          s = stopword_score(oa, ob, g1, i, g2, j) - penalty;
        } else {
          s = cosine_from_parts(scratch[j - jlo], context_norm_sq_[oa], context_norm_sq_[ob]) -
              penalty;
        }
        if (s >= threshold) out.push_back({s, oa, ob});
      }
    }
  }
}

std::span<const ScoredPair> PairScorer::candidates(double threshold) {
  require_finite(threshold);
  if (!cached_floor_ || threshold < *cached_floor_) {
    const std::size_t gens = offsets_.size() - 1;
    const std::size_t max_delta = max_delta_for(threshold, max_length_);
    std::vector<std::vector<ScoredPair>> per_gen(gens);
    std::atomic<std::uint32_t> next{0};
    auto worker = [&] {
      std::vector<double> scratch;
      for (std::uint32_t g = next++; g < gens; g = next++) {
        score_band(g, max_delta, threshold, per_gen[g], scratch);
      }
    };
    unsigned threads = options_.threads != 0 ? options_.threads
                                             : std::max(1u, std::thread::hardware_concurrency());
    threads = static_cast<unsigned>(std::min<std::size_t>(threads, std::max<std::size_t>(gens, 1)));
    if (threads <= 1 || dim_ == 0) {
      worker();
    } else {
      std::vector<std::jthread> pool;
      for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
    }
    std::size_t total = 0;
    for (const auto& v : per_gen) total += v.size();
    cached_.clear();
    cached_.reserve(total);
    for (auto& v : per_gen) cached_.insert(cached_.end(), v.begin(), v.end());
    std::sort(cached_.begin(), cached_.end(), merge_order);
    cached_floor_ = threshold;
    // Evaluation count: every (i, j) inside the band.
    for (std::uint32_t g1 = 0; g1 < gens; ++g1) {
      const std::size_t len1 = offsets_[g1 + 1] - offsets_[g1];
      for (std::uint32_t g2 = g1 + 1; g2 < gens; ++g2) {
        const std::size_t len2 = offsets_[g2 + 1] - offsets_[g2];
        for (std::size_t i = 0; i < len1 && len2 > 0; ++i) {
          const std::size_t lo = i > max_delta ? i - max_delta : 0;
          const std::size_t hi = std::min(len2 - 1, i + max_delta);
          if (lo <= hi) evaluations_ += hi - lo + 1;
        }
      }
    }
  }
  const auto end = std::partition_point(cached_.begin(), cached_.end(),
                                        [&](const ScoredPair& p) { return p.score >= threshold; });
  return {cached_.data(), static_cast<std::size_t>(end - cached_.begin())};
}

// --- LatticeBuilder ----------------------------------------------------------

LatticeBuilder::LatticeBuilder(std::vector<LatticeGeneration> generations,
                               EmbeddingProvider& provider, BuilderOptions options)
    : chains_(build_chains(std::move(generations), options.mode)),
      scorer_(std::make_unique<PairScorer>(chains_.generations, provider, options.scorer)) {}

LatticeBuilder::LatticeBuilder(std::span<const RawGeneration> raw, EmbeddingProvider& provider,
                               BuilderOptions options)
    : LatticeBuilder(segment_generations(raw, options.mode), provider, options) {}

TokenLattice LatticeBuilder::merged(double threshold) {
  return merge_similar(chains_, threshold, *scorer_);
}

TokenLattice LatticeBuilder::rebuild_with_threshold(double threshold) {
  return collapse_chains(merged(threshold));
}

}  // namespace tl
