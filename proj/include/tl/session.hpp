#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "tl/embedding.hpp"
#include "tl/lattice.hpp"
#include "tl/layout.hpp"
#include "tl/segment.hpp"

namespace tl {

inline constexpr int kSessionSchemaVersion = 1;

struct PromptConfig {
  std::string prompt_id;
  std::string prompt_text;
  std::string model_id;
  double temperature = 1.0;
  int n_generations = 20;
  std::string palette_color;  // "#RRGGBB"; assigned by add_prompt when empty

  // Throws InvalidArgument.
  void validate() const;
};

enum class ComparisonLayout { merged, side_by_side };

std::string_view to_string(ComparisonLayout layout) noexcept;
std::optional<ComparisonLayout> parse_comparison_layout(std::string_view name) noexcept;

struct ViewState {
  std::set<std::string> selected_node_ids;
  double longtail_t = 0.0;
  double merge_threshold = kDefaultMergeThreshold;
  double lambda = 0.5;
  std::uint64_t seed = 42;
  SegmentationMode mode = SegmentationMode::space;
  ComparisonLayout comparison = ComparisonLayout::merged;

  // Range checks only; selection is checked against a lattice elsewhere.
  void validate() const;
};

struct FilterResult {
  std::set<std::string> emphasized_generation_ids;
  std::set<std::string> deemphasized_generation_ids;
};

// One immutable version of a session. Mutations return a new value.
struct SessionState {
  std::string session_id;
  std::uint64_t version = 0;
  std::vector<PromptConfig> prompts;
  std::vector<RawGeneration> generations;
  ViewState view;

  const PromptConfig* find_prompt(std::string_view prompt_id) const;
  PromptPalette palette() const;
  // SHA-256 over the canonical JSON of prompts, generations and view.
  std::string digest() const;
};

SessionState add_prompt(const SessionState& state, PromptConfig config);
// Appends generations to a registered prompt. Generation ids must be fresh.
SessionState add_generations(const SessionState& state, const std::string& prompt_id,
                             std::vector<RawGeneration> generations);

// A generation is emphasized iff its traversal visits every selected node.
// Unknown ids throw NotFound.
FilterResult select_nodes(const TokenLattice& lattice, const std::set<std::string>& node_ids);
FilterResult select_nodes(std::span<const TokenLattice* const> lattices,
                          const std::set<std::string>& node_ids);

// Node ids along the generation's traversal. Unknown generation: NotFound.
std::vector<std::string> crosslink(const TokenLattice& lattice, std::string_view generation_id);

// For each selected node of `before`, the node of `after` sharing the most
// token occurrences with it. Nodes with no overlap are dropped.
std::set<std::string> remap_selection(const TokenLattice& before, const TokenLattice& after,
                                      const std::set<std::string>& selection);

// Builders, lattices and layouts keyed by content, shared across sessions.
// Thread-safe; entries are immutable once published.
class LatticeCache {
 public:
  explicit LatticeCache(EmbeddingProvider& provider, std::size_t capacity = 64,
                        ScorerOptions scorer = {});

  std::shared_ptr<const TokenLattice> lattice(std::span<const RawGeneration> generations,
                                              SegmentationMode mode, double threshold);
  std::shared_ptr<const LayoutResult> layout(std::span<const RawGeneration> generations,
                                             SegmentationMode mode, double threshold,
                                             const LayoutParams& params,
                                             const PromptPalette& palette);

  // Seeds the cache, e.g. from a persisted bundle.
  void insert(std::span<const RawGeneration> generations, SegmentationMode mode,
              double threshold, std::shared_ptr<const TokenLattice> lattice);

  std::size_t builds() const;
  EmbeddingProvider& provider() noexcept { return provider_; }

 private:
  std::string corpus_key(std::span<const RawGeneration> generations, SegmentationMode mode) const;

  EmbeddingProvider& provider_;
  std::size_t capacity_;
  ScorerOptions scorer_;
  mutable std::mutex mu_;
  std::map<std::string, std::shared_ptr<LatticeBuilder>> builders_;
  std::deque<std::string> builder_order_;
  std::map<std::string, std::shared_ptr<const TokenLattice>> lattices_;
  std::deque<std::string> lattice_order_;
  std::map<std::string, std::shared_ptr<const LayoutResult>> layouts_;
  std::deque<std::string> layout_order_;
  std::size_t builds_ = 0;
};

struct ComparisonPanel {
  std::string scope;  // "*" for the merged panel, else a prompt id
  std::vector<RawGeneration> generations;
  std::shared_ptr<const TokenLattice> lattice;
};

// merged: one lattice over every prompt; side_by_side: one per prompt in
// prompt order. Both share the session palette.
std::vector<ComparisonPanel> assemble_comparison(const SessionState& state, LatticeCache& cache,
                                                 std::optional<ComparisonLayout> layout = {});

// Rebuilds at `threshold` and carries the selection over by member overlap.
SessionState set_merge_threshold(const SessionState& state, double threshold,
                                 LatticeCache& cache);

// Validates ids against the current lattices (NotFound otherwise).
SessionState set_selection(const SessionState& state, std::set<std::string> node_ids,
                           LatticeCache& cache);

nlohmann::json to_json(const PromptConfig& config);
PromptConfig prompt_config_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const ViewState& view);
// Starts from `base` and overrides the keys present.
ViewState view_state_from_json(const nlohmann::json& doc, ViewState base = {});
nlohmann::json to_json(const RawGeneration& generation);
RawGeneration raw_generation_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const FilterResult& filter);

// Versioned bundle: prompts, generations, view state, and cached lattices and
// layouts for the current view keyed by (mode, threshold, lambda, seed).
nlohmann::json save_session(const SessionState& state, LatticeCache* cache = nullptr);
// Restores the state; cached lattices in the bundle are validated and, when
// `cache` is given, seeded into it. Throws ParseError.
SessionState load_session(const nlohmann::json& bundle, LatticeCache* cache = nullptr);

// Session registry with per-session serialized writers and snapshot history.
class SessionStore {
 public:
  std::shared_ptr<const SessionState> create(ViewState view = {});
  std::shared_ptr<const SessionState> get(const std::string& session_id) const;

  template <typename Fn>
  std::shared_ptr<const SessionState> update(const std::string& session_id, Fn&& fn) {
    auto entry = find(session_id);
    std::lock_guard writer(entry->write_mu);
    auto current = entry->current();
    auto next = std::make_shared<SessionState>(fn(*current));
    next->session_id = current->session_id;
    next->version = current->version + 1;
    entry->publish(std::move(next));
    return entry->current();
  }

  // Restores the previous snapshot (as a new version). NotFound when there is
  // no history.
  std::shared_ptr<const SessionState> undo(const std::string& session_id);
  std::shared_ptr<const SessionState> adopt(SessionState state);

  std::size_t size() const;

 private:
  struct Entry {
    std::mutex write_mu;
    mutable std::mutex read_mu;
    std::vector<std::shared_ptr<const SessionState>> history;

    std::shared_ptr<const SessionState> current() const;
    void publish(std::shared_ptr<const SessionState> next);
  };

  std::shared_ptr<Entry> find(const std::string& session_id) const;

  mutable std::mutex mu_;
  std::map<std::string, std::shared_ptr<Entry>> sessions_;
  std::uint64_t counter_ = 0;
};

}  // namespace tl
