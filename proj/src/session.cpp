#include "tl/session.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "tl/digest.hpp"
#include "tl/errors.hpp"

namespace tl {
namespace {

using nlohmann::json;

template <typename T>
void evict(std::map<std::string, T>& map, std::deque<std::string>& order, std::size_t capacity) {
  while (order.size() > capacity) {
    map.erase(order.front());
    order.pop_front();
  }
}

std::string threshold_key(double t) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", t);
  return buf;
}

std::vector<RawGeneration> generations_of(const SessionState& state, const std::string& prompt) {
  std::vector<RawGeneration> out;
  for (const auto& g : state.generations) {
    if (g.prompt_id == prompt) out.push_back(g);
  }
  return out;
}

template <typename T>
T field(const json& doc, const char* key, const char* where) {
  const auto it = doc.find(key);
  if (it == doc.end()) throw InvalidArgument(std::string(where) + ": missing '" + key + "'");
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    throw InvalidArgument(std::string(where) + ": '" + key + "' has the wrong type");
  }
}

template <typename T>
void optional_field(const json& doc, const char* key, T& out, const char* where) {
  const auto it = doc.find(key);
  if (it == doc.end() || it->is_null()) return;
  try {
    out = it->get<T>();
  } catch (const json::exception&) {
    throw InvalidArgument(std::string(where) + ": '" + key + "' has the wrong type");
  }
}

}  // namespace

void PromptConfig::validate() const {
  if (prompt_id.empty()) throw InvalidArgument("prompt_id must not be empty");
  if (n_generations < 1) throw InvalidArgument("n_generations must be >= 1");
  if (!std::isfinite(temperature) || temperature < 0.0) {
    throw InvalidArgument("temperature must be >= 0");
  }
  if (!palette_color.empty()) rgb_from_hex(palette_color);
}

std::string_view to_string(ComparisonLayout layout) noexcept {
  return layout == ComparisonLayout::merged ? "merged" : "side_by_side";
}

std::optional<ComparisonLayout> parse_comparison_layout(std::string_view name) noexcept {
  if (name == "merged") return ComparisonLayout::merged;
  if (name == "side_by_side") return ComparisonLayout::side_by_side;
  return std::nullopt;
}

void ViewState::validate() const {
  if (!std::isfinite(longtail_t) || longtail_t < 0.0 || longtail_t > 1.0) {
    throw InvalidArgument("longtail must be in [0, 1]");
  }
  if (!std::isfinite(lambda) || lambda < 0.0 || lambda > 1.0) {
    throw InvalidArgument("lambda must be in [0, 1]");
  }
  if (!std::isfinite(merge_threshold)) throw InvalidArgument("threshold must be finite");
}

const PromptConfig* SessionState::find_prompt(std::string_view prompt_id) const {
  for (const auto& p : prompts) {
    if (p.prompt_id == prompt_id) return &p;
  }
  return nullptr;
}

PromptPalette SessionState::palette() const {
  PromptPalette out;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    out[prompts[i].prompt_id] = rgb_from_hex(
        prompts[i].palette_color.empty() ? palette_hex(i) : prompts[i].palette_color);
  }
  std::size_t next = prompts.size();
  for (const auto& g : generations) {
    if (!out.contains(g.prompt_id)) out[g.prompt_id] = rgb_from_hex(palette_hex(next++));
  }
  return out;
}

std::string SessionState::digest() const {
  json doc;
  doc["prompts"] = json::array();
  for (const auto& p : prompts) doc["prompts"].push_back(to_json(p));
  doc["generations"] = json::array();
  for (const auto& g : generations) doc["generations"].push_back(to_json(g));
  doc["view"] = to_json(view);
  return sha256_hex(doc.dump());
}

SessionState add_prompt(const SessionState& state, PromptConfig config) {
  config.validate();
  if (state.find_prompt(config.prompt_id)) {
    throw Conflict("prompt '" + config.prompt_id + "' already exists");
  }
  if (config.palette_color.empty()) config.palette_color = palette_hex(state.prompts.size());
  SessionState next = state;
  next.prompts.push_back(std::move(config));
  return next;
}

SessionState add_generations(const SessionState& state, const std::string& prompt_id,
                             std::vector<RawGeneration> generations) {
  if (!state.find_prompt(prompt_id)) throw NotFound("unknown prompt '" + prompt_id + "'");
  std::set<std::string> ids;
  for (const auto& g : state.generations) ids.insert(g.id);
  SessionState next = state;
  for (auto& g : generations) {
    if (g.id.empty()) throw InvalidArgument("generation id must not be empty");
    if (!ids.insert(g.id).second) throw Conflict("generation '" + g.id + "' already exists");
    g.prompt_id = prompt_id;
    next.generations.push_back(std::move(g));
  }
  return next;
}

FilterResult select_nodes(std::span<const TokenLattice* const> lattices,
                          const std::set<std::string>& node_ids) {
  std::set<std::string> unresolved = node_ids;
  for (const TokenLattice* l : lattices) {
    for (const auto& id : node_ids) {
      if (l->find_node(id)) unresolved.erase(id);
    }
  }
  if (!unresolved.empty()) throw NotFound("unknown node '" + *unresolved.begin() + "'");

  FilterResult out;
  for (const TokenLattice* l : lattices) {
    std::vector<std::uint32_t> wanted;
    bool all_here = true;
    for (const auto& id : node_ids) {
      const auto idx = l->find_node(id);
      if (!idx) {
        all_here = false;
        break;
      }
      wanted.push_back(*idx);
    }
    for (std::size_t g = 0; g < l->generations.size(); ++g) {
      bool visits_all = all_here;
      if (visits_all) {
        const auto& path = l->traversals[g].path;
        for (auto w : wanted) {
          if (std::find(path.begin(), path.end(), w) == path.end()) {
            visits_all = false;
            break;
          }
        }
      }
      (visits_all ? out.emphasized_generation_ids : out.deemphasized_generation_ids)
          .insert(l->generations[g].id);
    }
  }
  return out;
}

FilterResult select_nodes(const TokenLattice& lattice, const std::set<std::string>& node_ids) {
  const TokenLattice* one[] = {&lattice};
  return select_nodes(one, node_ids);
}

std::vector<std::string> crosslink(const TokenLattice& lattice, std::string_view generation_id) {
  const auto g = lattice.find_generation(generation_id);
  if (!g) throw NotFound("unknown generation '" + std::string(generation_id) + "'");
  std::vector<std::string> out;
  for (auto v : lattice.traversals[*g].path) out.push_back(lattice.nodes[v].id);
  return out;
}

std::set<std::string> remap_selection(const TokenLattice& before, const TokenLattice& after,
                                      const std::set<std::string>& selection) {
  // Token occurrence -> node of `after`, addressed by generation id.
  std::map<std::string, std::vector<std::uint32_t>> owner;
  for (std::uint32_t k = 0; k < after.nodes.size(); ++k) {
    for (const Member& m : after.nodes[k].members) {
      auto& slots = owner[after.generations[m.generation].id];
      if (slots.size() < m.end) slots.resize(m.end, 0);
      for (auto i = m.begin; i < m.end; ++i) slots[i] = k;
    }
  }
  std::set<std::string> out;
  for (const auto& id : selection) {
    const auto idx = before.find_node(id);
    if (!idx) continue;
    std::map<std::uint32_t, std::size_t> overlap;
    for (const Member& m : before.nodes[*idx].members) {
      const auto it = owner.find(before.generations[m.generation].id);
      if (it == owner.end()) continue;
      for (auto i = m.begin; i < m.end && i < it->second.size(); ++i) ++overlap[it->second[i]];
    }
    if (overlap.empty()) continue;
    const auto best = std::max_element(overlap.begin(), overlap.end(), [](auto& a, auto& b) {
      return a.second != b.second ? a.second < b.second : a.first > b.first;
    });
    out.insert(after.nodes[best->first].id);
  }
  return out;
}

LatticeCache::LatticeCache(EmbeddingProvider& provider, std::size_t capacity, ScorerOptions scorer)
    : provider_(provider), capacity_(std::max<std::size_t>(capacity, 1)), scorer_(scorer) {}

std::string LatticeCache::corpus_key(std::span<const RawGeneration> generations,
                                     SegmentationMode mode) const {
  std::string blob(to_string(mode));
  for (const auto& g : generations) {
    blob += '\x1f' + g.id + '\x1e' + g.prompt_id + '\x1e' + g.text;
  }
  return sha256_hex(blob);
}

std::shared_ptr<const TokenLattice> LatticeCache::lattice(
    std::span<const RawGeneration> generations, SegmentationMode mode, double threshold) {
  if (!std::isfinite(threshold)) throw InvalidArgument("threshold must be finite");
  const std::string corpus = corpus_key(generations, mode);
  const std::string key = corpus + "@" + threshold_key(threshold);
  std::lock_guard lock(mu_);
  if (const auto it = lattices_.find(key); it != lattices_.end()) return it->second;
  auto& builder = builders_[corpus];
  if (!builder) {
    builder = std::make_shared<LatticeBuilder>(generations, provider_,
                                               BuilderOptions{mode, scorer_});
    builder_order_.push_back(corpus);
  }
  auto built = std::make_shared<const TokenLattice>(builder->rebuild_with_threshold(threshold));
  ++builds_;
  lattices_[key] = built;
  lattice_order_.push_back(key);
  evict(lattices_, lattice_order_, capacity_);
  evict(builders_, builder_order_, std::max<std::size_t>(capacity_ / 4, 2));
  return built;
}

std::shared_ptr<const LayoutResult> LatticeCache::layout(
    std::span<const RawGeneration> generations, SegmentationMode mode, double threshold,
    const LayoutParams& params, const PromptPalette& palette) {
  auto lat = lattice(generations, mode, threshold);
  json palette_doc = json::object();
  for (const auto& [k, v] : palette) palette_doc[k] = {v.r, v.g, v.b};
  const std::string key = corpus_key(generations, mode) + "@" + threshold_key(threshold) + "/" +
                          sha256_hex(to_json(params).dump() + palette_doc.dump());
  {
    std::lock_guard lock(mu_);
    if (const auto it = layouts_.find(key); it != layouts_.end()) return it->second;
  }
  auto result = std::make_shared<const LayoutResult>(compute_layout(*lat, params, palette));
  std::lock_guard lock(mu_);
  const auto [it, inserted] = layouts_.emplace(key, result);
  if (inserted) {
    layout_order_.push_back(key);
    evict(layouts_, layout_order_, capacity_);
  }
  return it->second;
}

void LatticeCache::insert(std::span<const RawGeneration> generations, SegmentationMode mode,
                          double threshold, std::shared_ptr<const TokenLattice> lattice) {
  const std::string key = corpus_key(generations, mode) + "@" + threshold_key(threshold);
  std::lock_guard lock(mu_);
  if (lattices_.emplace(key, std::move(lattice)).second) {
    lattice_order_.push_back(key);
    evict(lattices_, lattice_order_, capacity_);
  }
}

std::size_t LatticeCache::builds() const {
  std::lock_guard lock(mu_);
  return builds_;
}

std::vector<ComparisonPanel> assemble_comparison(const SessionState& state, LatticeCache& cache,
                                                 std::optional<ComparisonLayout> layout) {
  const ComparisonLayout mode = layout.value_or(state.view.comparison);
  std::vector<ComparisonPanel> panels;
  if (mode == ComparisonLayout::merged) {
    ComparisonPanel p{"*", state.generations, nullptr};
    p.lattice = cache.lattice(p.generations, state.view.mode, state.view.merge_threshold);
    panels.push_back(std::move(p));
    return panels;
  }
  for (const auto& prompt : state.prompts) {
    ComparisonPanel p{prompt.prompt_id, generations_of(state, prompt.prompt_id), nullptr};
    p.lattice = cache.lattice(p.generations, state.view.mode, state.view.merge_threshold);
    panels.push_back(std::move(p));
  }
  return panels;
}

SessionState set_merge_threshold(const SessionState& state, double threshold,
                                 LatticeCache& cache) {
  if (!std::isfinite(threshold)) throw InvalidArgument("threshold must be finite");
  if (threshold == state.view.merge_threshold) return state;
  SessionState next = state;
  next.view.merge_threshold = threshold;
  if (!state.view.selected_node_ids.empty()) {
    const auto before = assemble_comparison(state, cache);
    const auto after = assemble_comparison(next, cache);
    std::set<std::string> remapped;
    for (std::size_t i = 0; i < before.size(); ++i) {
      std::set<std::string> mine;
      for (const auto& id : state.view.selected_node_ids) {
        if (before[i].lattice->find_node(id)) mine.insert(id);
      }
      remapped.merge(remap_selection(*before[i].lattice, *after[i].lattice, mine));
    }
    next.view.selected_node_ids = std::move(remapped);
  }
  return next;
}

SessionState set_selection(const SessionState& state, std::set<std::string> node_ids,
                           LatticeCache& cache) {
  const auto panels = assemble_comparison(state, cache);
  std::vector<const TokenLattice*> lattices;
  for (const auto& p : panels) lattices.push_back(p.lattice.get());
  select_nodes(lattices, node_ids);
  SessionState next = state;
  next.view.selected_node_ids = std::move(node_ids);
  return next;
}

json to_json(const PromptConfig& c) {
  return {{"prompt_id", c.prompt_id},     {"prompt_text", c.prompt_text},
          {"model_id", c.model_id},       {"temperature", c.temperature},
          {"n_generations", c.n_generations}, {"palette_color", c.palette_color}};
}

PromptConfig prompt_config_from_json(const json& doc) {
  if (!doc.is_object()) throw InvalidArgument("prompt config must be an object");
  PromptConfig c;
  c.prompt_id = field<std::string>(doc, "prompt_id", "prompt");
  optional_field(doc, "prompt_text", c.prompt_text, "prompt");
  optional_field(doc, "model_id", c.model_id, "prompt");
  optional_field(doc, "temperature", c.temperature, "prompt");
  optional_field(doc, "n_generations", c.n_generations, "prompt");
  optional_field(doc, "palette_color", c.palette_color, "prompt");
  c.validate();
  return c;
}

json to_json(const ViewState& v) {
  return {{"selected_node_ids", v.selected_node_ids},
          {"longtail", v.longtail_t},
          {"threshold", v.merge_threshold},
          {"lambda", v.lambda},
          {"seed", v.seed},
          {"mode", std::string(to_string(v.mode))},
          {"layout", std::string(to_string(v.comparison))}};
}

ViewState view_state_from_json(const json& doc, ViewState v) {
  if (!doc.is_object()) throw InvalidArgument("view state must be an object");
  optional_field(doc, "selected_node_ids", v.selected_node_ids, "view");
  optional_field(doc, "longtail", v.longtail_t, "view");
  optional_field(doc, "threshold", v.merge_threshold, "view");
  optional_field(doc, "lambda", v.lambda, "view");
  optional_field(doc, "seed", v.seed, "view");
  if (const auto it = doc.find("mode"); it != doc.end()) {
    const auto m = it->is_string() ? parse_segmentation_mode(it->get<std::string>()) : std::nullopt;
    if (!m) throw InvalidArgument("view: mode must be space, sentence or phrase");
    v.mode = *m;
  }
  if (const auto it = doc.find("layout"); it != doc.end()) {
    const auto l = it->is_string() ? parse_comparison_layout(it->get<std::string>()) : std::nullopt;
    if (!l) throw InvalidArgument("view: layout must be merged or side_by_side");
    v.comparison = *l;
  }
  v.validate();
  return v;
}

json to_json(const RawGeneration& g) {
  return {{"id", g.id},
          {"prompt_id", g.prompt_id},
          {"text", g.text},
          {"model_id", g.model_id},
          {"temperature", g.temperature},
          {"sample_index", g.sample_index}};
}

RawGeneration raw_generation_from_json(const json& doc) {
  if (!doc.is_object()) throw InvalidArgument("generation must be an object");
  RawGeneration g;
  g.id = field<std::string>(doc, "id", "generation");
  g.text = field<std::string>(doc, "text", "generation");
  optional_field(doc, "prompt_id", g.prompt_id, "generation");
  optional_field(doc, "model_id", g.model_id, "generation");
  optional_field(doc, "temperature", g.temperature, "generation");
  optional_field(doc, "sample_index", g.sample_index, "generation");
  return g;
}

json to_json(const FilterResult& f) {
  return {{"emphasized", f.emphasized_generation_ids},
          {"deemphasized", f.deemphasized_generation_ids}};
}

json save_session(const SessionState& state, LatticeCache* cache) {
  json doc;
  doc["schema"] = "tokenlattice/session";
  doc["version"] = kSessionSchemaVersion;
  doc["session_id"] = state.session_id;
  doc["snapshot_version"] = state.version;
  doc["prompts"] = json::array();
  for (const auto& p : state.prompts) doc["prompts"].push_back(to_json(p));
  doc["generations"] = json::array();
  for (const auto& g : state.generations) doc["generations"].push_back(to_json(g));
  doc["view_state"] = to_json(state.view);
  doc["caches"] = json::array();
  if (cache && !state.generations.empty()) {
    LayoutParams params;
    params.lambda = state.view.lambda;
    params.seed = state.view.seed;
    params.longtail = state.view.longtail_t;
    const auto palette = state.palette();
    for (const auto& panel : assemble_comparison(state, *cache)) {
      const auto layout = cache->layout(panel.generations, state.view.mode,
                                        state.view.merge_threshold, params, palette);
      doc["caches"].push_back({{"scope", panel.scope},
                               {"mode", std::string(to_string(state.view.mode))},
                               {"threshold", state.view.merge_threshold},
                               {"lambda", params.lambda},
                               {"seed", params.seed},
                               {"lattice", to_json(*panel.lattice)},
                               {"layout", to_json(*layout, params)}});
    }
  }
  return doc;
}

SessionState load_session(const json& doc, LatticeCache* cache) {
  try {
    if (!doc.is_object() || doc.value("schema", "") != "tokenlattice/session") {
      throw ParseError("session bundle: unexpected schema", 0);
    }
    if (doc.value("version", 0) != kSessionSchemaVersion) {
      throw ParseError("session bundle: unsupported version", 0);
    }
    SessionState state;
    state.session_id = doc.value("session_id", "");
    state.version = doc.value("snapshot_version", std::uint64_t{0});
    for (const auto& p : doc.at("prompts")) state = add_prompt(state, prompt_config_from_json(p));
    for (const auto& g : doc.at("generations")) {
      auto gen = raw_generation_from_json(g);
      if (!state.find_prompt(gen.prompt_id)) {
        throw ParseError("session bundle: generation for unknown prompt " + gen.prompt_id, 0);
      }
      const std::string prompt = gen.prompt_id;
      state = add_generations(state, prompt, {std::move(gen)});
    }
    state.view = view_state_from_json(doc.at("view_state"));
    for (const auto& entry : doc.value("caches", json::array())) {
      auto lattice = std::make_shared<const TokenLattice>(lattice_from_json(entry.at("lattice")));
      if (!cache) continue;
      const std::string scope = entry.at("scope").get<std::string>();
      const auto gens = scope == "*" ? state.generations : generations_of(state, scope);
      const auto mode = parse_segmentation_mode(entry.at("mode").get<std::string>());
      if (!mode) throw ParseError("session bundle: bad cache mode", 0);
      cache->insert(gens, *mode, entry.at("threshold").get<double>(), std::move(lattice));
    }
    return state;
  } catch (const ParseError&) {
    throw;
  } catch (const Error& e) {
    throw ParseError(std::string("session bundle: ") + e.what(), 0);
  } catch (const json::exception& e) {
    throw ParseError(std::string("session bundle: ") + e.what(), 0);
  }
}

std::shared_ptr<const SessionState> SessionStore::Entry::current() const {
  std::lock_guard lock(read_mu);
  return history.back();
}

void SessionStore::Entry::publish(std::shared_ptr<const SessionState> next) {
  std::lock_guard lock(read_mu);
  history.push_back(std::move(next));
}

std::shared_ptr<const SessionState> SessionStore::create(ViewState view) {
  view.validate();
  static thread_local std::mt19937_64 rng{std::random_device{}()};
  auto entry = std::make_shared<Entry>();
  std::lock_guard lock(mu_);
  std::uint64_t salt = rng() ^ ++counter_;
  std::string id = "s" + hex64(splitmix64(salt)).substr(0, 12);
  while (sessions_.contains(id)) id = "s" + hex64(splitmix64(salt)).substr(0, 12);
  auto state = std::make_shared<SessionState>();
  state->session_id = id;
  state->view = std::move(view);
  entry->history.push_back(std::move(state));
  sessions_[id] = entry;
  return entry->history.back();
}

std::shared_ptr<const SessionState> SessionStore::adopt(SessionState state) {
  if (state.session_id.empty()) throw InvalidArgument("session id must not be empty");
  auto entry = std::make_shared<Entry>();
  entry->history.push_back(std::make_shared<SessionState>(std::move(state)));
  std::lock_guard lock(mu_);
  const auto& id = entry->history.back()->session_id;
  if (sessions_.contains(id)) throw Conflict("session '" + id + "' already exists");
  sessions_[id] = entry;
  return entry->history.back();
}

std::shared_ptr<SessionStore::Entry> SessionStore::find(const std::string& session_id) const {
  std::lock_guard lock(mu_);
  const auto it = sessions_.find(session_id);
  if (it == sessions_.end()) throw NotFound("unknown session '" + session_id + "'");
  return it->second;
}

std::shared_ptr<const SessionState> SessionStore::get(const std::string& session_id) const {
  return find(session_id)->current();
}

std::shared_ptr<const SessionState> SessionStore::undo(const std::string& session_id) {
  auto entry = find(session_id);
  std::lock_guard writer(entry->write_mu);
  std::lock_guard lock(entry->read_mu);
  if (entry->history.size() < 2) throw NotFound("nothing to undo");
  const std::uint64_t version = entry->history.back()->version + 1;
  entry->history.pop_back();
  auto restored = std::make_shared<SessionState>(*entry->history.back());
  restored->version = version;
  entry->history.back() = std::move(restored);
  return entry->history.back();
}

std::size_t SessionStore::size() const {
  std::lock_guard lock(mu_);
  return sessions_.size();
}

}  // namespace tl
