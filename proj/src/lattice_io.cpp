#include <sstream>

#include "tl/errors.hpp"
#include "tl/lattice.hpp"

namespace tl {
namespace {

using nlohmann::json;

const json& require(const json& obj, const char* key, json::value_t type, const char* where) {
  const auto it = obj.find(key);
  if (it == obj.end()) throw ParseError(std::string(where) + ": missing '" + key + "'", 0);
  const bool ok = it->type() == type ||
                  (type == json::value_t::number_unsigned && it->is_number_integer() &&
                   it->get<long long>() >= 0) ||
                  (type == json::value_t::number_float && it->is_number());
  if (!ok) throw ParseError(std::string(where) + ": '" + key + "' has the wrong type", 0);
  return *it;
}

std::string dot_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '"' || c == '\\') out.push_back('\\');
    if (c == '\n') {
      out += "\\n";
      continue;
    }
    out.push_back(c);
  }
  return out;
}

}  // namespace

json to_json(const TokenLattice& lattice) {
  json doc;
  doc["schema"] = "tokenlattice/lattice";
  doc["version"] = kLatticeSchemaVersion;
  doc["mode"] = std::string(to_string(lattice.mode));
  doc["threshold"] = lattice.merge_threshold ? json(*lattice.merge_threshold) : json(nullptr);

  json gens = json::array();
  for (const auto& g : lattice.generations) {
    json tokens = json::array();
    for (const auto& t : g.tokens.tokens) tokens.push_back({t.surface, t.trailing_separator});
    gens.push_back({{"id", g.id},
                    {"prompt_id", g.prompt_id},
                    {"leading", g.tokens.leading_separator},
                    {"tokens", std::move(tokens)}});
  }
  doc["generations"] = std::move(gens);

  json nodes = json::array();
  for (const auto& n : lattice.nodes) {
    json members = json::array();
    for (const auto& m : n.members) {
      members.push_back(
          {{"gen", lattice.generations[m.generation].id}, {"start", m.begin}, {"end", m.end}});
    }
    nodes.push_back({{"id", n.id},
                     {"label", n.label},
                     {"frequency", n.frequency},
                     {"prompt_counts", n.prompt_counts},
                     {"members", std::move(members)}});
  }
  doc["nodes"] = std::move(nodes);

  json traversals = json::array();
  for (const auto& t : lattice.traversals) {
    json path = json::array();
    for (auto n : t.path) path.push_back(lattice.nodes[n].id);
    traversals.push_back({{"gen", lattice.generations[t.generation].id}, {"path", std::move(path)}});
  }
  doc["traversals"] = std::move(traversals);
  return doc;
}

json to_json(const LatticeStats& s) {
  return {{"node_count", s.node_count},
          {"traversal_edge_count", s.traversal_edge_count},
          {"compression_ratio", s.compression_ratio},
          {"mean_out_degree", s.mean_out_degree},
          {"distinct_path_count", s.distinct_path_count},
          {"total_tokens", s.total_tokens},
          {"generation_count", s.generation_count}};
}

TokenLattice lattice_from_json(const json& doc) {
  using vt = json::value_t;
  if (!doc.is_object()) throw ParseError("lattice: document is not an object", 0);
  if (require(doc, "schema", vt::string, "lattice").get<std::string>() != "tokenlattice/lattice") {
    throw ParseError("lattice: unexpected schema", 0);
  }
  if (require(doc, "version", vt::number_unsigned, "lattice").get<int>() != kLatticeSchemaVersion) {
    throw ParseError("lattice: unsupported version", 0);
  }
  TokenLattice lattice;
  const auto mode = parse_segmentation_mode(require(doc, "mode", vt::string, "lattice").get<std::string>());
  if (!mode) throw ParseError("lattice: unknown mode", 0);
  lattice.mode = *mode;
  if (const auto it = doc.find("threshold"); it != doc.end() && !it->is_null()) {
    if (!it->is_number()) throw ParseError("lattice: threshold must be a number or null", 0);
    lattice.merge_threshold = it->get<double>();
  }

  std::map<std::string, std::uint32_t> gen_index;
  for (const auto& g : require(doc, "generations", vt::array, "lattice")) {
    if (!g.is_object()) throw ParseError("lattice.generations: entry is not an object", 0);
    LatticeGeneration gen;
    gen.id = require(g, "id", vt::string, "generation").get<std::string>();
    gen.prompt_id = require(g, "prompt_id", vt::string, "generation").get<std::string>();
    gen.tokens.generation_id = gen.id;
    gen.tokens.leading_separator = require(g, "leading", vt::string, "generation").get<std::string>();
    for (const auto& t : require(g, "tokens", vt::array, "generation")) {
      if (!t.is_array() || t.size() != 2 || !t[0].is_string() || !t[1].is_string()) {
        throw ParseError("generation.tokens: expected [surface, separator]", 0);
      }
      gen.tokens.tokens.push_back(
          Token{gen.tokens.tokens.size(), t[0].get<std::string>(), t[1].get<std::string>()});
    }
    if (!gen_index.emplace(gen.id, static_cast<std::uint32_t>(lattice.generations.size())).second) {
      throw ParseError("lattice: duplicate generation id " + gen.id, 0);
    }
    lattice.generations.push_back(std::move(gen));
  }

  std::map<std::string, std::uint32_t> node_index;
  for (const auto& n : require(doc, "nodes", vt::array, "lattice")) {
    if (!n.is_object()) throw ParseError("lattice.nodes: entry is not an object", 0);
    LatticeNode node;
    node.id = require(n, "id", vt::string, "node").get<std::string>();
    node.label = require(n, "label", vt::string, "node").get<std::string>();
    node.frequency = require(n, "frequency", vt::number_unsigned, "node").get<std::size_t>();
    for (const auto& [k, v] : require(n, "prompt_counts", vt::object, "node").items()) {
      if (!v.is_number_unsigned()) throw ParseError("node.prompt_counts: expected counts", 0);
      node.prompt_counts[k] = v.get<std::size_t>();
    }
    for (const auto& m : require(n, "members", vt::array, "node")) {
      const auto gid = require(m, "gen", vt::string, "member").get<std::string>();
      const auto it = gen_index.find(gid);
      if (it == gen_index.end()) throw ParseError("member references unknown generation " + gid, 0);
      node.members.push_back(Member{it->second,
                                    require(m, "start", vt::number_unsigned, "member").get<std::uint32_t>(),
                                    require(m, "end", vt::number_unsigned, "member").get<std::uint32_t>()});
    }
    if (!node_index.emplace(node.id, static_cast<std::uint32_t>(lattice.nodes.size())).second) {
      throw ParseError("lattice: duplicate node id " + node.id, 0);
    }
    std::sort(node.members.begin(), node.members.end());
    lattice.nodes.push_back(std::move(node));
  }

  lattice.traversals.resize(lattice.generations.size());
  std::vector<bool> seen(lattice.generations.size(), false);
  for (const auto& t : require(doc, "traversals", vt::array, "lattice")) {
    const auto gid = require(t, "gen", vt::string, "traversal").get<std::string>();
    const auto git = gen_index.find(gid);
    if (git == gen_index.end()) throw ParseError("traversal references unknown generation " + gid, 0);
    if (seen[git->second]) throw ParseError("duplicate traversal for " + gid, 0);
    seen[git->second] = true;
    Traversal& tr = lattice.traversals[git->second];
    tr.generation = git->second;
    for (const auto& id : require(t, "path", vt::array, "traversal")) {
      if (!id.is_string()) throw ParseError("traversal.path: expected node ids", 0);
      const auto nit = node_index.find(id.get<std::string>());
      if (nit == node_index.end()) throw ParseError("traversal references unknown node", 0);
      tr.path.push_back(nit->second);
    }
  }
  for (std::size_t g = 0; g < seen.size(); ++g) {
    if (!seen[g]) throw ParseError("missing traversal for " + lattice.generations[g].id, 0);
  }
  if (auto problems = check_invariants(lattice); !problems.empty()) {
    throw ParseError("lattice: " + problems.front(), 0);
  }
  return lattice;
}

std::string to_dot(const TokenLattice& lattice) {
  std::ostringstream out;
  out << "// adjacency only: paths through this graph are not faithful to generations\n";
  out << "digraph lattice {\n  rankdir=LR;\n";
  for (const auto& n : lattice.nodes) {
    out << "  \"" << n.id << "\" [label=\"" << dot_escape(n.label) << "\\n(" << n.frequency
        << ")\"];\n";
  }
  for (const auto& [edge, count] : lattice.adjacency()) {
    out << "  \"" << lattice.nodes[edge.first].id << "\" -> \"" << lattice.nodes[edge.second].id
        << "\" [label=\"" << count << "\"];\n";
  }
  out << "}\n";
  return out.str();
}

}  // namespace tl
