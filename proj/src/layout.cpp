#include "tl/layout.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <queue>

#include "tl/digest.hpp"
#include "tl/errors.hpp"
#include "tl/simd.hpp"

namespace tl {
namespace {

constexpr const char* kBasePalette[] = {"#E69F00", "#56B4E9", "#009E73", "#F0E442",
                                        "#0072B2", "#D55E00", "#CC79A7", "#999999"};
constexpr std::size_t kBasePaletteSize = 8;

int hex_digit(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v == 0.0 ? 0.0 : v);
  return buf;
}

std::string xml_escape(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&apos;"; break;
      default: out += c;
    }
  }
  return out;
}

// Kahn's algorithm, smallest index first.
std::vector<std::uint32_t> topological_order(std::size_t n,
                                             const std::vector<std::vector<std::uint32_t>>& succ) {
  std::vector<std::uint32_t> indegree(n, 0);
  for (const auto& s : succ) {
    for (auto v : s) ++indegree[v];
  }
  std::priority_queue<std::uint32_t, std::vector<std::uint32_t>, std::greater<>> ready;
  for (std::uint32_t v = 0; v < n; ++v) {
    if (indegree[v] == 0) ready.push(v);
  }
  std::vector<std::uint32_t> order;
  order.reserve(n);
  while (!ready.empty()) {
    const auto u = ready.top();
    ready.pop();
    order.push_back(u);
    for (auto v : succ[u]) {
      if (--indegree[v] == 0) ready.push(v);
    }
  }
  if (order.size() != n) throw ContractViolation("layout: lattice adjacency has a cycle");
  return order;
}

struct Neighbours {
  // CSR: neighbours of node i are idx[start[i] .. start[i+1]).
  std::vector<std::uint32_t> start;
  std::vector<std::uint32_t> idx;
  std::vector<double> xs, rxs, rys;  // static per entry
  std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs;  // i < j
};

// Pairs whose padded x-extents overlap. x never changes, so this is fixed.
Neighbours collision_candidates(const std::vector<LayoutNode>& nodes, double pad) {
  const std::size_t n = nodes.size();
  std::vector<std::uint32_t> by_left(n);
  for (std::uint32_t i = 0; i < n; ++i) by_left[i] = i;
  std::sort(by_left.begin(), by_left.end(), [&](auto a, auto b) {
    const double la = nodes[a].x - nodes[a].rx, lb = nodes[b].x - nodes[b].rx;
    return la != lb ? la < lb : a < b;
  });
  Neighbours nb;
  for (std::size_t s = 0; s < n; ++s) {
    const auto i = by_left[s];
    const double right = nodes[i].x + nodes[i].rx + pad;
    for (std::size_t t = s + 1; t < n; ++t) {
      const auto j = by_left[t];
      if (nodes[j].x - nodes[j].rx >= right) break;
      nb.pairs.emplace_back(std::min(i, j), std::max(i, j));
    }
  }
  std::sort(nb.pairs.begin(), nb.pairs.end());
  std::vector<std::uint32_t> count(n + 1, 0);
  for (const auto& [i, j] : nb.pairs) {
    ++count[i + 1];
    ++count[j + 1];
  }
  nb.start.assign(n + 1, 0);
  for (std::size_t i = 0; i < n; ++i) nb.start[i + 1] = nb.start[i] + count[i + 1];
  nb.idx.resize(nb.start[n]);
  std::vector<std::uint32_t> fill(nb.start.begin(), nb.start.end() - 1);
  for (const auto& [i, j] : nb.pairs) {
    nb.idx[fill[i]++] = j;
    nb.idx[fill[j]++] = i;
  }
  nb.xs.resize(nb.idx.size());
  nb.rxs.resize(nb.idx.size());
  nb.rys.resize(nb.idx.size());
  for (std::size_t k = 0; k < nb.idx.size(); ++k) {
    nb.xs[k] = nodes[nb.idx[k]].x;
    nb.rxs[k] = nodes[nb.idx[k]].rx;
    nb.rys[k] = nodes[nb.idx[k]].ry;
  }
  return nb;
}

// Vertical separation that makes the padded ellipses of i and j touch, given
// their fixed horizontal offset.
double required_dy(const LayoutNode& a, const LayoutNode& b, double pad) {
  const double sx = a.rx + pad + b.rx;
  const double sy = a.ry + pad + b.ry;
  const double u = (a.x - b.x) / sx;
  return sy * std::sqrt(std::max(0.0, 1.0 - u * u));
}

}  // namespace

double srgb_to_linear(double c) noexcept {
  return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4);
}

double linear_to_srgb(double c) noexcept {
  c = std::clamp(c, 0.0, 1.0);
  return c <= 0.0031308 ? c * 12.92 : 1.055 * std::pow(c, 1.0 / 2.4) - 0.055;
}

Rgb rgb_from_hex(std::string_view hex) {
  if (hex.size() != 7 || hex[0] != '#') throw InvalidArgument("colour must look like #RRGGBB");
  int v[6];
  for (int i = 0; i < 6; ++i) {
    v[i] = hex_digit(hex[1 + i]);
    if (v[i] < 0) throw InvalidArgument("colour must look like #RRGGBB");
  }
  return {srgb_to_linear((v[0] * 16 + v[1]) / 255.0), srgb_to_linear((v[2] * 16 + v[3]) / 255.0),
          srgb_to_linear((v[4] * 16 + v[5]) / 255.0)};
}

std::string rgb_to_hex(const Rgb& c) {
  auto byte = [](double x) { return static_cast<int>(std::lround(linear_to_srgb(x) * 255.0)); };
  char buf[8];
  std::snprintf(buf, sizeof(buf), "#%02X%02X%02X", byte(c.r), byte(c.g), byte(c.b));
  return buf;
}

std::string palette_hex(std::size_t index) {
  const std::string base = kBasePalette[index % kBasePaletteSize];
  const std::size_t round = index / kBasePaletteSize;
  if (round == 0) return base;
  Rgb c = rgb_from_hex(base);
  const double amount = std::min(0.6, 0.3 * static_cast<double>((round + 1) / 2));
  if (round % 2 == 1) {
    c = {c.r + (1.0 - c.r) * amount, c.g + (1.0 - c.g) * amount, c.b + (1.0 - c.b) * amount};
  } else {
    c = {c.r * (1.0 - amount), c.g * (1.0 - amount), c.b * (1.0 - amount)};
  }
  return rgb_to_hex(c);
}

PromptPalette default_palette(const TokenLattice& lattice) {
  PromptPalette palette;
  std::size_t next = 0;
  for (const auto& g : lattice.generations) {
    if (!palette.contains(g.prompt_id)) palette[g.prompt_id] = rgb_from_hex(palette_hex(next++));
  }
  return palette;
}

void LayoutParams::validate() const {
  auto finite = [](double v) { return std::isfinite(v); };
  if (!finite(lambda) || lambda < 0.0 || lambda > 1.0) {
    throw InvalidArgument("lambda must be in [0, 1]");
  }
  if (max_iterations < 1) throw InvalidArgument("max_iterations must be >= 1");
  if (!finite(convergence_epsilon) || convergence_epsilon <= 0.0) {
    throw InvalidArgument("convergence_epsilon must be > 0");
  }
  if (!finite(longtail) || longtail < 0.0 || longtail > 1.0) {
    throw InvalidArgument("longtail must be in [0, 1]");
  }
  for (double v : {left_offset, horizontal_gap, center_strength, spring_stiffness,
                   collision_padding, canvas_height}) {
    if (!finite(v)) throw InvalidArgument("layout parameters must be finite");
  }
  if (horizontal_gap < 0.0 || collision_padding < 0.0 || center_strength <= 0.0 ||
      spring_stiffness < 0.0) {
    throw InvalidArgument("gap and padding must be >= 0, center_strength > 0");
  }
  if (!(collision_strength > 0.0 && collision_strength <= 1.0) || collision_passes < 1) {
    throw InvalidArgument("collision_strength must be in (0, 1], collision_passes >= 1");
  }
  if (!(velocity_decay >= 0.0 && velocity_decay < 1.0) ||
      !(alpha_decay >= 0.0 && alpha_decay < 1.0)) {
    throw InvalidArgument("decay rates must be in [0, 1)");
  }
  if (!(char_width > 0.0) || !(font_size > 0.0)) {
    throw InvalidArgument("font metrics must be > 0");
  }
  if (!(min_scale > 0.0) || !(max_scale >= min_scale)) {
    throw InvalidArgument("need 0 < min_scale <= max_scale");
  }
}

nlohmann::json to_json(const LayoutParams& p) {
  return {{"left_offset", p.left_offset},
          {"horizontal_gap", p.horizontal_gap},
          {"lambda", p.lambda},
          {"center_strength", p.center_strength},
          {"spring_stiffness", p.spring_stiffness},
          {"collision_padding", p.collision_padding},
          {"collision_strength", p.collision_strength},
          {"collision_passes", p.collision_passes},
          {"velocity_decay", p.velocity_decay},
          {"alpha_decay", p.alpha_decay},
          {"max_iterations", p.max_iterations},
          {"convergence_epsilon", p.convergence_epsilon},
          {"seed", p.seed},
          {"canvas_height", p.canvas_height},
          {"char_width", p.char_width},
          {"font_size", p.font_size},
          {"longtail", p.longtail},
          {"min_scale", p.min_scale},
          {"max_scale", p.max_scale}};
}

LayoutParams layout_params_from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) throw InvalidArgument("layout params must be an object");
  LayoutParams p;
  try {
    auto read = [&](const char* key, auto& field) {
      if (const auto it = doc.find(key); it != doc.end()) {
        field = it->get<std::remove_reference_t<decltype(field)>>();
      }
    };
    read("left_offset", p.left_offset);
    read("horizontal_gap", p.horizontal_gap);
    read("lambda", p.lambda);
    read("center_strength", p.center_strength);
    read("spring_stiffness", p.spring_stiffness);
    read("collision_padding", p.collision_padding);
    read("collision_strength", p.collision_strength);
    read("collision_passes", p.collision_passes);
    read("velocity_decay", p.velocity_decay);
    read("alpha_decay", p.alpha_decay);
    read("max_iterations", p.max_iterations);
    read("convergence_epsilon", p.convergence_epsilon);
    read("seed", p.seed);
    read("canvas_height", p.canvas_height);
    read("char_width", p.char_width);
    read("font_size", p.font_size);
    read("longtail", p.longtail);
    read("min_scale", p.min_scale);
    read("max_scale", p.max_scale);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("layout params: ") + e.what());
  }
  p.validate();
  return p;
}

double horizontal_target(std::span<const double> parent_positions, double lambda,
                         double left_offset) {
  if (parent_positions.empty()) return left_offset;
  const auto [lo, hi] = std::minmax_element(parent_positions.begin(), parent_positions.end());
  return *lo + lambda * (*hi - *lo);
}

double node_size(std::size_t frequency, std::size_t total, double min_scale, double max_scale) {
  if (total == 0) return max_scale;
  const double f = static_cast<double>(std::min(frequency, total));
  return std::clamp(max_scale * std::sqrt(f / static_cast<double>(total)), min_scale, max_scale);
}

Rgb node_color(const std::map<std::string, std::size_t>& prompt_counts,
               const PromptPalette& palette) {
  Rgb sum;
  double weight = 0.0;
  for (const auto& [prompt, count] : prompt_counts) {
    const auto it = palette.find(prompt);
    if (it == palette.end()) throw ContractViolation("no palette colour for prompt " + prompt);
    const double w = static_cast<double>(count);
    sum.r += w * it->second.r;
    sum.g += w * it->second.g;
    sum.b += w * it->second.b;
    weight += w;
  }
  if (weight == 0.0) return {};
  return {sum.r / weight, sum.g / weight, sum.b / weight};
}

double longtail_opacity(std::size_t frequency, std::size_t total, double t) {
  const double cut = t * static_cast<double>(total);
  const double f = static_cast<double>(frequency);
  if (f >= cut) return 1.0;
  return std::max(0.08, f / cut);
}

double min_ellipse_metric(const LayoutResult& layout, double padding) {
  double best = std::numeric_limits<double>::infinity();
  const auto& nodes = layout.nodes;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    for (std::size_t j = i + 1; j < nodes.size(); ++j) {
      const double u = (nodes[i].x - nodes[j].x) / (nodes[i].rx + padding + nodes[j].rx);
      const double v = (nodes[i].y - nodes[j].y) / (nodes[i].ry + padding + nodes[j].ry);
      best = std::min(best, std::sqrt(u * u + v * v));
    }
  }
  return best;
}

LayoutResult compute_layout(const TokenLattice& lattice, const LayoutParams& params,
                            const PromptPalette& palette_in, const GeometryHints& hints) {
  params.validate();
  const PromptPalette palette = palette_in.empty() ? default_palette(lattice) : palette_in;
  const std::size_t n = lattice.nodes.size();
  const std::size_t total = lattice.generations.size();
  const double pad = params.collision_padding;
  const double mid = params.canvas_height / 2.0;

  LayoutResult result;
  result.nodes.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const LatticeNode& src = lattice.nodes[i];
    LayoutNode& node = result.nodes[i];
    node.node_id = src.id;
    node.label = src.label;
    node.frequency = src.frequency;
    node.size_scale = node_size(src.frequency, total, params.min_scale, params.max_scale);
    node.opacity = longtail_opacity(src.frequency, total, params.longtail);
    node.color = node_color(src.prompt_counts, palette);
    if (const auto it = hints.find(src.id); it != hints.end()) {
      if (!(it->second.rx > 0.0) || !(it->second.ry > 0.0)) {
        throw InvalidArgument("geometry hint for " + src.id + " must have positive radii");
      }
      node.rx = it->second.rx;
      node.ry = it->second.ry;
    } else {
      const double chars = static_cast<double>(utf8_length(src.label));
      node.rx = node.size_scale * (0.5 * params.char_width * chars + 0.3 * params.font_size);
      node.ry = node.size_scale * (0.5 * params.font_size + 2.0);
    }
  }

  const Adjacency adj = lattice.adjacency();
  std::vector<std::vector<std::uint32_t>> succ(n), pred(n);
  // Spring neighbours with stiffness, both directions.
  std::vector<std::vector<std::pair<std::uint32_t, double>>> springs(n);
  for (const auto& [edge, count] : adj) {
    succ[edge.first].push_back(edge.second);
    pred[edge.second].push_back(edge.first);
    const double k = params.spring_stiffness * static_cast<double>(count);
    springs[edge.first].emplace_back(edge.second, k);
    springs[edge.second].emplace_back(edge.first, k);
  }

  std::vector<double> derived;
  for (const auto v : topological_order(n, succ)) {
    derived.clear();
    for (const auto p : pred[v]) {
      derived.push_back(result.nodes[p].x + result.nodes[p].rx + params.horizontal_gap);
    }
    result.nodes[v].x =
        horizontal_target(derived, params.lambda, params.left_offset) + result.nodes[v].rx;
  }

  std::vector<double> y(n), vel(n, 0.0), stiffness(n), mass(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint64_t state = params.seed ^ fnv1a64(result.nodes[i].node_id);
    y[i] = mid + (unit_double(splitmix64(state)) * 2.0 - 1.0);
    stiffness[i] = params.center_strength * static_cast<double>(result.nodes[i].frequency);
    for (const auto& [j, k] : springs[i]) stiffness[i] += k;
    mass[i] = result.nodes[i].rx * result.nodes[i].ry;
  }

  const Neighbours nb = collision_candidates(result.nodes, pad);
  const auto& kern = simd::kernels();
  std::vector<double> ys_scratch(nb.idx.size()), metric(nb.idx.size()), push(n);

  auto collide = [&](double strength) {
    for (std::size_t k = 0; k < nb.idx.size(); ++k) ys_scratch[k] = y[nb.idx[k]];
    std::fill(push.begin(), push.end(), 0.0);
    bool overlapping = false;
    for (std::uint32_t i = 0; i < n; ++i) {
      const std::size_t b = nb.start[i], e = nb.start[i + 1];
      if (b == e) continue;
      const LayoutNode& a = result.nodes[i];
      kern.ellipse_metric_sq(a.x, y[i], a.rx, a.ry, nb.xs.data() + b, ys_scratch.data() + b,
                             nb.rxs.data() + b, nb.rys.data() + b, e - b, pad, metric.data() + b);
      for (std::size_t k = b; k < e; ++k) {
        if (metric[k] >= 1.0) continue;
        const std::uint32_t j = nb.idx[k];
        const double dy = y[i] - y[j];
        const double overlap = required_dy(a, result.nodes[j], pad) - std::abs(dy);
        if (overlap <= 0.0) continue;
        if (overlap > params.convergence_epsilon) overlapping = true;
        const double dir = dy > 0.0 ? 1.0 : (dy < 0.0 ? -1.0 : (i < j ? -1.0 : 1.0));
        push[i] += dir * overlap * strength * mass[j] / (mass[i] + mass[j]);
      }
    }
    for (std::size_t i = 0; i < n; ++i) y[i] += push[i];
    return overlapping;
  };

  std::vector<double> before(n);
  double alpha = 1.0;
  int tick = 0;
  for (; tick < params.max_iterations; ++tick) {
    before = y;
    alpha *= 1.0 - params.alpha_decay;
    for (std::size_t i = 0; i < n; ++i) {
      double force = params.center_strength * static_cast<double>(result.nodes[i].frequency) *
                     (mid - before[i]);
      for (const auto& [j, k] : springs[i]) force += k * (before[j] - before[i]);
      vel[i] = (vel[i] + alpha * force / stiffness[i]) * (1.0 - params.velocity_decay);
      y[i] += vel[i];
    }
    bool overlapping = false;
    for (int pass = 0; pass < params.collision_passes; ++pass) {
      overlapping = collide(params.collision_strength);
    }
    double moved = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      vel[i] = y[i] - before[i];
      moved = std::max(moved, std::abs(vel[i]));
    }
    if (moved < params.convergence_epsilon && !overlapping) {
      result.converged = true;
      ++tick;
      break;
    }
  }
  result.iterations_used = tick;

  // Sequential clean-up so the final picture is overlap-free even when the
  // simulation stopped early.
  for (int sweep = 0; sweep < 10000; ++sweep) {
    bool moved = false;
    for (const auto& [i, j] : nb.pairs) {
      const double dy = y[i] - y[j];
      const double need = required_dy(result.nodes[i], result.nodes[j], pad);
      const double overlap = need * (1.0 + 1e-6) - std::abs(dy);
      if (std::abs(dy) >= need * (1.0 - 1e-5)) continue;
      const double dir = dy > 0.0 ? 1.0 : -1.0;
      const double wi = mass[j] / (mass[i] + mass[j]);
      y[i] += dir * overlap * wi;
      y[j] -= dir * overlap * (1.0 - wi);
      moved = true;
    }
    if (!moved) break;
  }

  for (std::size_t i = 0; i < n; ++i) result.nodes[i].y = y[i];

  result.paths.reserve(lattice.traversals.size());
  for (const Traversal& t : lattice.traversals) {
    const LatticeGeneration& g = lattice.generations[t.generation];
    LayoutPath path;
    path.generation_id = g.id;
    path.prompt_id = g.prompt_id;
    const auto it = palette.find(g.prompt_id);
    if (it == palette.end()) throw ContractViolation("no palette colour for prompt " + g.prompt_id);
    path.color = it->second;
    for (auto v : t.path) path.points.emplace_back(result.nodes[v].x, result.nodes[v].y);
    result.paths.push_back(std::move(path));
  }
  return result;
}

void apply_emphasis(LayoutResult& layout, const TokenLattice& lattice,
                    const std::set<std::string>& emphasized_generations) {
  for (auto& node : layout.nodes) node.emphasized = false;
  for (std::size_t g = 0; g < lattice.traversals.size(); ++g) {
    const bool on = emphasized_generations.contains(lattice.generations[g].id);
    layout.paths[g].emphasized = on;
    if (!on) continue;
    for (auto v : lattice.traversals[g].path) layout.nodes[v].emphasized = true;
  }
}

nlohmann::json to_json(const LayoutResult& layout, const LayoutParams& params) {
  nlohmann::json nodes = nlohmann::json::array();
  for (const auto& n : layout.nodes) {
    nodes.push_back({{"id", n.node_id},
                     {"label", n.label},
                     {"x", n.x},
                     {"y", n.y},
                     {"rx", n.rx},
                     {"ry", n.ry},
                     {"size_scale", n.size_scale},
                     {"opacity", n.opacity},
                     {"color", rgb_to_hex(n.color)},
                     {"color_linear", {n.color.r, n.color.g, n.color.b}},
                     {"frequency", n.frequency},
                     {"emphasized", n.emphasized}});
  }
  nlohmann::json paths = nlohmann::json::array();
  for (const auto& p : layout.paths) {
    nlohmann::json points = nlohmann::json::array();
    for (const auto& [x, y] : p.points) points.push_back({x, y});
    paths.push_back({{"gen", p.generation_id},
                     {"prompt_id", p.prompt_id},
                     {"color", rgb_to_hex(p.color)},
                     {"points", std::move(points)},
                     {"emphasized", p.emphasized}});
  }
  return {{"schema", "tokenlattice/layout"},
          {"version", kLayoutSchemaVersion},
          {"params", to_json(params)},
          {"iterations_used", layout.iterations_used},
          {"converged", layout.converged},
          {"nodes", std::move(nodes)},
          {"paths", std::move(paths)}};
}

std::string render_svg(const LayoutResult& layout, const LayoutParams& params) {
  double min_x = 0.0, max_x = 1.0, min_y = 0.0, max_y = 1.0;
  if (!layout.nodes.empty()) {
    min_x = min_y = std::numeric_limits<double>::infinity();
    max_x = max_y = -std::numeric_limits<double>::infinity();
    for (const auto& n : layout.nodes) {
      min_x = std::min(min_x, n.x - n.rx);
      max_x = std::max(max_x, n.x + n.rx);
      min_y = std::min(min_y, n.y - n.ry);
      max_y = std::max(max_y, n.y + n.ry);
    }
  }
  const double margin = 10.0;
  min_x -= margin;
  min_y -= margin;
  const double width = max_x - min_x + margin;
  const double height = max_y - min_y + margin;
  constexpr double kDeemphasis = 0.25;

  std::string out;
  out += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt(width) + "\" height=\"" +
         fmt(height) + "\" viewBox=\"" + fmt(min_x) + " " + fmt(min_y) + " " + fmt(width) + " " +
         fmt(height) + "\">\n";
  out += "<g class=\"paths\" fill=\"none\" stroke-width=\"1.5\">\n";
  for (const auto& p : layout.paths) {
    if (p.points.empty()) continue;
    std::string d;
    for (std::size_t k = 0; k < p.points.size(); ++k) {
      d += (k == 0 ? "M" : " L") + fmt(p.points[k].first) + " " + fmt(p.points[k].second);
    }
    if (p.points.size() == 1) d += " h0.01";
    out += "<path data-gen=\"" + xml_escape(p.generation_id) + "\" d=\"" + d + "\" stroke=\"" +
           rgb_to_hex(p.color) + "\" stroke-opacity=\"" + fmt(p.emphasized ? 0.6 : 0.6 * kDeemphasis) +
           "\"/>\n";
  }
  out += "</g>\n<g class=\"nodes\" font-family=\"sans-serif\" text-anchor=\"middle\">\n";
  for (const auto& n : layout.nodes) {
    const double opacity = n.emphasized ? n.opacity : n.opacity * kDeemphasis;
    out += "<g data-node=\"" + n.node_id + "\" opacity=\"" + fmt(opacity) + "\">";
    out += "<ellipse cx=\"" + fmt(n.x) + "\" cy=\"" + fmt(n.y) + "\" rx=\"" + fmt(n.rx) +
           "\" ry=\"" + fmt(n.ry) + "\" fill=\"" + rgb_to_hex(n.color) + "\"/>";
    out += "<text x=\"" + fmt(n.x) + "\" y=\"" + fmt(n.y + 0.35 * params.font_size * n.size_scale) +
           "\" font-size=\"" + fmt(params.font_size * n.size_scale) + "\">" + xml_escape(n.label) +
           "</text></g>\n";
  }
  out += "</g>\n</svg>\n";
  return out;
}

}  // namespace tl
