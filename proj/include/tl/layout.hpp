#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "tl/lattice.hpp"

namespace tl {

inline constexpr int kLayoutSchemaVersion = 1;

// Linear-light RGB, each channel in [0, 1].
struct Rgb {
  double r = 0.0;
  double g = 0.0;
  double b = 0.0;

  friend bool operator==(const Rgb&, const Rgb&) = default;
};

double srgb_to_linear(double c) noexcept;
double linear_to_srgb(double c) noexcept;
// "#RRGGBB" (sRGB) to linear; throws InvalidArgument on bad syntax.
Rgb rgb_from_hex(std::string_view hex);
std::string rgb_to_hex(const Rgb& linear);

// Okabe-Ito order with grey standing in for black. Index 8 and up repeat the
// hues, alternately lightened and darkened.
std::string palette_hex(std::size_t index);

using PromptPalette = std::map<std::string, Rgb>;

// Palette colours by first appearance of each prompt in the lattice.
PromptPalette default_palette(const TokenLattice& lattice);

struct LayoutParams {
  double left_offset = 40.0;
  double horizontal_gap = 24.0;
  double lambda = 0.5;            // parent interpolation: 0 leftmost, 1 rightmost
  double center_strength = 0.05;  // per unit of node frequency
  double spring_stiffness = 0.08; // per traversal using an edge
  double collision_padding = 4.0;
  double collision_strength = 0.7;
  int collision_passes = 2;
  double velocity_decay = 0.4;
  double alpha_decay = 0.0228;
  int max_iterations = 1000;
  double convergence_epsilon = 0.1;
  std::uint64_t seed = 42;
  double canvas_height = 600.0;  // centering pulls toward canvas_height / 2
  double char_width = 7.0;
  double font_size = 14.0;
  double longtail = 0.0;         // hide-longtail slider in [0, 1]
  double min_scale = 0.5;
  double max_scale = 2.0;

  // Throws InvalidArgument.
  void validate() const;
};

nlohmann::json to_json(const LayoutParams& params);
// Missing keys keep their defaults; validates the result.
LayoutParams layout_params_from_json(const nlohmann::json& doc);

struct LayoutNode {
  std::string node_id;
  std::string label;
  double x = 0.0;  // ellipse centre
  double y = 0.0;
  double rx = 0.0;
  double ry = 0.0;
  double size_scale = 1.0;
  double opacity = 1.0;
  Rgb color;
  std::size_t frequency = 0;
  bool emphasized = true;
};

struct LayoutPath {
  std::string generation_id;
  std::string prompt_id;
  Rgb color;
  std::vector<std::pair<double, double>> points;  // node centres along the traversal
  bool emphasized = true;
};

struct LayoutResult {
  std::vector<LayoutNode> nodes;  // parallel to lattice.nodes
  std::vector<LayoutPath> paths;  // parallel to lattice.traversals
  int iterations_used = 0;
  bool converged = false;
};

// Label-derived radii before frequency scaling; caller-measured geometry may
// replace it per node id.
struct NodeGeometry {
  double rx = 0.0;
  double ry = 0.0;
};
using GeometryHints = std::map<std::string, NodeGeometry>;

// Left-edge target for a node given the parent-derived positions
// (parent.x + parent.rx + gap). Roots (no parents) get left_offset.
double horizontal_target(std::span<const double> parent_positions, double lambda,
                         double left_offset);

// clamp(max_scale * sqrt(frequency / total), min_scale, max_scale); area
// proportional to frequency between the clamps.
double node_size(std::size_t frequency, std::size_t total, double min_scale = 0.5,
                 double max_scale = 2.0);

// Prompt colours weighted by generation counts, averaged in linear RGB.
Rgb node_color(const std::map<std::string, std::size_t>& prompt_counts,
               const PromptPalette& palette);

double longtail_opacity(std::size_t frequency, std::size_t total, double t);

// Smallest padded ellipse-distance metric over all node pairs (sqrt of the
// squared form; >= 1 means no overlap). Infinity for fewer than two nodes.
double min_ellipse_metric(const LayoutResult& layout, double padding);

// Positions are a pure function of (lattice, params, palette, hints). x is
// fixed from horizontal_target in topological order; the centering, spring
// and collision forces act on y.
LayoutResult compute_layout(const TokenLattice& lattice, const LayoutParams& params,
                            const PromptPalette& palette = {}, const GeometryHints& hints = {});

// Sets emphasis flags: a path is emphasized iff its generation is, a node iff
// an emphasized path visits it. Nothing is removed.
void apply_emphasis(LayoutResult& layout, const TokenLattice& lattice,
                    const std::set<std::string>& emphasized_generations);

nlohmann::json to_json(const LayoutResult& layout, const LayoutParams& params);

// Ellipses and one stroke per traversal. Same input, same bytes.
std::string render_svg(const LayoutResult& layout, const LayoutParams& params);

}  // namespace tl
