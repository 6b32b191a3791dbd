// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <vector>

#include "segbert/dataset.hpp"

namespace segbert {

/// Per-node inputs that do not depend on the serialization order.
struct NodeFeatureBundle {
  int degree = 0;
  int wl_code = 0;
  /// Discrete node label; 0 for datasets without tags and for dummy slots.
  int tag = 0;
  /// Connection weights in the fixed node order, padded or cut to n_adj.
  std::vector<double> adjacency_row;
  /// Raw attribute vector; empty when the dataset has none.
  std::vector<double> raw_attr;

  friend bool operator==(const NodeFeatureBundle&, const NodeFeatureBundle&) = default;
};

/// Number of distinct neighbors of each node. A self-loop counts once.
std::vector<int> compute_degrees(const GraphInstance& g);

inline constexpr int kDefaultWlIterations = 2;

/// 1-WL color refinement over a set of graphs with one shared color
/// dictionary. Initial colors are node tags when every graph has them,
/// degrees otherwise. Each round maps (own color, sorted neighbor colors) to
/// a new color; new colors are numbered by sorted signature so the result
/// does not depend on node or graph order. Stops after `iterations` rounds or
/// as soon as a round refines nothing. Codes are dense in 0..C-1.
std::vector<std::vector<int>> compute_wl_codes(std::span<const GraphInstance> graphs, int iterations);

/// Single-graph convenience overload.
std::vector<int> compute_wl_codes(const GraphInstance& g, int iterations);

/// Sinusoidal embedding: entry 2l = sin(v / 10000^(2l/d_h)),
/// entry 2l+1 = cos(v / 10000^((2l+1)/d_h)). Throws ConfigError on odd d_h.
std::vector<double> positional_embedding(long value, int d_h);

std::vector<NodeFeatureBundle> build_bundles(const GraphInstance& g, int n_adj, std::span<const int> wl_codes);
std::vector<NodeFeatureBundle> build_bundles(const GraphInstance& g, int n_adj, int wl_iterations);

}  // namespace segbert
