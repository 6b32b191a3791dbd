// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "segbert/dataset.hpp"
#include "segbert/features.hpp"

namespace segbert {

enum class Strategy { kFullInput, kPaddingPruning, kSegmentShifting };

std::string_view to_string(Strategy s);
/// Accepts "full-input", "padding-pruning", "segment-shifting".
Strategy parse_strategy(std::string_view text);

struct UnifyPlan {
  Strategy strategy = Strategy::kPaddingPruning;
  int k = 0;
};

inline constexpr int kDummy = -1;
inline constexpr int kDefaultSegmentK = 20;

/// A k-slot view of (part of) a graph.
struct Segment {
  std::vector<int> node_ids;  ///< local node index, or kDummy
  std::vector<bool> real_mask;
  std::vector<NodeFeatureBundle> bundles;

  int slot_count() const { return static_cast<int>(node_ids.size()); }
  int real_count() const;
};

/// Padding/pruning portal size used when none is configured: the per-dataset
/// defaults for the seven benchmarks, otherwise ceil(1.25 * avg_nodes).
int default_padding_k(std::string_view dataset_name, double avg_nodes);

/// Input portal size for `strategy`. FullInput requires k == max_nodes; an
/// override that disagrees is a ConfigError, as is a non-positive override.
int resolve_k(const GraphDataset& dataset, Strategy strategy, std::optional<int> k_override = std::nullopt);

/// Adjacency row width: k for FullInput and PaddingPruning, max_nodes rounded
/// up to a multiple of k for SegmentShifting.
int default_adjacency_width(const GraphDataset& dataset, const UnifyPlan& plan);

/// Splits the serialized node list into segments. `order` is the
/// serialization (a permutation of node ids); identity when empty.
std::vector<Segment> unify(const GraphInstance& g, const UnifyPlan& plan, std::span<const NodeFeatureBundle> bundles,
                           std::span<const int> order = {});

}  // namespace segbert
