// SPDX-License-Identifier: Apache-2.0
#include "segbert/unify.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "segbert/error.hpp"

namespace segbert {

std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::kFullInput: return "full-input";
    case Strategy::kPaddingPruning: return "padding-pruning";
    case Strategy::kSegmentShifting: return "segment-shifting";
  }
  return "unknown";
}

Strategy parse_strategy(std::string_view text) {
  if (text == "full-input") return Strategy::kFullInput;
  if (text == "padding-pruning") return Strategy::kPaddingPruning;
  if (text == "segment-shifting") return Strategy::kSegmentShifting;
  throw ConfigError("unknown strategy '" + std::string(text) + "'");
}

int Segment::real_count() const { return static_cast<int>(std::count(real_mask.begin(), real_mask.end(), true)); }

int default_padding_k(std::string_view name, double avg_nodes) {
  if (name == "MUTAG") return 25;
  if (name == "IMDB-BINARY" || name == "IMDB-B" || name == "IMDB-MULTI" || name == "IMDB-M" || name == "NCI1" ||
      name == "PTC" || name == "PTC_MR") {
    return 50;
  }
  if (name == "COLLAB" || name == "PROTEINS") return 100;
  return std::max(1, static_cast<int>(std::ceil(1.25 * avg_nodes)));
}

int resolve_k(const GraphDataset& dataset, Strategy strategy, std::optional<int> k_override) {
  if (k_override && *k_override <= 0) throw ConfigError("k must be positive, got " + std::to_string(*k_override));
  switch (strategy) {
    case Strategy::kFullInput:
      if (k_override && *k_override != dataset.max_nodes) {
        throw ConfigError("full-input uses k = max_nodes = " + std::to_string(dataset.max_nodes) +
                          "; k override " + std::to_string(*k_override) +
                          (*k_override < dataset.max_nodes ? " is below max_nodes" : " differs from max_nodes"));
      }
      return dataset.max_nodes;
    case Strategy::kPaddingPruning:
      return k_override.value_or(default_padding_k(dataset.name, dataset.avg_nodes));
    case Strategy::kSegmentShifting:
      return k_override.value_or(kDefaultSegmentK);
  }
  return 0;
}

int default_adjacency_width(const GraphDataset& dataset, const UnifyPlan& plan) {
  if (plan.k <= 0) throw ConfigError("k must be positive");
  if (plan.strategy != Strategy::kSegmentShifting) return plan.k;
  return (dataset.max_nodes + plan.k - 1) / plan.k * plan.k;
}

std::vector<Segment> unify(const GraphInstance& g, const UnifyPlan& plan, std::span<const NodeFeatureBundle> bundles,
                           std::span<const int> order) {
  if (plan.k <= 0) throw ConfigError("k must be positive");
  if (static_cast<int>(bundles.size()) != g.node_count) throw ConfigError("one bundle per node required");
  std::vector<int> serial(order.begin(), order.end());
  if (serial.empty()) {
    serial.resize(static_cast<std::size_t>(g.node_count));
    std::iota(serial.begin(), serial.end(), 0);
  } else {
    std::vector<bool> seen(static_cast<std::size_t>(g.node_count), false);
    bool valid = static_cast<int>(serial.size()) == g.node_count;
    for (std::size_t i = 0; valid && i < serial.size(); ++i) {
      valid = serial[i] >= 0 && serial[i] < g.node_count && !seen[static_cast<std::size_t>(serial[i])];
      if (valid) seen[static_cast<std::size_t>(serial[i])] = true;
    }
    if (!valid) throw ConfigError("serialization order must list every node once");
  }

  const int k = plan.k;
  std::size_t used = serial.size();
  std::size_t segment_count = 1;
  if (plan.strategy == Strategy::kSegmentShifting) {
    segment_count = (serial.size() + static_cast<std::size_t>(k) - 1) / static_cast<std::size_t>(k);
  } else {
    used = std::min(used, static_cast<std::size_t>(k));
  }

  NodeFeatureBundle dummy;
  if (!bundles.empty()) {
    dummy.adjacency_row.assign(bundles.front().adjacency_row.size(), 0.0);
    dummy.raw_attr.assign(bundles.front().raw_attr.size(), 0.0);
  }

  std::vector<Segment> segments(segment_count);
  for (std::size_t s = 0; s < segment_count; ++s) {
    Segment& seg = segments[s];
    seg.node_ids.reserve(static_cast<std::size_t>(k));
    for (int slot = 0; slot < k; ++slot) {
      const std::size_t pos = s * static_cast<std::size_t>(k) + static_cast<std::size_t>(slot);
      if (pos < used) {
        const int node = serial[pos];
        seg.node_ids.push_back(node);
        seg.real_mask.push_back(true);
        seg.bundles.push_back(bundles[static_cast<std::size_t>(node)]);
      } else {
        seg.node_ids.push_back(kDummy);
        seg.real_mask.push_back(false);
        seg.bundles.push_back(dummy);
      }
    }
  }
  return segments;
}

}  // namespace segbert
