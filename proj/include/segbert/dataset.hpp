// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "segbert/autodiff/tape.hpp"

namespace segbert {

struct Edge {
  int src = 0;
  int dst = 0;
  double weight = 1.0;

  friend bool operator==(const Edge&, const Edge&) = default;
};

/// One labeled graph. Node indices are local and 0-based; the index order is
/// the fixed artificial order used for adjacency rows.
struct GraphInstance {
  int node_count = 0;
  /// Both directions of every undirected edge, sorted by (src, dst).
  std::vector<Edge> edges;
  /// Empty when the dataset has no discrete node labels.
  std::vector<int> node_tags;
  /// node_count x d_x; zero columns when the dataset has no attributes.
  Matrix node_attributes;
  int label = 0;

  /// Neighbor lists with weights, in ascending neighbor order.
  std::vector<std::vector<std::pair<int, double>>> adjacency() const;
  /// Dense node_count x node_count weight matrix.
  Matrix weight_matrix() const;

  friend bool operator==(const GraphInstance& a, const GraphInstance& b);
};

/// Builds a graph from undirected edges, storing each in both directions.
/// Later duplicates overwrite the weight of earlier ones.
GraphInstance make_graph(int node_count, std::span<const Edge> undirected_edges, int label = 0);

/// The same graph with node i renamed to perm[i].
GraphInstance relabel_nodes(const GraphInstance& g, std::span<const int> perm);

struct GraphDataset {
  std::string name;
  std::vector<GraphInstance> graphs;
  int class_count = 0;
  int attr_dim = 0;
  int tag_vocab_size = 0;
  int max_nodes = 0;
  double avg_nodes = 0.0;
  /// label_values[c] is the on-disk label that was remapped to class c.
  std::vector<int> label_values;

  bool has_tags() const { return tag_vocab_size > 0; }
};

/// Recomputes class_count, attr_dim, tag_vocab_size, max_nodes, avg_nodes.
void refresh_statistics(GraphDataset& dataset);

/// Reads `<name>_A.txt`, `<name>_graph_indicator.txt`, `<name>_graph_labels.txt`
/// and, when present, `<name>_node_labels.txt` and `<name>_node_attributes.txt`.
/// Throws DatasetError on missing or inconsistent files.
GraphDataset load_tu_dataset(const std::filesystem::path& directory, const std::string& name);

/// Writes the dataset back in the same flat-file format.
void write_tu_dataset(const GraphDataset& dataset, const std::filesystem::path& directory);

struct FoldSplit {
  int fold_index = 0;
  std::vector<int> train;
  std::vector<int> validation;
  std::vector<int> test;
};

inline constexpr int kFoldCount = 10;

/// Stratified 8:1:1 splits. Fold f tests on part f and validates on the part
/// after it, so every graph is tested exactly once across the ten folds.
std::vector<FoldSplit> make_folds(const GraphDataset& dataset, std::uint64_t seed);

}  // namespace segbert
