// SPDX-License-Identifier: Apache-2.0
#include "segbert/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "segbert/error.hpp"

namespace segbert {

namespace fs = std::filesystem;

std::vector<std::vector<std::pair<int, double>>> GraphInstance::adjacency() const {
  std::vector<std::vector<std::pair<int, double>>> adj(static_cast<std::size_t>(node_count));
  for (const Edge& e : edges) adj[static_cast<std::size_t>(e.src)].emplace_back(e.dst, e.weight);
  return adj;
}

Matrix GraphInstance::weight_matrix() const {
  Matrix w = Matrix::Zero(node_count, node_count);
  for (const Edge& e : edges) w(e.src, e.dst) = e.weight;
  return w;
}

bool operator==(const GraphInstance& a, const GraphInstance& b) {
  return a.node_count == b.node_count && a.edges == b.edges && a.node_tags == b.node_tags &&
         a.label == b.label && a.node_attributes.rows() == b.node_attributes.rows() &&
         a.node_attributes.cols() == b.node_attributes.cols() && a.node_attributes == b.node_attributes;
}

namespace {

std::vector<Edge> sorted_edges(const std::map<std::pair<int, int>, double>& arcs) {
  std::vector<Edge> out;
  out.reserve(arcs.size());
  for (const auto& [key, w] : arcs) out.push_back(Edge{key.first, key.second, w});
  return out;
}

}  // namespace

GraphInstance make_graph(int node_count, std::span<const Edge> undirected_edges, int label) {
  if (node_count <= 0) throw DatasetError("graph must have at least one node");
  std::map<std::pair<int, int>, double> arcs;
  for (const Edge& e : undirected_edges) {
    if (e.src < 0 || e.src >= node_count || e.dst < 0 || e.dst >= node_count) {
      throw DatasetError("edge (" + std::to_string(e.src) + ", " + std::to_string(e.dst) + ") outside a " +
                         std::to_string(node_count) + "-node graph");
    }
    arcs[{e.src, e.dst}] = e.weight;
    arcs[{e.dst, e.src}] = e.weight;
  }
  GraphInstance g;
  g.node_count = node_count;
  g.edges = sorted_edges(arcs);
  g.node_attributes = Matrix(node_count, 0);
  g.label = label;
  return g;
}

GraphInstance relabel_nodes(const GraphInstance& g, std::span<const int> perm) {
  if (static_cast<int>(perm.size()) != g.node_count) throw DatasetError("relabel_nodes: permutation size mismatch");
  GraphInstance out;
  out.node_count = g.node_count;
  out.label = g.label;
  std::map<std::pair<int, int>, double> arcs;
  for (const Edge& e : g.edges) arcs[{perm[static_cast<std::size_t>(e.src)], perm[static_cast<std::size_t>(e.dst)]}] = e.weight;
  out.edges = sorted_edges(arcs);
  if (!g.node_tags.empty()) {
    out.node_tags.resize(g.node_tags.size());
    for (std::size_t i = 0; i < perm.size(); ++i) out.node_tags[static_cast<std::size_t>(perm[i])] = g.node_tags[i];
  }
  out.node_attributes = Matrix(g.node_count, g.node_attributes.cols());
  for (std::size_t i = 0; i < perm.size(); ++i) {
    out.node_attributes.row(perm[i]) = g.node_attributes.row(static_cast<Index>(i));
  }
  return out;
}

void refresh_statistics(GraphDataset& dataset) {
  dataset.max_nodes = 0;
  dataset.tag_vocab_size = 0;
  dataset.attr_dim = dataset.graphs.empty() ? 0 : static_cast<int>(dataset.graphs.front().node_attributes.cols());
  int max_label = -1;
  long total = 0;
  for (const auto& g : dataset.graphs) {
    dataset.max_nodes = std::max(dataset.max_nodes, g.node_count);
    total += g.node_count;
    max_label = std::max(max_label, g.label);
    for (int t : g.node_tags) dataset.tag_vocab_size = std::max(dataset.tag_vocab_size, t + 1);
  }
  dataset.class_count = max_label + 1;
  dataset.avg_nodes = dataset.graphs.empty() ? 0.0 : static_cast<double>(total) / static_cast<double>(dataset.graphs.size());
}

namespace {

struct LineReader {
  fs::path path;
  std::ifstream in;
  std::size_t line_no = 0;

  explicit LineReader(fs::path p) : path(std::move(p)), in(path) {
    if (!in) throw DatasetError("cannot open " + path.string());
  }

  /// Next non-blank line; false at end of file.
  bool next(std::string& line) {
    while (std::getline(in, line)) {
      ++line_no;
      if (line.find_first_not_of(" \t\r") != std::string::npos) return true;
    }
    return false;
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw DatasetError(path.filename().string() + ":" + std::to_string(line_no) + ": " + what);
  }
};

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (start <= line.size()) {
    std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) comma = line.size();
    std::string_view f = line.substr(start, comma - start);
    while (!f.empty() && (f.front() == ' ' || f.front() == '\t')) f.remove_prefix(1);
    while (!f.empty() && (f.back() == ' ' || f.back() == '\t' || f.back() == '\r')) f.remove_suffix(1);
    fields.push_back(f);
    start = comma + 1;
  }
  return fields;
}

long parse_int(std::string_view field, const LineReader& reader) {
  long value = 0;
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (ec != std::errc() || ptr != field.data() + field.size()) reader.fail("expected an integer, got '" + std::string(field) + "'");
  return value;
}

double parse_double(std::string_view field, const LineReader& reader) {
  std::string tmp(field);
  char* end = nullptr;
  const double value = std::strtod(tmp.c_str(), &end);
  if (tmp.empty() || end != tmp.c_str() + tmp.size()) reader.fail("expected a number, got '" + tmp + "'");
  return value;
}

fs::path require_file(const fs::path& dir, const std::string& name, const char* suffix) {
  fs::path p = dir / (name + suffix);
  if (!fs::exists(p)) throw DatasetError("missing dataset file " + p.string());
  return p;
}

}  // namespace

GraphDataset load_tu_dataset(const fs::path& directory, const std::string& name) {
  if (!fs::is_directory(directory)) throw DatasetError("dataset directory not found: " + directory.string());
  const fs::path a_path = require_file(directory, name, "_A.txt");
  const fs::path ind_path = require_file(directory, name, "_graph_indicator.txt");
  const fs::path lab_path = require_file(directory, name, "_graph_labels.txt");

  // Graph labels first: they fix the number of graphs.
  std::vector<int> raw_labels;
  {
    LineReader r(lab_path);
    std::string line;
    while (r.next(line)) raw_labels.push_back(static_cast<int>(parse_int(split_fields(line).front(), r)));
  }
  const std::size_t graph_count = raw_labels.size();
  if (graph_count == 0) throw DatasetError(lab_path.string() + " lists no graphs");

  // Global node id (0-based) -> (graph, local index).
  std::vector<int> node_graph;
  std::vector<int> node_local;
  std::vector<int> graph_sizes(graph_count, 0);
  {
    LineReader r(ind_path);
    std::string line;
    while (r.next(line)) {
      const long gid = parse_int(split_fields(line).front(), r);
      if (gid < 1 || static_cast<std::size_t>(gid) > graph_count) {
        r.fail("graph id " + std::to_string(gid) + " outside 1.." + std::to_string(graph_count) +
               " (graph label file length mismatch?)");
      }
      node_graph.push_back(static_cast<int>(gid - 1));
      node_local.push_back(graph_sizes[static_cast<std::size_t>(gid - 1)]++);
    }
  }
  for (std::size_t g = 0; g < graph_count; ++g) {
    if (graph_sizes[g] == 0) {
      throw DatasetError(lab_path.filename().string() + " has " + std::to_string(graph_count) +
                         " labels but graph " + std::to_string(g + 1) + " has no nodes in " +
                         ind_path.filename().string());
    }
  }

  std::vector<std::map<std::pair<int, int>, double>> arcs(graph_count);
  {
    LineReader r(a_path);
    std::string line;
    std::size_t duplicates = 0;
    while (r.next(line)) {
      auto fields = split_fields(line);
      if (fields.size() != 2) r.fail("expected 'i, j'");
      const long i = parse_int(fields[0], r);
      const long j = parse_int(fields[1], r);
      const auto n = static_cast<long>(node_graph.size());
      if (i < 1 || i > n || j < 1 || j > n) r.fail("edge references node outside 1.." + std::to_string(n));
      const int gi = node_graph[static_cast<std::size_t>(i - 1)];
      if (gi != node_graph[static_cast<std::size_t>(j - 1)]) r.fail("edge joins nodes of different graphs");
      const int li = node_local[static_cast<std::size_t>(i - 1)];
      const int lj = node_local[static_cast<std::size_t>(j - 1)];
      auto [it, inserted] = arcs[static_cast<std::size_t>(gi)].insert_or_assign({li, lj}, 1.0);
      if (!inserted) ++duplicates;
    }
    if (duplicates > 0) {
      std::cerr << "warning: " << a_path.filename().string() << ": collapsed " << duplicates << " duplicate arcs\n";
    }
  }

  GraphDataset ds;
  ds.name = name;
  ds.graphs.resize(graph_count);
  for (std::size_t g = 0; g < graph_count; ++g) {
    auto& arc = arcs[g];
    // Undirected benchmarks: make storage symmetric even if the file lists one direction.
    std::vector<std::pair<int, int>> missing;
    for (const auto& [key, w] : arc) {
      if (!arc.contains({key.second, key.first})) missing.emplace_back(key.second, key.first);
    }
    for (const auto& key : missing) arc[key] = 1.0;
    ds.graphs[g].node_count = graph_sizes[g];
    ds.graphs[g].edges = sorted_edges(arc);
    ds.graphs[g].node_attributes = Matrix(graph_sizes[g], 0);
  }

  const fs::path tag_path = directory / (name + "_node_labels.txt");
  if (fs::exists(tag_path)) {
    LineReader r(tag_path);
    std::string line;
    for (auto& g : ds.graphs) g.node_tags.assign(static_cast<std::size_t>(g.node_count), 0);
    std::size_t node = 0;
    while (r.next(line)) {
      if (node >= node_graph.size()) r.fail("more node labels than nodes");
      const long tag = parse_int(split_fields(line).front(), r);
      if (tag < 0) r.fail("negative node label");
      ds.graphs[static_cast<std::size_t>(node_graph[node])].node_tags[static_cast<std::size_t>(node_local[node])] =
          static_cast<int>(tag);
      ++node;
    }
    if (node != node_graph.size()) throw DatasetError(tag_path.filename().string() + ": fewer node labels than nodes");
  }

  const fs::path attr_path = directory / (name + "_node_attributes.txt");
  if (fs::exists(attr_path)) {
    LineReader r(attr_path);
    std::string line;
    std::size_t node = 0;
    Index dim = -1;
    while (r.next(line)) {
      if (node >= node_graph.size()) r.fail("more attribute rows than nodes");
      auto fields = split_fields(line);
      if (dim < 0) {
        dim = static_cast<Index>(fields.size());
        for (auto& g : ds.graphs) g.node_attributes = Matrix::Zero(g.node_count, dim);
      } else if (static_cast<Index>(fields.size()) != dim) {
        r.fail("expected " + std::to_string(dim) + " attributes");
      }
      auto& g = ds.graphs[static_cast<std::size_t>(node_graph[node])];
      for (Index c = 0; c < dim; ++c) g.node_attributes(node_local[node], c) = parse_double(fields[static_cast<std::size_t>(c)], r);
      ++node;
    }
    if (node != node_graph.size()) throw DatasetError(attr_path.filename().string() + ": fewer attribute rows than nodes");
  }

  std::vector<int> distinct = raw_labels;
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  ds.label_values = distinct;
  for (std::size_t g = 0; g < graph_count; ++g) {
    ds.graphs[g].label =
        static_cast<int>(std::lower_bound(distinct.begin(), distinct.end(), raw_labels[g]) - distinct.begin());
  }
  refresh_statistics(ds);
  ds.class_count = static_cast<int>(distinct.size());
  return ds;
}

void write_tu_dataset(const GraphDataset& dataset, const fs::path& directory) {
  fs::create_directories(directory);
  auto open = [&](const char* suffix) {
    std::ofstream out(directory / (dataset.name + suffix));
    if (!out) throw DatasetError("cannot write " + (directory / (dataset.name + suffix)).string());
    return out;
  };
  std::ofstream a = open("_A.txt");
  std::ofstream ind = open("_graph_indicator.txt");
  std::ofstream lab = open("_graph_labels.txt");
  long offset = 0;
  for (std::size_t g = 0; g < dataset.graphs.size(); ++g) {
    const auto& graph = dataset.graphs[g];
    for (const Edge& e : graph.edges) a << (offset + e.src + 1) << ", " << (offset + e.dst + 1) << "\n";
    for (int v = 0; v < graph.node_count; ++v) ind << (g + 1) << "\n";
    const int label = dataset.label_values.empty() ? graph.label : dataset.label_values[static_cast<std::size_t>(graph.label)];
    lab << label << "\n";
    offset += graph.node_count;
  }
  if (dataset.has_tags()) {
    std::ofstream tags = open("_node_labels.txt");
    for (const auto& graph : dataset.graphs) {
      for (int t : graph.node_tags) tags << t << "\n";
    }
  }
  if (dataset.attr_dim > 0) {
    std::ofstream attrs = open("_node_attributes.txt");
    attrs << std::setprecision(17);
    for (const auto& graph : dataset.graphs) {
      for (Index r = 0; r < graph.node_attributes.rows(); ++r) {
        for (Index c = 0; c < graph.node_attributes.cols(); ++c) {
          attrs << (c == 0 ? "" : ", ") << graph.node_attributes(r, c);
        }
        attrs << "\n";
      }
    }
  }
}

std::vector<FoldSplit> make_folds(const GraphDataset& dataset, std::uint64_t seed) {
  const int n = static_cast<int>(dataset.graphs.size());
  if (n < kFoldCount) {
    throw DatasetError("need at least " + std::to_string(kFoldCount) + " graphs for 10-fold splits, dataset has " +
                       std::to_string(n));
  }
  std::mt19937_64 rng(seed);
  std::map<int, std::vector<int>> by_class;
  for (int i = 0; i < n; ++i) by_class[dataset.graphs[static_cast<std::size_t>(i)].label].push_back(i);

  // Deal class by class round-robin so each part gets a proportional share of
  // every class and part sizes differ by at most one.
  std::vector<std::vector<int>> parts(kFoldCount);
  int counter = 0;
  for (auto& [label, members] : by_class) {
    std::shuffle(members.begin(), members.end(), rng);
    for (int idx : members) parts[static_cast<std::size_t>(counter++ % kFoldCount)].push_back(idx);
  }

  // Parts 0..L-1 hold one extra graph. Spread them around the ring so that a
  // fold's (test, validation) pair never takes two small or two large parts
  // when that would push the training share off 8:1:1 by more than one.
  const int large = n % kFoldCount;
  std::vector<int> position(kFoldCount, -1);
  std::vector<bool> taken(kFoldCount, false);
  for (int i = 0; i < large; ++i) {
    const int pos = i * kFoldCount / large;
    position[static_cast<std::size_t>(i)] = pos;
    taken[static_cast<std::size_t>(pos)] = true;
  }
  int next_free = 0;
  for (int i = large; i < kFoldCount; ++i) {
    while (taken[static_cast<std::size_t>(next_free)]) ++next_free;
    position[static_cast<std::size_t>(i)] = next_free;
    taken[static_cast<std::size_t>(next_free)] = true;
  }
  std::vector<std::vector<int>> ring(kFoldCount);
  for (int i = 0; i < kFoldCount; ++i) ring[static_cast<std::size_t>(position[static_cast<std::size_t>(i)])] = std::move(parts[static_cast<std::size_t>(i)]);

  std::vector<FoldSplit> folds(kFoldCount);
  for (int f = 0; f < kFoldCount; ++f) {
    FoldSplit& split = folds[static_cast<std::size_t>(f)];
    split.fold_index = f;
    const int val_part = (f + 1) % kFoldCount;
    split.test = ring[static_cast<std::size_t>(f)];
    split.validation = ring[static_cast<std::size_t>(val_part)];
    for (int p = 0; p < kFoldCount; ++p) {
      if (p == f || p == val_part) continue;
      const auto& part = ring[static_cast<std::size_t>(p)];
      split.train.insert(split.train.end(), part.begin(), part.end());
    }
    std::sort(split.train.begin(), split.train.end());
    std::sort(split.validation.begin(), split.validation.end());
    std::sort(split.test.begin(), split.test.end());
  }
  return folds;
}

}  // namespace segbert
