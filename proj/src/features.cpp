// SPDX-License-Identifier: Apache-2.0
#include "segbert/features.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "segbert/error.hpp"

namespace segbert {

std::vector<int> compute_degrees(const GraphInstance& g) {
  std::vector<int> degree(static_cast<std::size_t>(g.node_count), 0);
  // Edges are stored once per direction with no duplicates.
  for (const Edge& e : g.edges) ++degree[static_cast<std::size_t>(e.src)];
  return degree;
}

namespace {

std::vector<int> densify(std::vector<std::vector<int>>& colors) {
  std::vector<int> values;
  for (const auto& c : colors) values.insert(values.end(), c.begin(), c.end());
  std::sort(values.begin(), values.end());
  values.erase(std::unique(values.begin(), values.end()), values.end());
  for (auto& c : colors) {
    for (int& v : c) v = static_cast<int>(std::lower_bound(values.begin(), values.end(), v) - values.begin());
  }
  return values;
}

}  // namespace

std::vector<std::vector<int>> compute_wl_codes(std::span<const GraphInstance> graphs, int iterations) {
  if (iterations < 1) throw ConfigError("WL iterations must be >= 1");
  const bool use_tags =
      !graphs.empty() && std::all_of(graphs.begin(), graphs.end(), [](const GraphInstance& g) {
        return static_cast<int>(g.node_tags.size()) == g.node_count;
      });

  std::vector<std::vector<std::vector<int>>> neighbors(graphs.size());
  std::vector<std::vector<int>> colors(graphs.size());
  for (std::size_t gi = 0; gi < graphs.size(); ++gi) {
    const auto& g = graphs[gi];
    auto& nb = neighbors[gi];
    nb.resize(static_cast<std::size_t>(g.node_count));
    for (const Edge& e : g.edges) nb[static_cast<std::size_t>(e.src)].push_back(e.dst);
    colors[gi] = use_tags ? g.node_tags : compute_degrees(g);
  }
  std::size_t color_count = densify(colors).size();

  for (int round = 0; round < iterations; ++round) {
    std::map<std::vector<int>, int> dictionary;
    std::vector<std::vector<std::vector<int>>> signatures(graphs.size());
    for (std::size_t gi = 0; gi < graphs.size(); ++gi) {
      const auto& col = colors[gi];
      auto& sig = signatures[gi];
      sig.resize(col.size());
      for (std::size_t v = 0; v < col.size(); ++v) {
        std::vector<int>& s = sig[v];
        s.reserve(neighbors[gi][v].size() + 1);
        s.push_back(col[v]);
        for (int u : neighbors[gi][v]) s.push_back(col[static_cast<std::size_t>(u)]);
        std::sort(s.begin() + 1, s.end());
        dictionary.emplace(s, 0);
      }
    }
    if (dictionary.size() == color_count) break;  // partition is stable
    int next = 0;
    for (auto& [sig, id] : dictionary) id = next++;
    for (std::size_t gi = 0; gi < graphs.size(); ++gi) {
      for (std::size_t v = 0; v < colors[gi].size(); ++v) colors[gi][v] = dictionary.at(signatures[gi][v]);
    }
    color_count = dictionary.size();
  }
  return colors;
}

std::vector<int> compute_wl_codes(const GraphInstance& g, int iterations) {
  return compute_wl_codes(std::span<const GraphInstance>(&g, 1), iterations).front();
}

std::vector<double> positional_embedding(long value, int d_h) {
  if (d_h <= 0 || d_h % 2 != 0) throw ConfigError("positional embedding width must be positive and even, got " + std::to_string(d_h));
  std::vector<double> out(static_cast<std::size_t>(d_h));
  const double v = static_cast<double>(value);
  const double dh = static_cast<double>(d_h);
  for (int l = 0; l < d_h / 2; ++l) {
    out[static_cast<std::size_t>(2 * l)] = std::sin(v / std::pow(10000.0, 2.0 * l / dh));
    out[static_cast<std::size_t>(2 * l + 1)] = std::cos(v / std::pow(10000.0, (2.0 * l + 1.0) / dh));
  }
  return out;
}

std::vector<NodeFeatureBundle> build_bundles(const GraphInstance& g, int n_adj, std::span<const int> wl_codes) {
  if (n_adj < 1) throw ConfigError("adjacency row width must be >= 1");
  if (static_cast<int>(wl_codes.size()) != g.node_count) throw ConfigError("one WL code per node required");
  const auto degrees = compute_degrees(g);
  std::vector<NodeFeatureBundle> bundles(static_cast<std::size_t>(g.node_count));
  for (int v = 0; v < g.node_count; ++v) {
    auto& b = bundles[static_cast<std::size_t>(v)];
    b.degree = degrees[static_cast<std::size_t>(v)];
    b.wl_code = wl_codes[static_cast<std::size_t>(v)];
    b.tag = g.node_tags.empty() ? 0 : g.node_tags[static_cast<std::size_t>(v)];
    b.adjacency_row.assign(static_cast<std::size_t>(n_adj), 0.0);
    const auto& attrs = g.node_attributes;
    b.raw_attr.resize(static_cast<std::size_t>(attrs.cols()));
    for (Index c = 0; c < attrs.cols(); ++c) b.raw_attr[static_cast<std::size_t>(c)] = attrs(v, c);
  }
  for (const Edge& e : g.edges) {
    if (e.dst < n_adj) bundles[static_cast<std::size_t>(e.src)].adjacency_row[static_cast<std::size_t>(e.dst)] = e.weight;
  }
  return bundles;
}

std::vector<NodeFeatureBundle> build_bundles(const GraphInstance& g, int n_adj, int wl_iterations) {
  const auto codes = compute_wl_codes(g, wl_iterations);
  return build_bundles(g, n_adj, codes);
}

}  // namespace segbert
