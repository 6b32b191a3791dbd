// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "segbert/dataset.hpp"
#include "segbert/error.hpp"
#include "segbert/features.hpp"
#include "test_util.hpp"
#include "wl_oracle.hpp"

namespace segbert {
namespace {

const GraphDataset& mutag() {
  static const GraphDataset d = load_tu_dataset(testing::data_dir() / "MUTAG", "MUTAG");
  return d;
}

using testing::random_graph;
using testing::wl_oracle;

// Same partition over the union of all nodes: equal codes iff equal oracle colors.
void expect_same_partition(const std::vector<std::vector<int>>& codes, const std::vector<std::vector<std::string>>& oracle) {
  ASSERT_EQ(codes.size(), oracle.size());
  std::map<int, std::string> forward;
  std::map<std::string, int> backward;
  for (std::size_t g = 0; g < codes.size(); ++g) {
    ASSERT_EQ(codes[g].size(), oracle[g].size());
    for (std::size_t i = 0; i < codes[g].size(); ++i) {
      auto [f, fnew] = forward.emplace(codes[g][i], oracle[g][i]);
      auto [b, bnew] = backward.emplace(oracle[g][i], codes[g][i]);
      ASSERT_EQ(f->second, oracle[g][i]) << "graph " << g << " node " << i;
      ASSERT_EQ(b->second, codes[g][i]) << "graph " << g << " node " << i;
    }
  }
}

TEST(Degrees, SingleNodeAndTriangle) {
  EXPECT_EQ(compute_degrees(make_graph(1, {}, 0)), std::vector<int>{0});
  const Edge tri[] = {{0, 1, 1.0}, {1, 2, 1.0}, {2, 0, 1.0}};
  EXPECT_EQ(compute_degrees(make_graph(3, tri, 0)), (std::vector<int>{2, 2, 2}));
}

TEST(Degrees, SelfLoopCountsOnce) {
  const Edge e[] = {{0, 0, 1.0}, {0, 1, 1.0}};
  const GraphInstance g = make_graph(2, e, 0);
  EXPECT_EQ(compute_degrees(g), (std::vector<int>{2, 1}));
  const auto b = build_bundles(g, 2, 1);
  EXPECT_EQ(b[0].adjacency_row, (std::vector<double>{1.0, 1.0}));
}

TEST(Degrees, MutagGraphZeroMatchesRawFile) {
  std::ifstream ind(testing::data_dir() / "MUTAG" / "MUTAG_graph_indicator.txt");
  std::vector<int> graph_of;
  for (int g; ind >> g;) graph_of.push_back(g);
  std::ifstream arcs(testing::data_dir() / "MUTAG" / "MUTAG_A.txt");
  std::map<int, std::set<int>> nbrs;
  std::string line;
  while (std::getline(arcs, line)) {
    int a = 0, b = 0;
    char comma = 0;
    std::istringstream ss(line);
    if (!(ss >> a >> comma >> b)) continue;
    if (graph_of[static_cast<std::size_t>(a - 1)] == 1) {
      nbrs[a - 1].insert(b - 1);
      nbrs[b - 1].insert(a - 1);
    }
  }
  const GraphInstance& g = mutag().graphs[0];
  const auto deg = compute_degrees(g);
  for (int i = 0; i < g.node_count; ++i) EXPECT_EQ(deg[static_cast<std::size_t>(i)], static_cast<int>(nbrs[i].size()));
}

TEST(Degrees, SumIsTwiceEdgeCount) {
  for (const auto& g : mutag().graphs) {
    const auto d = compute_degrees(g);
    EXPECT_EQ(std::accumulate(d.begin(), d.end(), 0u), g.edges.size());
  }
}

TEST(Wl, EdgelessGraphSharesOneCode) {
  const auto codes = compute_wl_codes(make_graph(4, {}, 0), 2);
  EXPECT_EQ(std::set<int>(codes.begin(), codes.end()).size(), 1u);
}

TEST(Wl, PathEndpointsShareCode) {
  const Edge path[] = {{0, 1, 1.0}, {1, 2, 1.0}};
  const auto codes = compute_wl_codes(make_graph(3, path, 0), 1);
  EXPECT_EQ(codes[0], codes[2]);
  EXPECT_NE(codes[0], codes[1]);
}

TEST(Wl, TriangleAndPathAreDisjoint) {
  const Edge tri[] = {{0, 1, 1.0}, {1, 2, 1.0}, {2, 0, 1.0}};
  const Edge path[] = {{0, 1, 1.0}, {1, 2, 1.0}};
  const std::vector<GraphInstance> graphs{make_graph(3, tri, 0), make_graph(3, path, 0)};
  const auto codes = compute_wl_codes(graphs, 2);
  const std::set<int> a(codes[0].begin(), codes[0].end());
  for (int c : codes[1]) EXPECT_FALSE(a.count(c));
  expect_same_partition(codes, wl_oracle(graphs, 2));
}

TEST(Wl, CodesAreDense) {
  const auto codes = compute_wl_codes(mutag().graphs, 2);
  std::set<int> all;
  for (const auto& v : codes) all.insert(v.begin(), v.end());
  EXPECT_EQ(*all.begin(), 0);
  EXPECT_EQ(*all.rbegin(), static_cast<int>(all.size()) - 1);
}

TEST(Wl, OracleAgreesOnMutag) {
  for (int iters : {1, 2, 3, 5}) {
    expect_same_partition(compute_wl_codes(mutag().graphs, iters), wl_oracle(mutag().graphs, iters));
  }
}

TEST(Wl, OracleAgreesOnRandomGraphs) {
  std::mt19937_64 rng(2024);
  std::vector<GraphInstance> graphs;
  for (int i = 0; i < 1000; ++i) graphs.push_back(random_graph(rng, 3, 10, false));
  for (const auto& g : graphs) {
    const std::vector<GraphInstance> one{g};
    expect_same_partition({compute_wl_codes(g, 2)}, wl_oracle(one, 2));
  }
  expect_same_partition(compute_wl_codes(graphs, 2), wl_oracle(graphs, 2));
  std::vector<GraphInstance> tagged;
  for (int i = 0; i < 200; ++i) tagged.push_back(random_graph(rng, 3, 10, true));
  expect_same_partition(compute_wl_codes(tagged, 3), wl_oracle(tagged, 3));
}

TEST(Wl, InvariantUnderNodePermutation) {
  std::mt19937_64 rng(5);
  const auto& graphs = mutag().graphs;
  const auto base = compute_wl_codes(graphs, 2);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<GraphInstance> shuffled;
    std::vector<std::vector<int>> perms;
    for (const auto& g : graphs) {
      std::vector<int> perm(static_cast<std::size_t>(g.node_count));
      std::iota(perm.begin(), perm.end(), 0);
      std::shuffle(perm.begin(), perm.end(), rng);
      shuffled.push_back(relabel_nodes(g, perm));
      perms.push_back(perm);
    }
    // Graph order is shuffled too.
    std::vector<std::size_t> order(graphs.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<GraphInstance> reordered;
    for (std::size_t i : order) reordered.push_back(shuffled[i]);
    const auto codes = compute_wl_codes(reordered, 2);
    for (std::size_t k = 0; k < order.size(); ++k) {
      const std::size_t gi = order[k];
      for (std::size_t v = 0; v < perms[gi].size(); ++v) {
        ASSERT_EQ(codes[k][static_cast<std::size_t>(perms[gi][v])], base[gi][v]);
      }
    }
  }
}

TEST(Wl, RefinementIsMonotone) {
  std::mt19937_64 rng(6);
  std::vector<GraphInstance> graphs;
  for (int i = 0; i < 100; ++i) graphs.push_back(random_graph(rng, 3, 12, false));
  for (int t = 1; t < 5; ++t) {
    const auto coarse = compute_wl_codes(graphs, t);
    const auto fine = compute_wl_codes(graphs, t + 1);
    std::map<int, int> fine_to_coarse;
    for (std::size_t g = 0; g < graphs.size(); ++g) {
      for (std::size_t i = 0; i < fine[g].size(); ++i) {
        auto [it, inserted] = fine_to_coarse.emplace(fine[g][i], coarse[g][i]);
        EXPECT_EQ(it->second, coarse[g][i]);
      }
    }
  }
}

TEST(PositionalEmbedding, ZeroIsAlternating) {
  for (int d : {2, 8, 32}) {
    const auto pe = positional_embedding(0, d);
    for (int i = 0; i < d; ++i) EXPECT_EQ(pe[static_cast<std::size_t>(i)], i % 2 == 0 ? 0.0 : 1.0);
  }
}

TEST(PositionalEmbedding, ValueOneWidthFour) {
  const auto pe = positional_embedding(1, 4);
  ASSERT_EQ(pe.size(), 4u);
  EXPECT_NEAR(pe[0], std::sin(1.0), 1e-15);
  EXPECT_NEAR(pe[1], std::cos(1.0 / std::pow(10000.0, 0.25)), 1e-15);
  EXPECT_NEAR(pe[2], std::sin(1.0 / std::pow(10000.0, 0.5)), 1e-15);
  EXPECT_NEAR(pe[3], std::cos(1.0 / std::pow(10000.0, 0.75)), 1e-15);
}

TEST(PositionalEmbedding, PureAndBounded) {
  for (long v = 0; v < 500; v += 7) {
    const auto a = positional_embedding(v, 32);
    EXPECT_EQ(a, positional_embedding(v, 32));
    for (double x : a) {
      EXPECT_LE(x, 1.0);
      EXPECT_GE(x, -1.0);
    }
  }
}

TEST(PositionalEmbedding, OddWidthRejected) { EXPECT_THROW(positional_embedding(3, 5), ConfigError); }

TEST(Bundles, TwoNodeGraph) {
  const Edge e[] = {{0, 1, 1.0}};
  const auto b = build_bundles(make_graph(2, e, 0), 4, 2);
  EXPECT_EQ(b[0].adjacency_row, (std::vector<double>{0, 1, 0, 0}));
  EXPECT_EQ(b[1].adjacency_row, (std::vector<double>{1, 0, 0, 0}));
  EXPECT_EQ(b[0].degree, 1);
  EXPECT_TRUE(b[0].raw_attr.empty());
}

TEST(Bundles, IsolatedNodeHasZeroRow) {
  const Edge e[] = {{0, 1, 1.0}};
  const auto b = build_bundles(make_graph(3, e, 0), 3, 2);
  EXPECT_EQ(b[2].adjacency_row, (std::vector<double>{0, 0, 0}));
}

TEST(Bundles, TruncatedRowIsPrefix) {
  const GraphInstance& g = *std::max_element(mutag().graphs.begin(), mutag().graphs.end(),
                                              [](const auto& a, const auto& b) { return a.node_count < b.node_count; });
  const auto full = build_bundles(g, g.node_count, 2);
  const auto cut = build_bundles(g, 10, 2);
  for (std::size_t i = 0; i < full.size(); ++i) {
    ASSERT_EQ(cut[i].adjacency_row.size(), 10u);
    EXPECT_TRUE(std::equal(cut[i].adjacency_row.begin(), cut[i].adjacency_row.end(), full[i].adjacency_row.begin()));
  }
}

TEST(Bundles, CarryTagsAttributesAndWeights) {
  const Edge e[] = {{0, 1, 2.5}};
  GraphInstance g = make_graph(2, e, 0);
  g.node_tags = {4, 1};
  g.node_attributes = Matrix(2, 2);
  g.node_attributes << 1, 2, 3, 4;
  const auto b = build_bundles(g, 3, 2);
  EXPECT_EQ(b[0].adjacency_row, (std::vector<double>{0, 2.5, 0}));
  EXPECT_EQ(b[0].tag, 4);
  EXPECT_EQ(b[1].raw_attr, (std::vector<double>{3, 4}));
}

}  // namespace
}  // namespace segbert
