// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "segbert/autodiff/tape.hpp"
#include "segbert/unify.hpp"

namespace segbert {

using autodiff::Parameter;
using autodiff::Tape;
using autodiff::Tensor;

/// Graph residual term added after every transformer layer.
enum class ResidualMode { kNone, kRaw };

std::string_view to_string(ResidualMode mode);
ResidualMode parse_residual_mode(std::string_view text);

struct ModelConfig {
  int hidden = 32;
  int heads = 2;
  int layers = 2;
  int intermediate = 32;
  double dropout_hidden = 0.5;
  double dropout_attn = 0.3;
  ResidualMode residual = ResidualMode::kNone;
  int attr_dim = 0;
  int adjacency_width = 1;
  int class_count = 2;
  /// Non-zero when nodes carry discrete tags, which are then embedded with
  /// the sinusoidal table.
  int tag_vocab_size = 0;

  /// Width of the raw per-node input: attributes if any, else adjacency rows.
  int raw_width() const { return attr_dim > 0 ? attr_dim : adjacency_width; }
  /// Throws ConfigError on non-positive dims, bad rates, or hidden % heads.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct LayerParams {
  Parameter query_weight, query_bias;
  Parameter key_weight, key_bias;
  Parameter value_weight, value_bias;
  Parameter output_weight, output_bias;
  Parameter attn_norm_gamma, attn_norm_beta;
  Parameter ffn_in_weight, ffn_in_bias;
  Parameter ffn_out_weight, ffn_out_bias;
  Parameter ffn_norm_gamma, ffn_norm_beta;
};

/// All trainable tensors. Value type: copying deep-copies every matrix.
///
/// Checkpoint names:
///   embed.attr.{weight,bias}            (only when attr_dim > 0)
///   embed.adj.fc1.{weight,bias}, embed.adj.fc2.{weight,bias}
///   layer<l>.attn.{query,key,value,output}.{weight,bias}
///   layer<l>.attn_norm.{gamma,beta}
///   layer<l>.ffn.{in,out}.{weight,bias}
///   layer<l>.ffn_norm.{gamma,beta}
///   residual.{weight,bias}              (only in raw residual mode)
///   classifier.{weight,bias}
///   reconstruct.{weight,bias}
struct ModelParams {
  Parameter attr_weight, attr_bias;
  Parameter adj_fc1_weight, adj_fc1_bias;
  Parameter adj_fc2_weight, adj_fc2_bias;
  std::vector<LayerParams> layers;
  Parameter residual_weight, residual_bias;
  Parameter classifier_weight, classifier_bias;
  Parameter reconstruct_weight, reconstruct_bias;

  /// Every present parameter in a fixed order.
  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  void zero_grad();
};

/// Weights ~ normal(0, 0.02) truncated at two standard deviations, biases 0,
/// layer-norm gains 1.
ModelParams init_params(const ModelConfig& config, std::uint64_t seed);

/// Dense, model-ready form of one segment.
struct SegmentInput {
  /// Sum of the fixed sinusoidal channels (degree, WL code, tag) per slot.
  Matrix fixed_embedding;
  Matrix adjacency;
  Matrix attributes;
  std::vector<int> node_ids;
  std::vector<bool> real_mask;

  /// Residual source: attributes when present, adjacency rows otherwise.
  const Matrix& raw() const { return attributes.cols() > 0 ? attributes : adjacency; }
};

SegmentInput prepare_segment(const Segment& segment, const ModelConfig& config);

struct GraphOutput {
  /// Real-node rows of the last layer, ordered by node id.
  Tensor h_final;
  /// Node id of each row of h_final.
  std::vector<int> node_ids;
  /// Mean of h_final rows (1 x hidden).
  Tensor z;
  Tensor logits;
  /// softmax(logits), 1 x class_count.
  Tensor y_hat;
};

/// h0 = e(x) + e(w) + e(d) + e(r) for every slot of the segment.
Tensor initial_embedding(Tape& tape, ModelParams& params, const ModelConfig& config, const SegmentInput& input);

/// Post-norm transformer block followed by the optional raw residual term.
Tensor transformer_layer(Tape& tape, ModelParams& params, const ModelConfig& config, int layer, const Tensor& h,
                         const Tensor& raw);

/// Runs every segment through the shared layers, gathers real nodes and
/// fuses them. Dropout follows the tape mode.
GraphOutput forward_graph(Tape& tape, ModelParams& params, const ModelConfig& config,
                          std::span<const SegmentInput> segments);

/// Per-node linear projection of h_final back to the raw input width.
Tensor reconstruct_attributes(Tape& tape, ModelParams& params, const Tensor& h_final);

/// Pairwise cosine similarity of h_final rows.
Tensor recover_structure(const Tensor& h_final);

/// Raw input rows of the given nodes, gathered from the segments.
Matrix raw_target(std::span<const SegmentInput> segments, std::span<const int> node_ids);

}  // namespace segbert
