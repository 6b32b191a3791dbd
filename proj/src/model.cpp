// SPDX-License-Identifier: Apache-2.0
#include "segbert/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "segbert/error.hpp"
#include "segbert/features.hpp"

namespace segbert {

namespace ad = autodiff;

std::string_view to_string(ResidualMode mode) { return mode == ResidualMode::kRaw ? "raw" : "none"; }

ResidualMode parse_residual_mode(std::string_view text) {
  if (text == "none") return ResidualMode::kNone;
  if (text == "raw") return ResidualMode::kRaw;
  throw ConfigError("unknown residual mode '" + std::string(text) + "'");
}

void ModelConfig::validate() const {
  if (hidden <= 0 || heads <= 0 || layers <= 0 || intermediate <= 0) {
    throw ConfigError("model dimensions must be positive");
  }
  if (hidden % heads != 0) {
    throw ConfigError("hidden size " + std::to_string(hidden) + " not divisible by " + std::to_string(heads) + " heads");
  }
  if (hidden % 2 != 0) throw ConfigError("hidden size must be even for the sinusoidal embeddings");
  if (!(dropout_hidden >= 0.0 && dropout_hidden < 1.0) || !(dropout_attn >= 0.0 && dropout_attn < 1.0)) {
    throw ConfigError("dropout rates must lie in [0, 1)");
  }
  if (attr_dim < 0 || adjacency_width <= 0 || class_count <= 0 || tag_vocab_size < 0) {
    throw ConfigError("input/output dimensions must be positive");
  }
}

namespace {

Matrix truncated_normal(Index rows, Index cols, std::mt19937_64& rng) {
  constexpr double kStd = 0.02;
  std::normal_distribution<double> normal(0.0, kStd);
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) {
    double v = normal(rng);
    while (std::abs(v) > 2.0 * kStd) v = normal(rng);
    m.data()[i] = v;
  }
  return m;
}

struct Init {
  std::mt19937_64 rng;

  Parameter weight(std::string name, Index in, Index out) { return Parameter(std::move(name), truncated_normal(in, out, rng)); }
  static Parameter zeros(std::string name, Index cols) { return Parameter(std::move(name), Matrix::Zero(1, cols)); }
  static Parameter ones(std::string name, Index cols) { return Parameter(std::move(name), Matrix::Ones(1, cols)); }
};

template <typename Params, typename Out>
void collect(Params& p, std::vector<Out>& out) {
  auto push = [&](auto& param) {
    if (param.value.size() > 0) out.push_back(&param);
  };
  push(p.attr_weight);
  push(p.attr_bias);
  push(p.adj_fc1_weight);
  push(p.adj_fc1_bias);
  push(p.adj_fc2_weight);
  push(p.adj_fc2_bias);
  for (auto& l : p.layers) {
    for (auto* q : {&l.query_weight, &l.query_bias, &l.key_weight, &l.key_bias, &l.value_weight, &l.value_bias,
                    &l.output_weight, &l.output_bias, &l.attn_norm_gamma, &l.attn_norm_beta, &l.ffn_in_weight,
                    &l.ffn_in_bias, &l.ffn_out_weight, &l.ffn_out_bias, &l.ffn_norm_gamma, &l.ffn_norm_beta}) {
      push(*q);
    }
  }
  push(p.residual_weight);
  push(p.residual_bias);
  push(p.classifier_weight);
  push(p.classifier_bias);
  push(p.reconstruct_weight);
  push(p.reconstruct_bias);
}

Tensor linear(Tape& tape, const Tensor& x, Parameter& weight, Parameter& bias) {
  return ad::add_row(ad::matmul(x, tape.parameter(weight)), tape.parameter(bias));
}

}  // namespace

std::vector<Parameter*> ModelParams::parameters() {
  std::vector<Parameter*> out;
  collect(*this, out);
  return out;
}

std::vector<const Parameter*> ModelParams::parameters() const {
  std::vector<const Parameter*> out;
  collect(*this, out);
  return out;
}

void ModelParams::zero_grad() {
  for (Parameter* p : parameters()) p->zero_grad();
}

ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Init init{std::mt19937_64(seed)};
  const Index h = config.hidden;
  ModelParams p;
  if (config.attr_dim > 0) {
    p.attr_weight = init.weight("embed.attr.weight", config.attr_dim, h);
    p.attr_bias = Init::zeros("embed.attr.bias", h);
  }
  p.adj_fc1_weight = init.weight("embed.adj.fc1.weight", config.adjacency_width, h);
  p.adj_fc1_bias = Init::zeros("embed.adj.fc1.bias", h);
  p.adj_fc2_weight = init.weight("embed.adj.fc2.weight", h, h);
  p.adj_fc2_bias = Init::zeros("embed.adj.fc2.bias", h);
  for (int l = 0; l < config.layers; ++l) {
    const std::string pre = "layer" + std::to_string(l) + ".";
    LayerParams lp;
    lp.query_weight = init.weight(pre + "attn.query.weight", h, h);
    lp.query_bias = Init::zeros(pre + "attn.query.bias", h);
    lp.key_weight = init.weight(pre + "attn.key.weight", h, h);
    lp.key_bias = Init::zeros(pre + "attn.key.bias", h);
    lp.value_weight = init.weight(pre + "attn.value.weight", h, h);
    lp.value_bias = Init::zeros(pre + "attn.value.bias", h);
    lp.output_weight = init.weight(pre + "attn.output.weight", h, h);
    lp.output_bias = Init::zeros(pre + "attn.output.bias", h);
    lp.attn_norm_gamma = Init::ones(pre + "attn_norm.gamma", h);
    lp.attn_norm_beta = Init::zeros(pre + "attn_norm.beta", h);
    lp.ffn_in_weight = init.weight(pre + "ffn.in.weight", h, config.intermediate);
    lp.ffn_in_bias = Init::zeros(pre + "ffn.in.bias", config.intermediate);
    lp.ffn_out_weight = init.weight(pre + "ffn.out.weight", config.intermediate, h);
    lp.ffn_out_bias = Init::zeros(pre + "ffn.out.bias", h);
    lp.ffn_norm_gamma = Init::ones(pre + "ffn_norm.gamma", h);
    lp.ffn_norm_beta = Init::zeros(pre + "ffn_norm.beta", h);
    p.layers.push_back(std::move(lp));
  }
  if (config.residual == ResidualMode::kRaw) {
    p.residual_weight = init.weight("residual.weight", config.raw_width(), h);
    p.residual_bias = Init::zeros("residual.bias", h);
  }
  p.classifier_weight = init.weight("classifier.weight", h, config.class_count);
  p.classifier_bias = Init::zeros("classifier.bias", config.class_count);
  p.reconstruct_weight = init.weight("reconstruct.weight", h, config.raw_width());
  p.reconstruct_bias = Init::zeros("reconstruct.bias", config.raw_width());
  return p;
}

SegmentInput prepare_segment(const Segment& segment, const ModelConfig& config) {
  const Index k = segment.slot_count();
  SegmentInput in;
  in.fixed_embedding = Matrix::Zero(k, config.hidden);
  in.adjacency = Matrix::Zero(k, config.adjacency_width);
  in.attributes = Matrix::Zero(k, config.attr_dim);
  in.node_ids = segment.node_ids;
  in.real_mask = segment.real_mask;
  for (Index s = 0; s < k; ++s) {
    const NodeFeatureBundle& b = segment.bundles[static_cast<std::size_t>(s)];
    if (static_cast<int>(b.adjacency_row.size()) != config.adjacency_width ||
        static_cast<int>(b.raw_attr.size()) != config.attr_dim) {
      throw ConfigError("feature bundle dims do not match the model config");
    }
    const auto degree = positional_embedding(b.degree, config.hidden);
    const auto role = positional_embedding(b.wl_code, config.hidden);
    for (Index c = 0; c < config.hidden; ++c) {
      in.fixed_embedding(s, c) = degree[static_cast<std::size_t>(c)] + role[static_cast<std::size_t>(c)];
    }
    if (config.tag_vocab_size > 0 && segment.real_mask[static_cast<std::size_t>(s)]) {
      const auto tag = positional_embedding(b.tag, config.hidden);
      for (Index c = 0; c < config.hidden; ++c) in.fixed_embedding(s, c) += tag[static_cast<std::size_t>(c)];
    }
    for (Index c = 0; c < config.adjacency_width; ++c) in.adjacency(s, c) = b.adjacency_row[static_cast<std::size_t>(c)];
    for (Index c = 0; c < config.attr_dim; ++c) in.attributes(s, c) = b.raw_attr[static_cast<std::size_t>(c)];
  }
  return in;
}

Tensor initial_embedding(Tape& tape, ModelParams& params, const ModelConfig& config, const SegmentInput& input) {
  if (input.adjacency.cols() != config.adjacency_width || input.attributes.cols() != config.attr_dim ||
      input.fixed_embedding.cols() != config.hidden) {
    throw ShapeError("initial_embedding: segment input does not match the model config");
  }
  Tensor adj = tape.constant(input.adjacency);
  Tensor e_w = linear(tape, ad::gelu(linear(tape, adj, params.adj_fc1_weight, params.adj_fc1_bias)),
                      params.adj_fc2_weight, params.adj_fc2_bias);
  Tensor h = ad::add(e_w, tape.constant(input.fixed_embedding));
  if (config.attr_dim > 0) {
    Tensor e_x = linear(tape, tape.constant(input.attributes), params.attr_weight, params.attr_bias);
    h = ad::add(h, e_x);
  }
  return h;
}

Tensor transformer_layer(Tape& tape, ModelParams& params, const ModelConfig& config, int layer, const Tensor& h,
                         const Tensor& raw) {
  if (layer < 0 || layer >= static_cast<int>(params.layers.size())) throw ConfigError("layer index out of range");
  LayerParams& lp = params.layers[static_cast<std::size_t>(layer)];
  const Index head_dim = config.hidden / config.heads;
  const double score_scale = 1.0 / std::sqrt(static_cast<double>(head_dim));

  Tensor q = linear(tape, h, lp.query_weight, lp.query_bias);
  Tensor k = linear(tape, h, lp.key_weight, lp.key_bias);
  Tensor v = linear(tape, h, lp.value_weight, lp.value_bias);
  std::vector<Tensor> contexts;
  contexts.reserve(static_cast<std::size_t>(config.heads));
  for (int head = 0; head < config.heads; ++head) {
    const Index start = head * head_dim;
    Tensor qh = config.heads == 1 ? q : ad::slice_cols(q, start, head_dim);
    Tensor kh = config.heads == 1 ? k : ad::slice_cols(k, start, head_dim);
    Tensor vh = config.heads == 1 ? v : ad::slice_cols(v, start, head_dim);
    Tensor scores = ad::scale(ad::matmul(qh, ad::transpose(kh)), score_scale);
    Tensor attn = ad::dropout(ad::softmax_rows(scores), config.dropout_attn);
    contexts.push_back(ad::matmul(attn, vh));
  }
  Tensor context = contexts.size() == 1 ? contexts.front() : ad::concat_cols(contexts);
  Tensor attn_out = ad::dropout(linear(tape, context, lp.output_weight, lp.output_bias), config.dropout_hidden);
  Tensor h1 = ad::layer_norm(ad::add(h, attn_out), tape.parameter(lp.attn_norm_gamma), tape.parameter(lp.attn_norm_beta));

  Tensor ffn = linear(tape, ad::gelu(linear(tape, h1, lp.ffn_in_weight, lp.ffn_in_bias)), lp.ffn_out_weight,
                      lp.ffn_out_bias);
  ffn = ad::dropout(ffn, config.dropout_hidden);
  Tensor out = ad::layer_norm(ad::add(h1, ffn), tape.parameter(lp.ffn_norm_gamma), tape.parameter(lp.ffn_norm_beta));

  if (config.residual == ResidualMode::kRaw) {
    out = ad::add(out, linear(tape, raw, params.residual_weight, params.residual_bias));
  }
  return out;
}

GraphOutput forward_graph(Tape& tape, ModelParams& params, const ModelConfig& config,
                          std::span<const SegmentInput> segments) {
  std::vector<Tensor> outputs;
  std::vector<std::pair<int, Index>> real_rows;  // (node id, row in the stacked output)
  Index offset = 0;
  for (const SegmentInput& seg : segments) {
    Tensor h = initial_embedding(tape, params, config, seg);
    Tensor raw = tape.constant(seg.raw());
    for (int l = 0; l < config.layers; ++l) h = transformer_layer(tape, params, config, l, h, raw);
    outputs.push_back(h);
    for (std::size_t s = 0; s < seg.node_ids.size(); ++s) {
      if (seg.real_mask[s]) real_rows.emplace_back(seg.node_ids[s], offset + static_cast<Index>(s));
    }
    offset += h.rows();
  }
  if (real_rows.empty()) throw ConfigError("forward_graph: graph has no real nodes");
  std::sort(real_rows.begin(), real_rows.end());

  GraphOutput out;
  std::vector<Index> rows;
  rows.reserve(real_rows.size());
  for (const auto& [node, row] : real_rows) {
    out.node_ids.push_back(node);
    rows.push_back(row);
  }
  Tensor stacked = outputs.size() == 1 ? outputs.front() : ad::concat_rows(outputs);
  out.h_final = ad::gather_rows(stacked, rows);
  out.z = ad::mean_rows(out.h_final);
  out.logits = linear(tape, out.z, params.classifier_weight, params.classifier_bias);
  out.y_hat = ad::softmax_rows(out.logits);
  return out;
}

Tensor reconstruct_attributes(Tape& tape, ModelParams& params, const Tensor& h_final) {
  return linear(tape, h_final, params.reconstruct_weight, params.reconstruct_bias);
}

Tensor recover_structure(const Tensor& h_final) { return ad::cosine_similarity(h_final); }

Matrix raw_target(std::span<const SegmentInput> segments, std::span<const int> node_ids) {
  if (segments.empty()) throw ConfigError("raw_target: no segments");
  Matrix out(static_cast<Index>(node_ids.size()), segments.front().raw().cols());
  for (std::size_t i = 0; i < node_ids.size(); ++i) {
    bool found = false;
    for (const SegmentInput& seg : segments) {
      auto it = std::find(seg.node_ids.begin(), seg.node_ids.end(), node_ids[i]);
      if (it != seg.node_ids.end()) {
        out.row(static_cast<Index>(i)) = seg.raw().row(it - seg.node_ids.begin());
        found = true;
        break;
      }
    }
    if (!found) throw ConfigError("raw_target: node " + std::to_string(node_ids[i]) + " not in any segment");
  }
  return out;
}

}  // namespace segbert
