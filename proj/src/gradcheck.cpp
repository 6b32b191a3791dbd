// SPDX-License-Identifier: Apache-2.0
#include "segbert/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "segbert/features.hpp"
#include "segbert/training.hpp"

namespace segbert {

bool GradcheckReport::passed() const { return failures().empty(); }

std::vector<std::string> GradcheckReport::failures() const {
  std::vector<std::string> out;
  for (const auto& g : groups) {
    if (!(g.max_relative_error < threshold)) out.push_back(g.name);
  }
  return out;
}

GraphInstance gradcheck_toy_graph() {
  const Edge edges[] = {{0, 1, 1.0}, {1, 2, 1.0}, {2, 3, 1.0}, {3, 4, 1.0}, {4, 0, 1.0}, {1, 3, 1.0}};
  GraphInstance g = make_graph(5, edges, 1);
  g.node_tags = {0, 1, 2, 1, 0};
  g.node_attributes.resize(5, 3);
  g.node_attributes << 0.5, -0.2, 0.1,
                       0.3, 0.8, -0.4,
                       -0.6, 0.1, 0.9,
                       0.2, -0.7, 0.3,
                       0.9, 0.4, -0.1;
  return g;
}

namespace {

constexpr int kToyK = 3;

struct Problem {
  ModelConfig config;
  std::vector<SegmentInput> segments;
  Matrix structure_target;
  int label = 0;
};

Problem make_problem(const GradcheckOptions& o) {
  Problem p;
  const GraphInstance g = gradcheck_toy_graph();
  p.config.hidden = o.hidden;
  p.config.heads = o.heads;
  p.config.layers = o.layers;
  p.config.intermediate = o.intermediate;
  p.config.residual = o.residual;
  p.config.attr_dim = 3;
  p.config.adjacency_width = 6;
  p.config.class_count = 2;
  p.config.tag_vocab_size = 3;
  p.config.validate();
  const UnifyPlan plan{Strategy::kSegmentShifting, kToyK};
  const auto bundles = build_bundles(g, p.config.adjacency_width, 2);
  for (const Segment& s : unify(g, plan, bundles)) p.segments.push_back(prepare_segment(s, p.config));
  p.structure_target = g.weight_matrix();
  p.label = g.label;
  return p;
}

double loss_value(Tape& tape, ModelParams& params, const Problem& p, std::uint64_t dropout_seed, bool run_backward) {
  tape.reset();
  tape.reseed(dropout_seed);
  GraphOutput out = forward_graph(tape, params, p.config, p.segments);
  Tensor loss = classification_loss(out, p.label);
  loss = autodiff::add(loss, structure_loss(out, p.structure_target));
  loss = autodiff::add(loss, reconstruction_loss(tape, params, out, raw_target(p.segments, out.node_ids)));
  const double v = loss.value()(0, 0);
  if (run_backward) tape.backward(loss);
  return v;
}

}  // namespace

GradcheckReport run_gradcheck(const GradcheckOptions& options) {
  const Problem problem = make_problem(options);
  ModelParams params = init_params(problem.config, options.seed);
  // Larger weights than the default init so every path carries signal.
  std::mt19937_64 rng(options.seed + 1);
  std::normal_distribution<double> normal(0.0, 0.3);
  for (Parameter* prm : params.parameters()) {
    for (Index i = 0; i < prm->value.size(); ++i) prm->value.data()[i] += normal(rng);
  }

  const std::uint64_t dropout_seed = options.seed + 2;
  Tape tape(autodiff::Mode::kTrain, dropout_seed);
  if (options.fault) tape.inject_backward_fault(*options.fault, options.fault_scale);
  params.zero_grad();
  loss_value(tape, params, problem, dropout_seed, true);

  Tape probe(autodiff::Mode::kTrain, dropout_seed, /*record_grad=*/false);
  GradcheckReport report;
  report.threshold = options.threshold;
  for (Parameter* prm : params.parameters()) {
    GroupError group{prm->name, 0.0, static_cast<std::size_t>(prm->value.size())};
    for (Index i = 0; i < prm->value.size(); ++i) {
      double& x = prm->value.data()[i];
      const double saved = x;
      x = saved + options.step;
      const double plus = loss_value(probe, params, problem, dropout_seed, false);
      x = saved - options.step;
      const double minus = loss_value(probe, params, problem, dropout_seed, false);
      x = saved;
      const double numeric = (plus - minus) / (2.0 * options.step);
      const double analytic = prm->grad.data()[i];
      const double err = std::abs(analytic - numeric) / std::max(std::abs(analytic) + std::abs(numeric), 1e-6);
      group.max_relative_error = std::max(group.max_relative_error, err);
    }
    report.groups.push_back(std::move(group));
  }
  return report;
}

}  // namespace segbert
