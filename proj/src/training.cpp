// SPDX-License-Identifier: Apache-2.0
#include "segbert/training.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <iostream>
#include <mutex>
#include <numeric>
#include <random>
#include <thread>

#include "segbert/autodiff/adam.hpp"
#include "segbert/error.hpp"
#include "segbert/features.hpp"

namespace segbert {

namespace ad = autodiff;

std::string_view to_string(PretrainTask task) {
  return task == PretrainTask::kReconstruction ? "reconstruction" : "structure";
}

PretrainTask parse_pretrain_task(std::string_view text) {
  if (text == "reconstruction") return PretrainTask::kReconstruction;
  if (text == "structure") return PretrainTask::kStructure;
  throw ConfigError("unknown pretrain task '" + std::string(text) + "'");
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (early_stop_patience < 1) throw ConfigError("early-stop patience must be >= 1");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  if (weight_decay < 0.0) throw ConfigError("weight decay must be non-negative");
  if (pretrain_epochs < 0) throw ConfigError("pretrain epochs must be non-negative");
  if (refit_epochs < kRefitChosen) throw ConfigError("refit epochs must be -1 (chosen epoch count), 0 or positive");
  if (clip_norm < 0.0) throw ConfigError("clip norm must be non-negative");
  if (wl_iterations < 1) throw ConfigError("WL iterations must be >= 1");
  if (jobs < 1) throw ConfigError("jobs must be >= 1");
}

double default_learning_rate(std::string_view dataset_name) {
  return (dataset_name == "PTC" || dataset_name == "PTC_MR") ? 5e-4 : 1e-4;
}

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finalizer over the combined value.
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

int argmax(const Matrix& row) {
  Index best = 0;
  for (Index c = 1; c < row.cols(); ++c) {
    if (row(0, c) > row(0, best)) best = c;
  }
  return static_cast<int>(best);
}

Tensor mean_of(std::span<const Tensor> terms) {
  Tensor total = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) total = ad::add(total, terms[i]);
  return ad::scale(total, 1.0 / static_cast<double>(terms.size()));
}

/// One pass over `order` in shuffled mini-batches. Returns the mean loss.
template <typename GraphLoss>
double train_epoch(const Experiment& exp, ModelParams& params, ad::AdamState& adam, Tape& tape,
                   std::vector<int>& order, const TrainConfig& config, std::mt19937_64& rng, GraphLoss&& graph_loss) {
  std::shuffle(order.begin(), order.end(), rng);
  auto plist = params.parameters();
  double loss_sum = 0.0;
  const std::size_t batch = static_cast<std::size_t>(config.batch_size);
  for (std::size_t start = 0; start < order.size(); start += batch) {
    const std::size_t end = std::min(order.size(), start + batch);
    tape.reset();
    params.zero_grad();
    std::vector<Tensor> losses;
    losses.reserve(end - start);
    for (std::size_t i = start; i < end; ++i) {
      const PreparedGraph& g = exp.graphs[static_cast<std::size_t>(order[i])];
      GraphOutput out = forward_graph(tape, params, exp.model, g.segments);
      losses.push_back(graph_loss(tape, out, g));
    }
    Tensor loss = mean_of(losses);
    loss_sum += loss.value()(0, 0) * static_cast<double>(end - start);
    tape.backward(loss);
    if (config.clip_norm > 0.0) ad::clip_grad_norm(plist, config.clip_norm);
    ad::adam_step(plist, adam);
  }
  return order.empty() ? 0.0 : loss_sum / static_cast<double>(order.size());
}

ad::AdamConfig adam_config(const TrainConfig& config) {
  ad::AdamConfig c;
  c.learning_rate = config.learning_rate;
  c.weight_decay = config.weight_decay;
  return c;
}

}  // namespace

ModelConfig make_model_config(const GraphDataset& dataset, const UnifyPlan& plan, const ModelConfig& hyper) {
  ModelConfig c = hyper;
  c.attr_dim = dataset.attr_dim;
  c.adjacency_width = default_adjacency_width(dataset, plan);
  c.class_count = dataset.class_count;
  c.tag_vocab_size = dataset.tag_vocab_size;
  c.validate();
  return c;
}

Experiment prepare_experiment(const GraphDataset& dataset, const UnifyPlan& plan, const ModelConfig& hyper,
                              int wl_iterations) {
  Experiment exp;
  exp.dataset_name = dataset.name;
  exp.plan = plan;
  exp.model = make_model_config(dataset, plan, hyper);
  const auto codes = compute_wl_codes(dataset.graphs, wl_iterations);
  exp.graphs.reserve(dataset.graphs.size());
  for (std::size_t gi = 0; gi < dataset.graphs.size(); ++gi) {
    const GraphInstance& g = dataset.graphs[gi];
    const auto bundles = build_bundles(g, exp.model.adjacency_width, codes[gi]);
    PreparedGraph pg;
    pg.label = g.label;
    for (const Segment& seg : unify(g, plan, bundles)) {
      pg.segments.push_back(prepare_segment(seg, exp.model));
      for (std::size_t s = 0; s < seg.node_ids.size(); ++s) {
        if (seg.real_mask[s]) pg.node_ids.push_back(seg.node_ids[s]);
      }
    }
    std::sort(pg.node_ids.begin(), pg.node_ids.end());
    const Matrix w = g.weight_matrix();
    const auto n = static_cast<Index>(pg.node_ids.size());
    pg.structure_target.resize(n, n);
    for (Index i = 0; i < n; ++i) {
      for (Index j = 0; j < n; ++j) pg.structure_target(i, j) = w(pg.node_ids[static_cast<std::size_t>(i)], pg.node_ids[static_cast<std::size_t>(j)]);
    }
    exp.graphs.push_back(std::move(pg));
  }
  return exp;
}

Tensor classification_loss(const GraphOutput& out, int label) {
  const int target[] = {label};
  return ad::cross_entropy(out.logits, target);
}

Tensor structure_loss(const GraphOutput& out, const Matrix& weight_target) {
  Tape& tape = *out.h_final.tape();
  return ad::mse(recover_structure(out.h_final), tape.constant(weight_target));
}

Tensor reconstruction_loss(Tape& tape, ModelParams& params, const GraphOutput& out, const Matrix& raw) {
  return ad::mse(reconstruct_attributes(tape, params, out.h_final), tape.constant(raw));
}

ModelParams pretrain(const Experiment& exp, const TrainConfig& config, ModelParams params, PretrainReport* report) {
  config.validate();
  bool use_structure = false;
  bool use_reconstruction = false;
  for (PretrainTask t : config.pretrain_tasks) {
    if (t == PretrainTask::kStructure) use_structure = true;
    if (t == PretrainTask::kReconstruction) {
      if (exp.model.attr_dim > 0) {
        use_reconstruction = true;
      } else {
        std::cerr << "warning: " << exp.dataset_name << " has no node attributes; skipping reconstruction pre-training\n";
      }
    }
  }
  if (!use_structure && !use_reconstruction) throw ConfigError("pre-training needs at least one usable task");

  const std::uint64_t seed = mix_seed(config.seed, 0xC0FFEE);
  auto plist = params.parameters();
  ad::AdamState adam = ad::make_adam_state(plist, adam_config(config));
  std::mt19937_64 rng(seed);
  Tape tape(ad::Mode::kTrain, seed + 1);
  std::vector<int> order(exp.graphs.size());
  std::iota(order.begin(), order.end(), 0);

  auto graph_loss = [&](Tape& tp, const GraphOutput& out, const PreparedGraph& g) {
    std::vector<Tensor> terms;
    if (use_structure) terms.push_back(structure_loss(out, g.structure_target));
    if (use_reconstruction) terms.push_back(reconstruction_loss(tp, params, out, raw_target(g.segments, out.node_ids)));
    Tensor total = terms.front();
    for (std::size_t i = 1; i < terms.size(); ++i) total = ad::add(total, terms[i]);
    return total;
  };
  for (int epoch = 0; epoch < config.pretrain_epochs; ++epoch) {
    const double loss = train_epoch(exp, params, adam, tape, order, config, rng, graph_loss);
    if (report) report->epoch_loss.push_back(loss);
  }
  params.zero_grad();
  return params;
}

double evaluate_accuracy(const Experiment& exp, ModelParams& params, std::span<const int> indices) {
  if (indices.empty()) return 0.0;
  Tape tape(ad::Mode::kEval, 0, /*record_grad=*/false);
  int correct = 0;
  for (int idx : indices) {
    tape.reset();
    const PreparedGraph& g = exp.graphs[static_cast<std::size_t>(idx)];
    GraphOutput out = forward_graph(tape, params, exp.model, g.segments);
    if (argmax(out.logits.value()) == g.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(indices.size());
}

FoldReport finetune_fold(const Experiment& exp, const FoldSplit& split, const TrainConfig& config,
                         const ModelParams* init, ModelParams* final_params) {
  config.validate();
  const auto start_time = std::chrono::steady_clock::now();
  const std::uint64_t fold_seed = mix_seed(config.seed, static_cast<std::uint64_t>(split.fold_index) + 1);

  {
    std::vector<bool> present(static_cast<std::size_t>(exp.model.class_count), false);
    for (int idx : split.train) present[static_cast<std::size_t>(exp.graphs[static_cast<std::size_t>(idx)].label)] = true;
    for (std::size_t c = 0; c < present.size(); ++c) {
      if (!present[c]) {
        std::cerr << "warning: fold " << split.fold_index << ": class " << c << " absent from the training split\n";
      }
    }
  }

  ModelParams params = init ? *init : init_params(exp.model, fold_seed);
  params.zero_grad();
  ad::AdamState adam = ad::make_adam_state(params.parameters(), adam_config(config));
  std::mt19937_64 rng(fold_seed);
  Tape tape(ad::Mode::kTrain, fold_seed ^ 0x5DEECE66DULL);

  auto ce_loss = [](Tape&, const GraphOutput& out, const PreparedGraph& g) { return classification_loss(out, g.label); };

  FoldReport report;
  report.fold_index = split.fold_index;
  std::vector<int> order = split.train;
  double best_val = -1.0;
  int since_best = 0;
  ModelParams best_params = params;
  ad::AdamState best_adam = adam;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = train_epoch(exp, params, adam, tape, order, config, rng, ce_loss);
    rec.train_acc = evaluate_accuracy(exp, params, split.train);
    rec.val_acc = evaluate_accuracy(exp, params, split.validation);
    rec.test_acc = evaluate_accuracy(exp, params, split.test);
    report.epochs.push_back(rec);
    if (rec.val_acc > best_val) {
      best_val = rec.val_acc;
      report.chosen_epoch = epoch;
      report.selected_test_accuracy = rec.test_acc;
      best_params = params;
      best_adam = adam;
      since_best = 0;
    } else if (++since_best >= config.early_stop_patience) {
      break;
    }
  }

  params = std::move(best_params);
  report.test_accuracy = report.selected_test_accuracy;
  const int refit = config.refit_epochs == kRefitChosen ? report.chosen_epoch : config.refit_epochs;
  report.refit_epochs = refit;
  if (refit > 0) {
    adam = std::move(best_adam);
    std::vector<int> combined = split.train;
    combined.insert(combined.end(), split.validation.begin(), split.validation.end());
    std::sort(combined.begin(), combined.end());
    for (int e = 0; e < refit; ++e) train_epoch(exp, params, adam, tape, combined, config, rng, ce_loss);
    report.test_accuracy = evaluate_accuracy(exp, params, split.test);
  }
  params.zero_grad();
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_time).count();
  if (final_params) *final_params = std::move(params);
  return report;
}

RunSummary summarize(const Experiment& exp, std::span<const FoldReport> folds) {
  RunSummary s;
  s.dataset = exp.dataset_name;
  s.strategy = exp.plan.strategy;
  s.k = exp.plan.k;
  s.residual = exp.model.residual;
  if (folds.empty()) return s;
  const double n = static_cast<double>(folds.size());
  double sum = 0.0;
  double secs = 0.0;
  for (const auto& f : folds) {
    sum += f.test_accuracy;
    secs += f.seconds;
  }
  s.mean_accuracy = sum / n;
  double sq = 0.0;
  for (const auto& f : folds) sq += (f.test_accuracy - s.mean_accuracy) * (f.test_accuracy - s.mean_accuracy);
  s.std_accuracy = std::sqrt(sq / n);
  s.mean_fold_seconds = secs / n;
  return s;
}

CvResult run_cv(const Experiment& exp, std::span<const FoldSplit> splits, const TrainConfig& config,
                const ModelParams* init) {
  config.validate();
  CvResult result;
  result.folds.resize(splits.size());
  result.fold_params.resize(splits.size());
  std::vector<std::exception_ptr> errors(splits.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < splits.size(); i = next++) {
      try {
        result.folds[i] = finetune_fold(exp, splits[i], config, init, &result.fold_params[i]);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const int threads = std::min<int>(config.jobs, static_cast<int>(splits.size()));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (std::size_t i = 0; i < errors.size(); ++i) {
    if (!errors[i]) continue;
    try {
      std::rethrow_exception(errors[i]);
    } catch (const std::exception& e) {
      throw Error("fold " + std::to_string(splits[i].fold_index) + " failed: " + e.what());
    }
  }
  result.summary = summarize(exp, result.folds);
  return result;
}

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::ofstream open_csv(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  return out;
}

}  // namespace

void write_fold_csv(const std::filesystem::path& path, const FoldReport& report) {
  std::ofstream out = open_csv(path);
  out << "epoch,train_loss,train_acc,val_acc,test_acc\n";
  for (const auto& r : report.epochs) {
    out << r.epoch << ',' << fmt_double(r.train_loss) << ',' << fmt_double(r.train_acc) << ','
        << fmt_double(r.val_acc) << ',' << fmt_double(r.test_acc) << '\n';
  }
}

void write_summary_csv(const std::filesystem::path& path, const RunSummary& s, std::span<const FoldReport> folds) {
  std::ofstream out = open_csv(path);
  const std::string prefix =
      s.dataset + ',' + std::string(to_string(s.strategy)) + ',' + std::to_string(s.k) + ',' + std::string(to_string(s.residual)) + ',';
  out << "dataset,strategy,k,residual_mode,fold,chosen_epoch,test_accuracy\n";
  for (const auto& f : folds) {
    out << prefix << f.fold_index << ',' << f.chosen_epoch << ',' << fmt_double(f.test_accuracy) << '\n';
  }
  out << prefix << "mean,," << fmt_double(s.mean_accuracy) << '\n';
  out << prefix << "std,," << fmt_double(s.std_accuracy) << '\n';
}

void write_timing_csv(const std::filesystem::path& path, std::span<const FoldReport> folds) {
  std::ofstream out = open_csv(path);
  out << "fold,seconds\n";
  double total = 0.0;
  for (const auto& f : folds) {
    out << f.fold_index << ',' << fmt_double(f.seconds) << '\n';
    total += f.seconds;
  }
  out << "mean," << fmt_double(folds.empty() ? 0.0 : total / static_cast<double>(folds.size())) << '\n';
}

}  // namespace segbert
