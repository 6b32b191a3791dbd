// SPDX-License-Identifier: Apache-2.0
#include "segbert/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>

#include "segbert/checkpoint.hpp"
#include "segbert/dataset.hpp"
#include "segbert/error.hpp"
#include "segbert/gradcheck.hpp"
#include "segbert/run_config.hpp"
#include "segbert/training.hpp"

namespace segbert {

namespace fs = std::filesystem;

namespace {

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

/// Flag values for `train`; only those actually given override the config file.
struct TrainFlags {
  std::string config;
  std::string dataset, data_dir, strategy, residual, out, checkpoint, pretrain;
  int k = 0, epochs = 0, jobs = 0, refit = 0;
  double lr = 0.0;
  std::uint64_t seed = 0;
};

struct TrainOptions {
  CLI::Option *dataset, *data_dir, *strategy, *residual, *out, *checkpoint, *pretrain;
  CLI::Option *k, *epochs, *jobs, *refit, *lr, *seed;
};

fs::path resolve_data_dir(const RunConfig& c) {
  if (!c.data_dir.empty()) return c.data_dir;
  if (const char* env = std::getenv("SEGBERT_DATA_DIR"); env && *env) return env;
  return "data";
}

GraphDataset load_named(const fs::path& data_dir, const std::string& name) {
  const fs::path dir = data_dir / name;
  if (!fs::is_directory(dir)) throw DatasetError("dataset directory not found: " + dir.string());
  return load_tu_dataset(dir, name);
}

RunConfig merge(const TrainFlags& f, const TrainOptions& o) {
  RunConfig c;
  if (!f.config.empty()) c = load_run_config(f.config);
  if (o.dataset->count()) c.dataset = f.dataset;
  if (o.data_dir->count()) c.data_dir = f.data_dir;
  if (o.strategy->count()) c.strategy = parse_strategy(f.strategy);
  if (o.residual->count()) c.model.residual = parse_residual_mode(f.residual);
  if (o.out->count()) c.out_dir = f.out;
  if (o.checkpoint->count()) c.checkpoint = f.checkpoint;
  if (o.k->count()) c.k = f.k;
  if (o.epochs->count()) c.train.epochs = f.epochs;
  if (o.jobs->count()) c.train.jobs = f.jobs;
  if (o.refit->count()) c.train.refit_epochs = f.refit;
  if (o.lr->count()) c.learning_rate = f.lr;
  if (o.seed->count()) c.train.seed = f.seed;
  if (o.pretrain->count()) c = parse_run_config("pretrain_tasks=" + f.pretrain, c);
  return c;
}

int cmd_train(RunConfig config, std::ostream& out) {
  const fs::path data_dir = resolve_data_dir(config);
  const GraphDataset dataset = load_named(data_dir, config.dataset);

  config.k = resolve_k(dataset, config.strategy, config.k);
  if (!config.learning_rate) config.learning_rate = default_learning_rate(dataset.name);
  TrainConfig train = config.train;
  train.learning_rate = *config.learning_rate;
  train.validate();
  const UnifyPlan plan{config.strategy, *config.k};

  const fs::path out_dir = config.out_dir;
  fs::create_directories(out_dir);
  {
    std::ofstream echo(out_dir / "config_echo");
    echo << serialize(config);
  }

  out << dataset.name << ": " << dataset.graphs.size() << " graphs, strategy " << to_string(plan.strategy)
      << ", k " << plan.k << ", residual " << to_string(config.model.residual) << '\n';
  const Experiment exp = prepare_experiment(dataset, plan, config.model, train.wl_iterations);
  const auto splits = make_folds(dataset, train.seed);

  std::optional<ModelParams> init;
  if (!train.pretrain_tasks.empty()) {
    PretrainReport report;
    init = pretrain(exp, train, init_params(exp.model, train.seed), &report);
    if (!report.epoch_loss.empty()) out << "pretrain final loss " << report.epoch_loss.back() << '\n';
    save_checkpoint(out_dir / "pretrained.ckpt", *init);
  }

  const CvResult cv = run_cv(exp, splits, train, init ? &*init : nullptr);
  for (const auto& f : cv.folds) {
    write_fold_csv(out_dir / ("fold_" + std::to_string(f.fold_index) + ".csv"), f);
    out << "fold " << f.fold_index << ": epoch " << f.chosen_epoch << ", test accuracy "
        << fixed(100.0 * f.test_accuracy, 2) << ", " << fixed(f.seconds, 1) << " s\n";
  }
  write_summary_csv(out_dir / "summary.csv", cv.summary, cv.folds);
  write_timing_csv(out_dir / "timing.csv", cv.folds);
  if (!config.checkpoint.empty()) save_checkpoint(config.checkpoint, cv.fold_params.front());
  out << "accuracy " << fixed(100.0 * cv.summary.mean_accuracy, 2) << " +- " << fixed(100.0 * cv.summary.std_accuracy, 2)
      << ", mean fold time " << fixed(cv.summary.mean_fold_seconds, 1) << " s\n";
  return kExitOk;
}

int cmd_inspect(const std::string& name, const std::string& data_dir_flag, std::ostream& out) {
  RunConfig c;
  c.data_dir = data_dir_flag;
  const GraphDataset d = load_named(resolve_data_dir(c), name);
  out << d.graphs.size() << " graphs, " << d.class_count << " classes, avg " << fixed(d.avg_nodes, 1) << ", max "
      << d.max_nodes << '\n';
  std::map<int, int> per_class;
  for (const auto& g : d.graphs) ++per_class[g.label];
  for (const auto& [label, count] : per_class) {
    out << "  class " << label << " (label " << d.label_values[static_cast<std::size_t>(label)] << "): " << count
        << " graphs\n";
  }
  out << "  node tags: " << (d.has_tags() ? std::to_string(d.tag_vocab_size) : "none") << ", attribute dim "
      << d.attr_dim << '\n';
  return kExitOk;
}

std::optional<autodiff::OpKind> parse_op(const std::string& name) {
  for (int i = 0; i <= static_cast<int>(autodiff::OpKind::kCrossEntropy); ++i) {
    const auto kind = static_cast<autodiff::OpKind>(i);
    if (autodiff::op_name(kind) == name) return kind;
  }
  throw ConfigError("unknown op '" + name + "'");
}

int cmd_gradcheck(GradcheckOptions base, const std::string& residual, const std::string& fault, std::ostream& out,
                  std::ostream& err) {
  if (!fault.empty()) base.fault = parse_op(fault);
  std::vector<ResidualMode> modes;
  if (residual == "both") {
    modes = {ResidualMode::kNone, ResidualMode::kRaw};
  } else {
    modes = {parse_residual_mode(residual)};
  }
  bool ok = true;
  for (ResidualMode mode : modes) {
    GradcheckOptions o = base;
    o.residual = mode;
    const GradcheckReport report = run_gradcheck(o);
    out << "residual " << to_string(mode) << ":\n";
    for (const auto& g : report.groups) {
      char line[160];
      std::snprintf(line, sizeof line, "  %-32s %6zu  %.3e\n", g.name.c_str(), g.entries, g.max_relative_error);
      out << line;
    }
    const auto failures = report.failures();
    if (!failures.empty()) {
      ok = false;
      err << "gradcheck failed (residual " << to_string(mode) << "):";
      for (const auto& name : failures) err << ' ' << name;
      err << '\n';
    }
  }
  out << (ok ? "gradcheck passed\n" : "gradcheck FAILED\n");
  return ok ? kExitOk : kExitFailure;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Segmented graph transformer for graph classification", "segbert"};
  app.require_subcommand(1);

  TrainFlags tf;
  auto* train = app.add_subcommand("train", "10-fold cross validation on a TU dataset");
  TrainOptions to{};
  train->add_option("--config", tf.config, "key=value config file; flags override it");
  to.dataset = train->add_option("--dataset", tf.dataset, "dataset name (directory under the data dir)");
  to.data_dir = train->add_option("--data-dir", tf.data_dir, "root of the TU datasets (default $SEGBERT_DATA_DIR, then ./data)");
  to.strategy = train->add_option("--strategy", tf.strategy, "size unification")
                    ->check(CLI::IsMember({"full-input", "padding-pruning", "segment-shifting"}));
  to.k = train->add_option("--k", tf.k, "input portal size");
  to.residual = train->add_option("--residual", tf.residual, "graph residual")->check(CLI::IsMember({"none", "raw"}));
  to.epochs = train->add_option("--epochs", tf.epochs, "training epochs per fold");
  to.lr = train->add_option("--lr", tf.lr, "learning rate");
  to.seed = train->add_option("--seed", tf.seed, "seed for folds, initialization, shuffling and dropout");
  to.pretrain = train->add_option("--pretrain", tf.pretrain, "comma list of structure,reconstruction");
  to.jobs = train->add_option("--jobs", tf.jobs, "folds trained concurrently");
  to.refit = train->add_option("--refit-epochs", tf.refit, "epochs on train+validation after selection");
  to.out = train->add_option("--out", tf.out, "output directory");
  to.checkpoint = train->add_option("--checkpoint", tf.checkpoint, "write fold 0 parameters here");

  std::string inspect_name = "MUTAG";
  std::string inspect_dir;
  auto* inspect = app.add_subcommand("inspect", "print dataset statistics");
  inspect->add_option("--dataset", inspect_name, "dataset name");
  inspect->add_option("--data-dir", inspect_dir, "root of the TU datasets");

  GradcheckOptions go;
  std::string gc_residual = "both";
  std::string gc_fault;
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every parameter gradient");
  gradcheck->add_option("--hidden", go.hidden, "hidden width");
  gradcheck->add_option("--heads", go.heads, "attention heads");
  gradcheck->add_option("--layers", go.layers, "transformer layers");
  gradcheck->add_option("--intermediate", go.intermediate, "feed-forward width");
  gradcheck->add_option("--residual", gc_residual, "none, raw or both")->check(CLI::IsMember({"none", "raw", "both"}));
  gradcheck->add_option("--step", go.step, "finite-difference step");
  gradcheck->add_option("--seed", go.seed, "parameter seed");
  gradcheck->add_option("--inject-fault", gc_fault, "scale the backward rule of this op")->group("");

  std::vector<const char*> argv{"segbert"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*train) {
      if (to.jobs->count() && tf.jobs < 1) throw ConfigError("--jobs must be >= 1");
      RunConfig config = merge(tf, to);
      config.model.validate();
      return cmd_train(std::move(config), out);
    }
    if (*inspect) return cmd_inspect(inspect_name, inspect_dir, out);
    if (*gradcheck) return cmd_gradcheck(go, gc_residual, gc_fault, out, err);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace segbert
