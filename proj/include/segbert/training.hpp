// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "segbert/dataset.hpp"
#include "segbert/model.hpp"
#include "segbert/unify.hpp"

namespace segbert {

enum class PretrainTask { kReconstruction, kStructure };

std::string_view to_string(PretrainTask task);
PretrainTask parse_pretrain_task(std::string_view text);

inline constexpr int kRefitChosen = -1;

struct TrainConfig {
  double learning_rate = 1e-4;
  double weight_decay = 5e-4;
  int epochs = 500;
  int early_stop_patience = 50;
  int batch_size = 8;
  std::uint64_t seed = 1;
  std::vector<PretrainTask> pretrain_tasks;
  int pretrain_epochs = 50;
  /// Global gradient-norm clip; 0 disables it.
  double clip_norm = 0.0;
  /// Continued training on train + validation after the early-stop epoch is
  /// chosen: kRefitChosen repeats the chosen epoch count, 0 skips the refit,
  /// a positive value is a fixed epoch count.
  int refit_epochs = kRefitChosen;
  int wl_iterations = 2;
  /// Folds trained concurrently by run_cv.
  int jobs = 1;

  void validate() const;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// 5e-4 for PTC, 1e-4 otherwise.
double default_learning_rate(std::string_view dataset_name);

/// One graph, unified and converted to dense model inputs.
struct PreparedGraph {
  std::vector<SegmentInput> segments;
  int label = 0;
  /// Real-node ids in ascending order and the weight matrix among them.
  std::vector<int> node_ids;
  Matrix structure_target;
};

/// Dataset-wide preprocessing shared by every fold: WL codes, bundles,
/// segments. Immutable once built.
struct Experiment {
  std::string dataset_name;
  UnifyPlan plan;
  ModelConfig model;
  std::vector<PreparedGraph> graphs;
};

/// Fills the data-dependent fields of `hyper` (input widths, classes, tags).
ModelConfig make_model_config(const GraphDataset& dataset, const UnifyPlan& plan, const ModelConfig& hyper);

Experiment prepare_experiment(const GraphDataset& dataset, const UnifyPlan& plan, const ModelConfig& hyper,
                              int wl_iterations = 2);

/// Per-graph cross-entropy of the classification head.
Tensor classification_loss(const GraphOutput& out, int label);
/// MSE between pairwise cosine similarity of h_final and the weight matrix.
Tensor structure_loss(const GraphOutput& out, const Matrix& weight_target);
/// MSE between the reconstruction head and the raw node inputs.
Tensor reconstruction_loss(Tape& tape, ModelParams& params, const GraphOutput& out, const Matrix& raw);

struct PretrainReport {
  std::vector<double> epoch_loss;
};

/// Unsupervised training on every graph for `config.pretrain_epochs` epochs.
/// Reconstruction is dropped when the dataset has no attributes.
ModelParams pretrain(const Experiment& experiment, const TrainConfig& config, ModelParams init,
                     PretrainReport* report = nullptr);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_acc = 0.0;
  double test_acc = 0.0;
};

struct FoldReport {
  int fold_index = 0;
  std::vector<EpochRecord> epochs;
  /// 1-based epoch with the highest validation accuracy (earliest on ties).
  int chosen_epoch = 0;
  /// Test accuracy at chosen_epoch.
  double selected_test_accuracy = 0.0;
  /// Test accuracy of the returned model: after the refit when enabled,
  /// otherwise equal to selected_test_accuracy.
  double test_accuracy = 0.0;
  /// Epochs run on train + validation after selection.
  int refit_epochs = 0;
  double seconds = 0.0;
};

/// Accuracy of argmax predictions over `indices`, in eval mode.
double evaluate_accuracy(const Experiment& experiment, ModelParams& params, std::span<const int> indices);

/// Supervised training on one split. `init` seeds the weights (pretrained
/// transfer); a fresh initialization from the fold seed is used otherwise.
/// The final model is written to `final_params` when given.
FoldReport finetune_fold(const Experiment& experiment, const FoldSplit& split, const TrainConfig& config,
                         const ModelParams* init = nullptr, ModelParams* final_params = nullptr);

struct RunSummary {
  std::string dataset;
  Strategy strategy = Strategy::kPaddingPruning;
  int k = 0;
  ResidualMode residual = ResidualMode::kNone;
  double mean_accuracy = 0.0;
  /// Population standard deviation over folds.
  double std_accuracy = 0.0;
  double mean_fold_seconds = 0.0;
};

/// Mean and population std of the folds' test accuracies.
RunSummary summarize(const Experiment& experiment, std::span<const FoldReport> folds);

struct CvResult {
  RunSummary summary;
  std::vector<FoldReport> folds;
  /// Final parameters of each fold, in fold order.
  std::vector<ModelParams> fold_params;
};

/// Ten-fold cross validation. Folds are independent and may run on
/// `config.jobs` threads; results do not depend on the thread count.
CvResult run_cv(const Experiment& experiment, std::span<const FoldSplit> splits, const TrainConfig& config,
                const ModelParams* init = nullptr);

/// fold_<i>.csv: epoch,train_loss,train_acc,val_acc,test_acc
void write_fold_csv(const std::filesystem::path& path, const FoldReport& report);
/// summary.csv: one row per fold plus mean and std rows. Contains no
/// timing, so identical runs produce identical files.
void write_summary_csv(const std::filesystem::path& path, const RunSummary& summary, std::span<const FoldReport> folds);
/// timing.csv: fold,seconds plus a mean row.
void write_timing_csv(const std::filesystem::path& path, std::span<const FoldReport> folds);

}  // namespace segbert
