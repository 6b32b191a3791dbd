// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include "segbert/model.hpp"
#include "segbert/training.hpp"
#include "segbert/unify.hpp"

namespace segbert {

/// Everything needed to reproduce a `train` run.
struct RunConfig {
  std::string dataset = "MUTAG";
  std::string data_dir;
  Strategy strategy = Strategy::kPaddingPruning;
  /// Portal size; the strategy default when unset.
  std::optional<int> k;
  /// Unset means the per-dataset default.
  std::optional<double> learning_rate;
  ModelConfig model;
  TrainConfig train;
  std::string out_dir = "runs/latest";
  std::string checkpoint;

  friend bool operator==(const RunConfig&, const RunConfig&);
};

/// Flat `key=value` lines in a fixed key order. Unset optionals print `auto`.
std::string serialize(const RunConfig& config);

/// Applies `key=value` lines on top of `base`. Blank lines and lines
/// starting with '#' are skipped; unknown keys and bad values throw
/// ConfigError naming the line.
RunConfig parse_run_config(std::string_view text, RunConfig base = {});
RunConfig load_run_config(const std::filesystem::path& path, RunConfig base = {});

}  // namespace segbert
