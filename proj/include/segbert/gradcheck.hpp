// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "segbert/model.hpp"

namespace segbert {

struct GradcheckOptions {
  int hidden = 16;
  int heads = 2;
  int layers = 2;
  int intermediate = 16;
  ResidualMode residual = ResidualMode::kNone;
  double step = 1e-5;
  double threshold = 1e-3;
  std::uint64_t seed = 7;
  /// Negative control: scales the backward rule of one op.
  std::optional<autodiff::OpKind> fault;
  double fault_scale = 1.5;
};

struct GroupError {
  std::string name;
  double max_relative_error = 0.0;
  std::size_t entries = 0;
};

struct GradcheckReport {
  std::vector<GroupError> groups;
  double threshold = 1e-3;

  bool passed() const;
  std::vector<std::string> failures() const;
};

/// The 5-node attributed toy graph used by the gradient check.
GraphInstance gradcheck_toy_graph();

/// Central finite differences of CE + structure + reconstruction on the
/// toy graph in train mode with a fixed dropout mask, against backward().
/// Entry error is |a - n| / max(|a| + |n|, 1e-6), reduced by max per tensor.
GradcheckReport run_gradcheck(const GradcheckOptions& options);

}  // namespace segbert
