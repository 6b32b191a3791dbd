// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <vector>

#include "segbert/autodiff/tape.hpp"

namespace segbert::testing {

inline std::filesystem::path data_dir() { return SEGBERT_TEST_DATA_DIR; }

inline Matrix random_matrix(Index rows, Index cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  return m;
}

using ScalarFn = std::function<autodiff::Tensor(autodiff::Tape&, std::vector<autodiff::Tensor>&)>;

/// Largest entry-wise relative error between backward() and central
/// differences of `fn` with respect to every input.
inline double max_gradient_error(std::vector<autodiff::Parameter>& inputs, const ScalarFn& fn, double step = 1e-5) {
  using namespace autodiff;
  auto evaluate = [&](bool grad) {
    Tape tape(Mode::kEval, 0, grad);
    std::vector<Tensor> handles;
    for (auto& p : inputs) handles.push_back(tape.parameter(p));
    Tensor loss = fn(tape, handles);
    if (grad) tape.backward(loss);
    return loss.value()(0, 0);
  };
  for (auto& p : inputs) p.zero_grad();
  evaluate(true);
  double worst = 0.0;
  for (auto& p : inputs) {
    for (Index i = 0; i < p.value.size(); ++i) {
      const double saved = p.value.data()[i];
      p.value.data()[i] = saved + step;
      const double plus = evaluate(false);
      p.value.data()[i] = saved - step;
      const double minus = evaluate(false);
      p.value.data()[i] = saved;
      const double numeric = (plus - minus) / (2.0 * step);
      const double analytic = p.grad.data()[i];
      worst = std::max(worst, std::abs(analytic - numeric) / std::max(std::abs(analytic) + std::abs(numeric), 1e-7));
    }
  }
  return worst;
}

/// Reduces a tensor to a scalar through fixed random weights.
inline autodiff::Tensor weighted_sum(const autodiff::Tensor& t, std::uint64_t seed = 99) {
  using namespace autodiff;
  std::mt19937_64 rng(seed);
  Tape& tape = *t.tape();
  Tensor w = tape.constant(random_matrix(t.rows(), t.cols(), rng));
  Tensor ones = tape.constant(Matrix::Ones(t.cols(), 1));
  return scale(matmul(mean_rows(mul(t, w)), ones), static_cast<double>(t.rows()));
}

}  // namespace segbert::testing
