// SPDX-License-Identifier: Apache-2.0
#include "segbert/autodiff/tape.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "segbert/error.hpp"

namespace segbert::autodiff {

namespace {

std::string shape_str(const Matrix& m) {
  std::ostringstream os;
  os << m.rows() << "x" << m.cols();
  return os.str();
}

[[noreturn]] void shape_mismatch(OpKind kind, const Matrix& a, const Matrix& b) {
  throw ShapeError(std::string(op_name(kind)) + ": incompatible shapes " + shape_str(a) + " and " +
                   shape_str(b));
}

void check_finite(OpKind kind, const Matrix& m) {
  // NaN and inf propagate through the sum.
  if (!std::isfinite(m.sum())) {
    throw NumericError(std::string(op_name(kind)) + ": non-finite output");
  }
}

Tape& tape_of(const Tensor& t) {
  if (t.tape() == nullptr) {
    throw Error("operation on an unbound tensor");
  }
  return *t.tape();
}

}  // namespace

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kConstant: return "constant";
    case OpKind::kParameter: return "parameter";
    case OpKind::kMatMul: return "matmul";
    case OpKind::kTranspose: return "transpose";
    case OpKind::kAdd: return "add";
    case OpKind::kAddRow: return "add_row";
    case OpKind::kMul: return "mul";
    case OpKind::kScale: return "scale";
    case OpKind::kSoftmaxRows: return "softmax_rows";
    case OpKind::kLayerNorm: return "layer_norm";
    case OpKind::kGelu: return "gelu";
    case OpKind::kRelu: return "relu";
    case OpKind::kDropout: return "dropout";
    case OpKind::kMeanRows: return "mean_rows";
    case OpKind::kGatherRows: return "gather_rows";
    case OpKind::kConcatRows: return "concat_rows";
    case OpKind::kConcatCols: return "concat_cols";
    case OpKind::kSliceCols: return "slice_cols";
    case OpKind::kCosineSimilarity: return "cosine_similarity";
    case OpKind::kMse: return "mse";
    case OpKind::kCrossEntropy: return "cross_entropy";
  }
  return "unknown";
}

Parameter::Parameter(std::string name_, Matrix value_)
    : name(std::move(name_)), value(std::move(value_)), grad(Matrix::Zero(value.rows(), value.cols())) {}

void Parameter::zero_grad() { grad.setZero(value.rows(), value.cols()); }

Index Tensor::rows() const { return value().rows(); }
Index Tensor::cols() const { return value().cols(); }
const Matrix& Tensor::value() const { return tape_->value_of(id_); }
const Matrix& Tensor::grad() const { return tape_->grad_of(id_); }

Tape::Tape(Mode mode, std::uint64_t seed, bool record_grad)
    : mode_(mode), record_grad_(record_grad), rng_(seed) {}

Tensor Tape::constant(Matrix value) {
  check_finite(OpKind::kConstant, value);
  nodes_.push_back(Node{OpKind::kConstant, std::move(value), {}, {}, nullptr});
  return Tensor(this, nodes_.size() - 1);
}

Tensor Tape::parameter(Parameter& param) {
  if (auto it = param_nodes_.find(&param); it != param_nodes_.end()) {
    return Tensor(this, it->second);
  }
  check_finite(OpKind::kParameter, param.value);
  nodes_.push_back(Node{OpKind::kParameter, param.value, {}, {}, &param});
  param_nodes_.emplace(&param, nodes_.size() - 1);
  return Tensor(this, nodes_.size() - 1);
}

Tensor Tape::record(OpKind kind, Matrix value, std::initializer_list<Tensor> inputs, BackwardFn backward) {
  return record(kind, std::move(value), std::span<const Tensor>(inputs.begin(), inputs.size()),
                std::move(backward));
}

Tensor Tape::record(OpKind kind, Matrix value, std::span<const Tensor> inputs, BackwardFn backward) {
  for (const auto& in : inputs) check_owned(in);
  check_finite(kind, value);
  nodes_.push_back(Node{kind, std::move(value), {}, record_grad_ ? std::move(backward) : BackwardFn{}, nullptr});
  return Tensor(this, nodes_.size() - 1);
}

void Tape::accumulate(const Tensor& target, const Matrix& delta) {
  Node& node = nodes_[target.tape_id()];
  if (node.kind == OpKind::kConstant) return;
  if (node.grad.size() == 0) {
    node.grad = delta;
  } else {
    node.grad += delta;
  }
}

void Tape::check_owned(const Tensor& t) const {
  if (t.tape() != this || t.tape_id() >= nodes_.size()) {
    throw Error("tensor does not belong to this tape");
  }
}

void Tape::backward(const Tensor& loss) {
  check_owned(loss);
  if (!record_grad_) throw Error("backward on a tape that does not record gradients");
  if (backward_done_) throw Error("backward called twice without reset");
  const Matrix& lv = nodes_[loss.tape_id()].value;
  if (lv.rows() != 1 || lv.cols() != 1) {
    throw ShapeError("backward: loss must be 1x1, got " + shape_str(lv));
  }
  backward_done_ = true;
  nodes_[loss.tape_id()].grad = Matrix::Ones(1, 1);
  for (std::size_t i = loss.tape_id() + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (node.grad.size() == 0) continue;
    if (node.param != nullptr) {
      node.param->grad += node.grad;
      continue;
    }
    if (!node.backward) continue;
    // Callbacks only touch nodes with smaller ids, so `node` stays valid.
    if (auto f = faults_.find(node.kind); f != faults_.end()) {
      const Matrix scaled = node.grad * f->second;
      node.backward(*this, node.value, scaled);
    } else {
      node.backward(*this, node.value, node.grad);
    }
  }
}

void Tape::reset() {
  nodes_.clear();
  param_nodes_.clear();
  backward_done_ = false;
}

void Tape::inject_backward_fault(OpKind kind, double scale) { faults_[kind] = scale; }

// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  Tape& t = tape_of(a);
  if (a.cols() != b.rows()) shape_mismatch(OpKind::kMatMul, a.value(), b.value());
  Matrix out = a.value() * b.value();
  return t.record(OpKind::kMatMul, std::move(out), {a, b}, [a, b](Tape& tp, const Matrix&, const Matrix& g) {
    tp.accumulate(a, g * b.value().transpose());
    tp.accumulate(b, a.value().transpose() * g);
  });
}

Tensor transpose(const Tensor& a) {
  Tape& t = tape_of(a);
  Matrix out = a.value().transpose();
  return t.record(OpKind::kTranspose, std::move(out), {a},
                  [a](Tape& tp, const Matrix&, const Matrix& g) { tp.accumulate(a, g.transpose()); });
}

Tensor add(const Tensor& a, const Tensor& b) {
  Tape& t = tape_of(a);
  if (a.rows() != b.rows() || a.cols() != b.cols()) shape_mismatch(OpKind::kAdd, a.value(), b.value());
  Matrix out = a.value() + b.value();
  return t.record(OpKind::kAdd, std::move(out), {a, b}, [a, b](Tape& tp, const Matrix&, const Matrix& g) {
    tp.accumulate(a, g);
    tp.accumulate(b, g);
  });
}

Tensor add_row(const Tensor& a, const Tensor& row) {
  Tape& t = tape_of(a);
  if (row.rows() != 1 || row.cols() != a.cols()) shape_mismatch(OpKind::kAddRow, a.value(), row.value());
  Matrix out = a.value().rowwise() + row.value().row(0);
  return t.record(OpKind::kAddRow, std::move(out), {a, row}, [a, row](Tape& tp, const Matrix&, const Matrix& g) {
    tp.accumulate(a, g);
    tp.accumulate(row, g.colwise().sum());
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  Tape& t = tape_of(a);
  if (a.rows() != b.rows() || a.cols() != b.cols()) shape_mismatch(OpKind::kMul, a.value(), b.value());
  Matrix out = a.value().cwiseProduct(b.value());
  return t.record(OpKind::kMul, std::move(out), {a, b}, [a, b](Tape& tp, const Matrix&, const Matrix& g) {
    tp.accumulate(a, g.cwiseProduct(b.value()));
    tp.accumulate(b, g.cwiseProduct(a.value()));
  });
}

Tensor scale(const Tensor& a, double factor) {
  Tape& t = tape_of(a);
  Matrix out = a.value() * factor;
  return t.record(OpKind::kScale, std::move(out), {a},
                  [a, factor](Tape& tp, const Matrix&, const Matrix& g) { tp.accumulate(a, g * factor); });
}

Tensor softmax_rows(const Tensor& a) {
  Tape& t = tape_of(a);
  const Matrix& x = a.value();
  Matrix out(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    const double mx = x.row(r).maxCoeff();
    out.row(r) = (x.row(r).array() - mx).exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  return t.record(OpKind::kSoftmaxRows, std::move(out), {a}, [a](Tape& tp, const Matrix& y, const Matrix& g) {
    const Eigen::VectorXd dots = y.cwiseProduct(g).rowwise().sum();
    Matrix dx = y.cwiseProduct(g.colwise() - dots);
    tp.accumulate(a, dx);
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta) {
  Tape& t = tape_of(x);
  if (gamma.rows() != 1 || gamma.cols() != x.cols()) shape_mismatch(OpKind::kLayerNorm, x.value(), gamma.value());
  if (beta.rows() != 1 || beta.cols() != x.cols()) shape_mismatch(OpKind::kLayerNorm, x.value(), beta.value());
  const Matrix& xv = x.value();
  const Index n = xv.cols();
  Matrix xhat(xv.rows(), n);
  Eigen::VectorXd inv_std(xv.rows());
  for (Index r = 0; r < xv.rows(); ++r) {
    const double mean = xv.row(r).mean();
    const double var = (xv.row(r).array() - mean).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + kLayerNormEpsilon);
    xhat.row(r) = (xv.row(r).array() - mean).matrix() * inv_std(r);
  }
  Matrix out = (xhat.array().rowwise() * gamma.value().row(0).array()).matrix();
  out.rowwise() += beta.value().row(0);
  return t.record(OpKind::kLayerNorm, std::move(out), {x, gamma, beta},
                  [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), n](
                      Tape& tp, const Matrix&, const Matrix& g) {
                    tp.accumulate(beta, g.colwise().sum());
                    tp.accumulate(gamma, g.cwiseProduct(xhat).colwise().sum());
                    const Matrix dxhat = (g.array().rowwise() * gamma.value().row(0).array()).matrix();
                    Matrix dx(dxhat.rows(), n);
                    for (Index r = 0; r < dxhat.rows(); ++r) {
                      const double m1 = dxhat.row(r).mean();
                      const double m2 = dxhat.row(r).dot(xhat.row(r)) / static_cast<double>(n);
                      dx.row(r) = ((dxhat.row(r).array() - m1) - xhat.row(r).array() * m2).matrix() * inv_std(r);
                    }
                    tp.accumulate(x, dx);
                  });
}

Tensor gelu(const Tensor& a) {
  Tape& t = tape_of(a);
  const Matrix& x = a.value();
  Matrix out = x.unaryExpr([](double v) { return 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0)); });
  return t.record(OpKind::kGelu, std::move(out), {a}, [a](Tape& tp, const Matrix&, const Matrix& g) {
    const Matrix d = a.value().unaryExpr([](double v) {
      const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
      const double pdf = std::exp(-0.5 * v * v) * std::numbers::inv_sqrtpi / std::numbers::sqrt2;
      return cdf + v * pdf;
    });
    tp.accumulate(a, g.cwiseProduct(d));
  });
}

Tensor relu(const Tensor& a) {
  Tape& t = tape_of(a);
  Matrix out = a.value().cwiseMax(0.0);
  return t.record(OpKind::kRelu, std::move(out), {a}, [a](Tape& tp, const Matrix&, const Matrix& g) {
    const Matrix mask = (a.value().array() > 0.0).cast<double>().matrix();
    tp.accumulate(a, g.cwiseProduct(mask));
  });
}

Tensor dropout(const Tensor& a, double rate) {
  Tape& t = tape_of(a);
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw Error("dropout: rate must lie in [0, 1)");
  }
  if (!t.training() || rate == 0.0) return a;
  const double keep = 1.0 - rate;
  std::bernoulli_distribution coin(keep);
  Matrix mask(a.rows(), a.cols());
  for (Index i = 0; i < mask.size(); ++i) {
    mask.data()[i] = coin(t.rng()) ? 1.0 / keep : 0.0;
  }
  Matrix out = a.value().cwiseProduct(mask);
  return t.record(OpKind::kDropout, std::move(out), {a},
                  [a, mask = std::move(mask)](Tape& tp, const Matrix&, const Matrix& g) {
                    tp.accumulate(a, g.cwiseProduct(mask));
                  });
}

Tensor mean_rows(const Tensor& a) {
  Tape& t = tape_of(a);
  if (a.rows() == 0) throw ShapeError("mean_rows: input has no rows");
  Matrix out = a.value().colwise().mean();
  const Index n = a.rows();
  return t.record(OpKind::kMeanRows, std::move(out), {a}, [a, n](Tape& tp, const Matrix&, const Matrix& g) {
    Matrix dx = g.replicate(n, 1) / static_cast<double>(n);
    tp.accumulate(a, dx);
  });
}

Tensor gather_rows(const Tensor& a, std::span<const Index> rows) {
  Tape& t = tape_of(a);
  const Matrix& x = a.value();
  Matrix out(static_cast<Index>(rows.size()), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= x.rows()) {
      throw ShapeError("gather_rows: row index " + std::to_string(rows[i]) + " out of range for " + shape_str(x));
    }
    out.row(static_cast<Index>(i)) = x.row(rows[i]);
  }
  std::vector<Index> idx(rows.begin(), rows.end());
  return t.record(OpKind::kGatherRows, std::move(out), {a},
                  [a, idx = std::move(idx)](Tape& tp, const Matrix&, const Matrix& g) {
                    Matrix dx = Matrix::Zero(a.rows(), a.cols());
                    for (std::size_t i = 0; i < idx.size(); ++i) dx.row(idx[i]) += g.row(static_cast<Index>(i));
                    tp.accumulate(a, dx);
                  });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  Tape& t = tape_of(parts.front());
  Index total = 0;
  for (const auto& p : parts) {
    if (p.cols() != parts.front().cols()) shape_mismatch(OpKind::kConcatRows, parts.front().value(), p.value());
    total += p.rows();
  }
  Matrix out(total, parts.front().cols());
  Index offset = 0;
  for (const auto& p : parts) {
    out.middleRows(offset, p.rows()) = p.value();
    offset += p.rows();
  }
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  return t.record(OpKind::kConcatRows, std::move(out), parts,
                  [inputs](Tape& tp, const Matrix&, const Matrix& g) {
                    Index off = 0;
                    for (const auto& p : inputs) {
                      tp.accumulate(p, g.middleRows(off, p.rows()));
                      off += p.rows();
                    }
                  });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  Tape& t = tape_of(parts.front());
  Index total = 0;
  for (const auto& p : parts) {
    if (p.rows() != parts.front().rows()) shape_mismatch(OpKind::kConcatCols, parts.front().value(), p.value());
    total += p.cols();
  }
  Matrix out(parts.front().rows(), total);
  Index offset = 0;
  for (const auto& p : parts) {
    out.middleCols(offset, p.cols()) = p.value();
    offset += p.cols();
  }
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  return t.record(OpKind::kConcatCols, std::move(out), parts,
                  [inputs](Tape& tp, const Matrix&, const Matrix& g) {
                    Index off = 0;
                    for (const auto& p : inputs) {
                      tp.accumulate(p, g.middleCols(off, p.cols()));
                      off += p.cols();
                    }
                  });
}

Tensor slice_cols(const Tensor& a, Index start, Index count) {
  Tape& t = tape_of(a);
  if (start < 0 || count < 0 || start + count > a.cols()) {
    throw ShapeError("slice_cols: columns [" + std::to_string(start) + ", " + std::to_string(start + count) +
                     ") out of range for " + shape_str(a.value()));
  }
  Matrix out = a.value().middleCols(start, count);
  return t.record(OpKind::kSliceCols, std::move(out), {a}, [a, start, count](Tape& tp, const Matrix&, const Matrix& g) {
    Matrix dx = Matrix::Zero(a.rows(), a.cols());
    dx.middleCols(start, count) = g;
    tp.accumulate(a, dx);
  });
}

Tensor cosine_similarity(const Tensor& a) {
  Tape& t = tape_of(a);
  const Matrix& x = a.value();
  Eigen::VectorXd norms = x.rowwise().norm();
  Matrix unit = Matrix::Zero(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    if (norms(r) > 0.0) unit.row(r) = x.row(r) / norms(r);
  }
  Matrix out = unit * unit.transpose();
  return t.record(OpKind::kCosineSimilarity, std::move(out), {a},
                  [a, unit = std::move(unit), norms = std::move(norms)](Tape& tp, const Matrix&, const Matrix& g) {
                    const Matrix dunit = (g + g.transpose()) * unit;
                    Matrix dx = Matrix::Zero(unit.rows(), unit.cols());
                    for (Index r = 0; r < unit.rows(); ++r) {
                      if (norms(r) == 0.0) continue;
                      const double proj = dunit.row(r).dot(unit.row(r));
                      dx.row(r) = (dunit.row(r) - proj * unit.row(r)) / norms(r);
                    }
                    tp.accumulate(a, dx);
                  });
}

Tensor mse(const Tensor& prediction, const Tensor& target) {
  Tape& t = tape_of(prediction);
  if (prediction.rows() != target.rows() || prediction.cols() != target.cols()) {
    shape_mismatch(OpKind::kMse, prediction.value(), target.value());
  }
  const Index count = prediction.value().size();
  if (count == 0) throw ShapeError("mse: empty input");
  Matrix diff = prediction.value() - target.value();
  Matrix out(1, 1);
  out(0, 0) = diff.squaredNorm() / static_cast<double>(count);
  return t.record(OpKind::kMse, std::move(out), {prediction, target},
                  [prediction, target, diff = std::move(diff), count](Tape& tp, const Matrix&, const Matrix& g) {
                    const Matrix d = diff * (2.0 * g(0, 0) / static_cast<double>(count));
                    tp.accumulate(prediction, d);
                    tp.accumulate(target, -d);
                  });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets) {
  Tape& t = tape_of(logits);
  const Matrix& z = logits.value();
  if (static_cast<Index>(targets.size()) != z.rows() || z.rows() == 0) {
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for logits " + shape_str(z));
  }
  Matrix probs(z.rows(), z.cols());
  double total = 0.0;
  for (Index r = 0; r < z.rows(); ++r) {
    const int target = targets[static_cast<std::size_t>(r)];
    if (target < 0 || target >= z.cols()) {
      throw ShapeError("cross_entropy: target " + std::to_string(target) + " outside " + std::to_string(z.cols()) +
                       " classes");
    }
    const double mx = z.row(r).maxCoeff();
    const double lse = mx + std::log((z.row(r).array() - mx).exp().sum());
    probs.row(r) = (z.row(r).array() - lse).exp().matrix();
    total += lse - z(r, target);
  }
  Matrix out(1, 1);
  out(0, 0) = total / static_cast<double>(z.rows());
  std::vector<int> tgt(targets.begin(), targets.end());
  return t.record(OpKind::kCrossEntropy, std::move(out), {logits},
                  [logits, probs = std::move(probs), tgt = std::move(tgt)](Tape& tp, const Matrix&, const Matrix& g) {
                    Matrix d = probs;
                    for (std::size_t r = 0; r < tgt.size(); ++r) d(static_cast<Index>(r), tgt[r]) -= 1.0;
                    d *= g(0, 0) / static_cast<double>(tgt.size());
                    tp.accumulate(logits, d);
                  });
}

}  // namespace segbert::autodiff
