// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

namespace segbert {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

}  // namespace segbert

namespace segbert::autodiff {

enum class OpKind : std::uint8_t {
  kConstant,
  kParameter,
  kMatMul,
  kTranspose,
  kAdd,
  kAddRow,
  kMul,
  kScale,
  kSoftmaxRows,
  kLayerNorm,
  kGelu,
  kRelu,
  kDropout,
  kMeanRows,
  kGatherRows,
  kConcatRows,
  kConcatCols,
  kSliceCols,
  kCosineSimilarity,
  kMse,
  kCrossEntropy,
};

std::string_view op_name(OpKind kind);

/// A trainable matrix that lives outside any tape. Gradients accumulate into
/// `grad` when a tape that used the parameter runs backward.
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;

  Parameter() = default;
  Parameter(std::string name, Matrix value);

  void zero_grad();
};

enum class Mode { kTrain, kEval };

class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy; valid until the tape
/// is reset or destroyed.
class Tensor {
 public:
  Tensor() = default;

  Index rows() const;
  Index cols() const;
  const Matrix& value() const;
  /// Gradient after backward(). Empty if the node did not receive one.
  const Matrix& grad() const;
  std::size_t tape_id() const { return id_; }
  Tape* tape() const { return tape_; }

 private:
  friend class Tape;
  Tensor(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Records forward operations in topological order and replays them in
/// reverse to accumulate gradients. One tape per worker.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Matrix& out_value, const Matrix& out_grad)>;

  explicit Tape(Mode mode = Mode::kEval, std::uint64_t seed = 0, bool record_grad = true);
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Mode mode() const { return mode_; }
  void set_mode(Mode mode) { mode_ = mode; }
  bool training() const { return mode_ == Mode::kTrain; }
  bool recording() const { return record_grad_; }
  std::mt19937_64& rng() { return rng_; }
  void reseed(std::uint64_t seed) { rng_.seed(seed); }

  Tensor constant(Matrix value);
  /// Registers `param` as a leaf. Repeated calls with the same parameter
  /// return the same node.
  Tensor parameter(Parameter& param);

  void backward(const Tensor& loss);

  /// Drops all recorded nodes. Mode and RNG state are kept.
  void reset();

  std::size_t size() const { return nodes_.size(); }

  /// Scales the incoming gradient of every `kind` node during backward.
  /// Exists only to build negative controls for gradient checking.
  void inject_backward_fault(OpKind kind, double scale);

  // Used by the operation implementations.
  Tensor record(OpKind kind, Matrix value, std::initializer_list<Tensor> inputs, BackwardFn backward);
  Tensor record(OpKind kind, Matrix value, std::span<const Tensor> inputs, BackwardFn backward);
  void accumulate(const Tensor& target, const Matrix& delta);
  const Matrix& value_of(std::size_t id) const { return nodes_[id].value; }
  const Matrix& grad_of(std::size_t id) const { return nodes_[id].grad; }

 private:
  struct Node {
    OpKind kind;
    Matrix value;
    Matrix grad;
    BackwardFn backward;
    Parameter* param = nullptr;
  };

  void check_owned(const Tensor& t) const;

  Mode mode_;
  bool record_grad_;
  bool backward_done_ = false;
  std::mt19937_64 rng_;
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> param_nodes_;
  std::unordered_map<OpKind, double> faults_;
};

// Forward primitives. Each checks shapes, checks its output for NaN/Inf and
// records itself on the tape of its first argument.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
/// Adds a 1 x cols row to every row of `a`.
Tensor add_row(const Tensor& a, const Tensor& row);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor softmax_rows(const Tensor& a);
/// Row-wise normalization followed by the affine map gamma * x + beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta);
inline constexpr double kLayerNormEpsilon = 1e-12;
Tensor gelu(const Tensor& a);
Tensor relu(const Tensor& a);
/// Inverted dropout; the identity when the tape is in eval mode.
Tensor dropout(const Tensor& a, double rate);
/// Column-wise mean over rows, giving a 1 x cols tensor.
Tensor mean_rows(const Tensor& a);
Tensor gather_rows(const Tensor& a, std::span<const Index> rows);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor slice_cols(const Tensor& a, Index start, Index count);
/// n x n matrix of cosine similarities between rows. A zero row has
/// similarity 0 with everything, itself included.
Tensor cosine_similarity(const Tensor& a);
/// Mean of squared differences, as a 1 x 1 tensor.
Tensor mse(const Tensor& prediction, const Tensor& target);
/// Mean over rows of -log softmax(logits)[row, target[row]].
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets);

}  // namespace segbert::autodiff
