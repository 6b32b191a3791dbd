// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "segbert/autodiff/adam.hpp"
#include "segbert/autodiff/tape.hpp"
#include "segbert/error.hpp"
#include "test_util.hpp"

namespace segbert::autodiff {
namespace {

using segbert::testing::max_gradient_error;
using segbert::testing::random_matrix;
using segbert::testing::weighted_sum;

constexpr double kPrimitiveTolerance = 1e-4;

TEST(Matmul, MatchesTripleLoop) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix a = random_matrix(2, 3, rng);
    const Matrix b = random_matrix(3, 2, rng);
    Tape tape;
    const Matrix c = matmul(tape.constant(a), tape.constant(b)).value();
    for (int i = 0; i < 2; ++i) {
      for (int j = 0; j < 2; ++j) {
        double s = 0.0;
        for (int k = 0; k < 3; ++k) s += a(i, k) * b(k, j);
        EXPECT_NEAR(c(i, j), s, 1e-12);
      }
    }
  }
}

TEST(Matmul, ShapeErrorNamesBothShapes) {
  Tape tape;
  Tensor a = tape.constant(Matrix::Zero(2, 3));
  Tensor b = tape.constant(Matrix::Zero(2, 3));
  try {
    matmul(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("2x3"), std::string::npos) << msg;
    EXPECT_NE(msg.find("matmul"), std::string::npos) << msg;
  }
}

TEST(Softmax, UniformOnZeros) {
  Tape tape;
  const Matrix s = softmax_rows(tape.constant(Matrix::Zero(1, 3))).value();
  for (int j = 0; j < 3; ++j) EXPECT_NEAR(s(0, j), 1.0 / 3.0, 1e-15);
}

TEST(Softmax, RowsSumToOneForLargeLogits) {
  Tape tape;
  Matrix x(2, 3);
  x << 1000, 999, -1000, -500, -501, -499;
  const Matrix s = softmax_rows(tape.constant(x)).value();
  for (int i = 0; i < 2; ++i) EXPECT_NEAR(s.row(i).sum(), 1.0, 1e-12);
}

TEST(LayerNorm, ConstantRowGivesZero) {
  Tape tape;
  Tensor x = tape.constant(Matrix::Constant(1, 6, 3.5));
  Tensor gamma = tape.constant(Matrix::Ones(1, 6));
  Tensor beta = tape.constant(Matrix::Zero(1, 6));
  const Matrix y = layer_norm(x, gamma, beta).value();
  EXPECT_LT(y.cwiseAbs().maxCoeff(), 1e-9);
}

TEST(LayerNorm, ZeroMeanUnitVariance) {
  std::mt19937_64 rng(2);
  Tape tape;
  Tensor x = tape.constant(random_matrix(4, 8, rng, 3.0));
  const Matrix y = layer_norm(x, tape.constant(Matrix::Ones(1, 8)), tape.constant(Matrix::Zero(1, 8))).value();
  for (Index i = 0; i < 4; ++i) {
    EXPECT_NEAR(y.row(i).mean(), 0.0, 1e-12);
    EXPECT_NEAR(y.row(i).squaredNorm() / 8.0, 1.0, 1e-9);
  }
}

TEST(Backward, SquareAtThree) {
  Parameter x("x", Matrix::Constant(1, 1, 3.0));
  Tape tape;
  Tensor t = tape.parameter(x);
  tape.backward(mul(t, t));
  EXPECT_DOUBLE_EQ(x.grad(0, 0), 6.0);
}

TEST(Backward, RejectsNonScalarLoss) {
  Parameter x("x", Matrix::Ones(2, 2));
  Tape tape;
  Tensor t = tape.parameter(x);
  EXPECT_THROW(tape.backward(t), ShapeError);
}

TEST(Backward, SecondCallWithoutResetThrows) {
  Parameter x("x", Matrix::Constant(1, 1, 2.0));
  Tape tape;
  Tensor t = tape.parameter(x);
  Tensor loss = mul(t, t);
  tape.backward(loss);
  EXPECT_THROW(tape.backward(loss), Error);
}

TEST(Backward, ResetMatchesFreshTape) {
  std::mt19937_64 rng(3);
  Parameter w("w", random_matrix(3, 3, rng));
  const Matrix x = random_matrix(2, 3, rng);
  auto run = [&](Tape& tape) {
    w.zero_grad();
    Tensor y = gelu(matmul(tape.constant(x), tape.parameter(w)));
    Tensor loss = weighted_sum(y);
    tape.backward(loss);
    return std::pair{loss.value()(0, 0), Matrix(w.grad)};
  };
  Tape reused;
  run(reused);
  reused.reset();
  const auto again = run(reused);
  Tape fresh;
  const auto first = run(fresh);
  EXPECT_EQ(again.first, first.first);
  EXPECT_EQ(again.second, first.second);
}

TEST(Backward, ParameterUsedTwiceAccumulates) {
  Parameter x("x", Matrix::Constant(1, 1, 2.0));
  Tape tape;
  Tensor a = tape.parameter(x);
  Tensor b = tape.parameter(x);
  EXPECT_EQ(a.tape_id(), b.tape_id());
  tape.backward(add(mul(a, b), scale(a, 3.0)));
  EXPECT_DOUBLE_EQ(x.grad(0, 0), 7.0);
}

TEST(Numeric, NonFiniteOutputIdentifiesOp) {
  Tape tape;
  Matrix big = Matrix::Constant(1, 1, 1e200);
  try {
    mul(tape.constant(big), tape.constant(big));
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("mul"), std::string::npos);
  }
}

TEST(Dropout, EvalModeIsIdentity) {
  std::mt19937_64 rng(4);
  const Matrix x = random_matrix(5, 7, rng);
  Tape tape(Mode::kEval);
  EXPECT_EQ(dropout(tape.constant(x), 0.5).value(), x);
}

TEST(Dropout, InvertedScalingKeepsMean) {
  Tape tape(Mode::kTrain, 11);
  const Matrix y = dropout(tape.constant(Matrix::Ones(200, 200)), 0.3).value();
  for (Index i = 0; i < y.size(); ++i) {
    const double v = y.data()[i];
    EXPECT_TRUE(v == 0.0 || std::abs(v - 1.0 / 0.7) < 1e-12);
  }
  EXPECT_NEAR(y.mean(), 1.0, 0.02);
}

TEST(Dropout, SameSeedSameMask) {
  Tape a(Mode::kTrain, 5);
  Tape b(Mode::kTrain, 5);
  const Matrix x = Matrix::Ones(10, 10);
  EXPECT_EQ(dropout(a.constant(x), 0.5).value(), dropout(b.constant(x), 0.5).value());
}

TEST(Dropout, RejectsRateOutsideRange) {
  Tape tape(Mode::kTrain);
  Tensor x = tape.constant(Matrix::Ones(2, 2));
  EXPECT_THROW(dropout(x, 1.0), Error);
  EXPECT_THROW(dropout(x, -0.1), Error);
}

TEST(CrossEntropy, UniformPredictionIsLn2) {
  Tape tape;
  const int target[] = {0};
  const double loss = cross_entropy(tape.constant(Matrix::Zero(1, 2)), target).value()(0, 0);
  EXPECT_NEAR(loss, std::log(2.0), 1e-12);
}

TEST(CrossEntropy, GradientIsSoftmaxMinusTarget) {
  std::mt19937_64 rng(6);
  Parameter logits("logits", random_matrix(1, 4, rng));
  Tape tape;
  const int target[] = {2};
  Tensor l = tape.parameter(logits);
  tape.backward(cross_entropy(l, target));
  Matrix expected = softmax_rows(tape.constant(logits.value)).value();
  expected(0, 2) -= 1.0;
  EXPECT_LT((logits.grad - expected).cwiseAbs().maxCoeff(), 1e-12);

  std::vector<Parameter> inputs{logits};
  const double err = max_gradient_error(inputs, [&](Tape&, std::vector<Tensor>& h) { return cross_entropy(h[0], target); });
  EXPECT_LT(err, kPrimitiveTolerance);
}

TEST(CrossEntropy, RejectsBadTargets) {
  Tape tape;
  Tensor logits = tape.constant(Matrix::Zero(2, 3));
  const int one[] = {0};
  const int out_of_range[] = {0, 3};
  EXPECT_THROW(cross_entropy(logits, one), ShapeError);
  EXPECT_THROW(cross_entropy(logits, out_of_range), Error);
}

TEST(Cosine, ParallelRowsGiveOnes) {
  Tape tape;
  Matrix h(3, 4);
  h.rowwise() = Eigen::RowVectorXd::LinSpaced(4, 1.0, 4.0);
  const Matrix c = cosine_similarity(tape.constant(h)).value();
  EXPECT_LT((c - Matrix::Ones(3, 3)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Cosine, OrthogonalRowsGiveIdentity) {
  Tape tape;
  Matrix h = Matrix::Zero(2, 3);
  h(0, 0) = 2.0;
  h(1, 2) = -5.0;
  const Matrix c = cosine_similarity(tape.constant(h)).value();
  EXPECT_LT((c - Matrix::Identity(2, 2)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Cosine, ZeroRowMapsToZero) {
  Tape tape;
  Matrix h = Matrix::Zero(2, 3);
  h(0, 1) = 1.0;
  const Matrix c = cosine_similarity(tape.constant(h)).value();
  EXPECT_EQ(c(1, 1), 0.0);
  EXPECT_EQ(c(0, 1), 0.0);
  EXPECT_EQ(c(0, 0), 1.0);
}

TEST(Cosine, MatchesPairwiseOracle) {
  std::mt19937_64 rng(7);
  const Matrix h = random_matrix(3, 6, rng);
  Tape tape;
  const Matrix c = cosine_similarity(tape.constant(h)).value();
  for (Index i = 0; i < 3; ++i) {
    for (Index j = 0; j < 3; ++j) {
      const double expected = h.row(i).dot(h.row(j)) / (h.row(i).norm() * h.row(j).norm());
      EXPECT_NEAR(c(i, j), expected, 1e-12);
    }
  }
}

TEST(Mse, ClosedForm) {
  Tape tape;
  Matrix a(2, 2), b(2, 2);
  a << 1, 1, 1, 1;
  b << 0, 1, 1, 0;
  EXPECT_NEAR(mse(tape.constant(a), tape.constant(b)).value()(0, 0), 0.5, 1e-15);
}

// Finite-difference checks of every primitive on random inputs.

double check(std::vector<std::pair<Index, Index>> shapes, const segbert::testing::ScalarFn& fn, std::uint64_t seed = 8) {
  std::mt19937_64 rng(seed);
  std::vector<Parameter> inputs;
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    inputs.emplace_back("in" + std::to_string(i), random_matrix(shapes[i].first, shapes[i].second, rng));
  }
  return max_gradient_error(inputs, fn);
}

TEST(PrimitiveGradients, Matmul) {
  EXPECT_LT(check({{3, 4}, {4, 2}}, [](Tape&, auto& h) { return weighted_sum(matmul(h[0], h[1])); }), kPrimitiveTolerance);
}

TEST(PrimitiveGradients, Transpose) {
  EXPECT_LT(check({{3, 4}}, [](Tape&, auto& h) { return weighted_sum(transpose(h[0])); }), kPrimitiveTolerance);
}

TEST(PrimitiveGradients, AddAndAddRow) {
  EXPECT_LT(check({{3, 4}, {3, 4}}, [](Tape&, auto& h) { return weighted_sum(add(h[0], h[1])); }), kPrimitiveTolerance);
  EXPECT_LT(check({{3, 4}, {1, 4}}, [](Tape&, auto& h) { return weighted_sum(add_row(h[0], h[1])); }),
            kPrimitiveTolerance);
}

TEST(PrimitiveGradients, MulAndScale) {
  EXPECT_LT(check({{3, 4}, {3, 4}}, [](Tape&, auto& h) { return weighted_sum(mul(h[0], h[1])); }), kPrimitiveTolerance);
  EXPECT_LT(check({{3, 4}}, [](Tape&, auto& h) { return weighted_sum(scale(h[0], -2.5)); }), kPrimitiveTolerance);
}

TEST(PrimitiveGradients, Softmax) {
  EXPECT_LT(check({{3, 5}}, [](Tape&, auto& h) { return weighted_sum(softmax_rows(h[0])); }), kPrimitiveTolerance);
}

TEST(PrimitiveGradients, LayerNorm) {
  EXPECT_LT(check({{4, 6}, {1, 6}, {1, 6}}, [](Tape&, auto& h) { return weighted_sum(layer_norm(h[0], h[1], h[2])); }),
            kPrimitiveTolerance);
}

TEST(PrimitiveGradients, Gelu) {
  EXPECT_LT(check({{3, 5}}, [](Tape&, auto& h) { return weighted_sum(gelu(h[0])); }), kPrimitiveTolerance);
}

TEST(PrimitiveGradients, Relu) {
  EXPECT_LT(check({{3, 5}}, [](Tape&, auto& h) { return weighted_sum(relu(h[0])); }), kPrimitiveTolerance);
}

TEST(PrimitiveGradients, DropoutWithFixedMask) {
  std::mt19937_64 rng(9);
  std::vector<Parameter> inputs{Parameter("x", random_matrix(6, 6, rng))};
  auto fn = [](Tape& tape, std::vector<Tensor>& h) {
    tape.set_mode(Mode::kTrain);
    tape.reseed(17);
    return weighted_sum(dropout(h[0], 0.4));
  };
  EXPECT_LT(max_gradient_error(inputs, fn), kPrimitiveTolerance);
}

TEST(PrimitiveGradients, MeanRows) {
  EXPECT_LT(check({{4, 3}}, [](Tape&, auto& h) { return weighted_sum(mean_rows(h[0])); }), kPrimitiveTolerance);
}

TEST(PrimitiveGradients, GatherRows) {
  const Index rows[] = {3, 0, 3};
  EXPECT_LT(check({{4, 3}}, [&](Tape&, auto& h) { return weighted_sum(gather_rows(h[0], rows)); }), kPrimitiveTolerance);
}

TEST(PrimitiveGradients, ConcatRowsAndCols) {
  EXPECT_LT(check({{2, 3}, {4, 3}}, [](Tape&, auto& h) {
              const Tensor parts[] = {h[0], h[1]};
              return weighted_sum(concat_rows(parts));
            }),
            kPrimitiveTolerance);
  EXPECT_LT(check({{3, 2}, {3, 4}}, [](Tape&, auto& h) {
              const Tensor parts[] = {h[0], h[1]};
              return weighted_sum(concat_cols(parts));
            }),
            kPrimitiveTolerance);
}

TEST(PrimitiveGradients, SliceCols) {
  EXPECT_LT(check({{3, 6}}, [](Tape&, auto& h) { return weighted_sum(slice_cols(h[0], 2, 3)); }), kPrimitiveTolerance);
}

TEST(PrimitiveGradients, Cosine) {
  EXPECT_LT(check({{4, 5}}, [](Tape&, auto& h) { return weighted_sum(cosine_similarity(h[0])); }), kPrimitiveTolerance);
}

TEST(PrimitiveGradients, Mse) {
  EXPECT_LT(check({{3, 4}, {3, 4}}, [](Tape&, auto& h) { return mse(h[0], h[1]); }), kPrimitiveTolerance);
}

TEST(PrimitiveGradients, CrossEntropyBatch) {
  const int targets[] = {1, 0, 2};
  EXPECT_LT(check({{3, 3}}, [&](Tape&, auto& h) { return cross_entropy(h[0], targets); }), kPrimitiveTolerance);
}

TEST(PrimitiveGradients, FaultInjectionIsDetected) {
  std::mt19937_64 rng(10);
  std::vector<Parameter> inputs{Parameter("x", random_matrix(3, 4, rng))};
  auto fn = [](Tape& tape, std::vector<Tensor>& h) {
    tape.inject_backward_fault(OpKind::kGelu, 1.5);
    return weighted_sum(gelu(h[0]));
  };
  EXPECT_GT(max_gradient_error(inputs, fn), 0.1);
}

TEST(Determinism, IdenticalForwardAndBackward) {
  std::mt19937_64 rng(12);
  const Matrix x = random_matrix(4, 4, rng);
  auto run = [&] {
    Parameter w("w", x);
    Tape tape(Mode::kTrain, 77);
    Tensor y = dropout(softmax_rows(matmul(tape.parameter(w), tape.parameter(w))), 0.5);
    Tensor loss = weighted_sum(y);
    tape.backward(loss);
    return std::pair{loss.value()(0, 0), Matrix(w.grad)};
  };
  const auto a = run();
  const auto b = run();
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
}

// Adam

TEST(Adam, ZeroGradientNoDecayLeavesParameters) {
  Parameter p("p", Matrix::Constant(2, 2, 0.7));
  Parameter* list[] = {&p};
  AdamState state = make_adam_state(list, {});
  for (int i = 0; i < 5; ++i) adam_step(list, state);
  EXPECT_EQ(p.value, Matrix::Constant(2, 2, 0.7));
  EXPECT_EQ(state.step, 5);
}

TEST(Adam, ScalarOracleOnSquare) {
  const double lr = 0.1, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  Parameter p("x", Matrix::Constant(1, 1, 1.0));
  Parameter* list[] = {&p};
  AdamConfig config;
  config.learning_rate = lr;
  AdamState state = make_adam_state(list, config);

  double x = 1.0, m = 0.0, v = 0.0;
  for (int t = 1; t <= 3; ++t) {
    Tape tape;
    p.zero_grad();
    Tensor xt = tape.parameter(p);
    tape.backward(mul(xt, xt));
    adam_step(list, state);

    const double g = 2.0 * x;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mhat = m / (1 - std::pow(b1, t));
    const double vhat = v / (1 - std::pow(b2, t));
    x -= lr * mhat / (std::sqrt(vhat) + eps);
    EXPECT_NEAR(p.value(0, 0), x, 1e-12) << "step " << t;
  }
}

TEST(Adam, ConstantGradientStepApproachesLearningRate) {
  Parameter p("p", Matrix::Zero(1, 2));
  Parameter* list[] = {&p};
  AdamConfig config;
  config.learning_rate = 0.01;
  AdamState state = make_adam_state(list, config);
  double last_step = 0.0;
  for (int i = 0; i < 2000; ++i) {
    p.grad << 3.0, -0.5;
    const Matrix before = p.value;
    adam_step(list, state);
    last_step = (p.value - before)(0, 0);
    EXPECT_LT(p.value(0, 0), before(0, 0));
    EXPECT_GT(p.value(0, 1), before(0, 1));
  }
  EXPECT_NEAR(last_step, -0.01, 1e-6);
}

TEST(Adam, DecoupledWeightDecayShrinksWithoutGradient) {
  Parameter p("p", Matrix::Constant(1, 1, 2.0));
  Parameter* list[] = {&p};
  AdamConfig config;
  config.learning_rate = 0.1;
  config.weight_decay = 0.5;
  AdamState state = make_adam_state(list, config);
  adam_step(list, state);
  EXPECT_NEAR(p.value(0, 0), 2.0 * (1 - 0.05), 1e-15);
}

TEST(Adam, ShapeMismatchThrows) {
  Parameter p("p", Matrix::Zero(2, 2));
  Parameter q("q", Matrix::Zero(3, 1));
  Parameter* one[] = {&p};
  Parameter* other[] = {&q};
  AdamState state = make_adam_state(one, {});
  EXPECT_THROW(adam_step(other, state), ShapeError);
  Parameter* two[] = {&p, &q};
  EXPECT_THROW(adam_step(two, state), ShapeError);
}

TEST(ClipGradNorm, RescalesToMaxNorm) {
  Parameter p("p", Matrix::Zero(1, 2));
  p.grad << 3.0, 4.0;
  Parameter* list[] = {&p};
  EXPECT_DOUBLE_EQ(clip_grad_norm(list, 1.0), 5.0);
  EXPECT_NEAR(p.grad.norm(), 1.0, 1e-15);
  EXPECT_DOUBLE_EQ(clip_grad_norm(list, 10.0), 1.0);
  EXPECT_NEAR(p.grad.norm(), 1.0, 1e-15);
}

}  // namespace
}  // namespace segbert::autodiff
