// SPDX-License-Identifier: Apache-2.0

#include <functional>

#include "nca/tape.hpp"
#include "test_util.hpp"

namespace nca {
namespace {

using test::random_vector;
using Inputs = std::vector<Tensor<double>>;
using Builder = std::function<Var(Tape<double>&, const std::vector<Var>&)>;

double forward_value(const Inputs& inputs, const Builder& build) {
  Tape<double> tape;
  std::vector<Var> vars;
  for (const auto& t : inputs) vars.push_back(tape.leaf(t, true));
  return tape.value(build(tape, vars)).data[0];
}

// Compares tape gradients of every input with central differences.
void expect_gradients_match(const Inputs& inputs, const Builder& build, double tol = 1e-7) {
  Tape<double> tape;
  std::vector<Var> vars;
  for (const auto& t : inputs) vars.push_back(tape.leaf(t, true));
  const Var loss = build(tape, vars);
  tape.backward(loss);
  const double h = 1e-6;
  for (std::size_t a = 0; a < inputs.size(); ++a) {
    const auto& analytic = tape.grad(vars[a]);
    for (std::size_t k = 0; k < inputs[a].size(); ++k) {
      Inputs plus = inputs, minus = inputs;
      plus[a].data[k] += h;
      minus[a].data[k] -= h;
      const double fd = (forward_value(plus, build) - forward_value(minus, build)) / (2 * h);
      EXPECT_NEAR(analytic.data[k], fd, tol * std::max(1.0, std::abs(fd))) << "input " << a << " element " << k;
    }
  }
}

Tensor<double> random_tensor(std::vector<int> shape, std::uint64_t seed) {
  const auto n = shape_size(shape);
  return Tensor<double>(std::move(shape), random_vector<double>(n, seed));
}

// Weighted sum of all outputs as a generic scalar head.
Var head(Tape<double>& tape, Var x, std::uint64_t seed) {
  return tape.dot(x, random_vector<double>(tape.value(x).size(), seed));
}

TEST(Tape, SquareOfThreeHasGradientSix) {
  Tape<double> tape;
  const Var x = tape.leaf(Tensor<double>({1}, {3.0}), true);
  const Var y = tape.sum(tape.square(x));
  EXPECT_DOUBLE_EQ(tape.value(y).data[0], 9.0);
  tape.backward(y);
  EXPECT_DOUBLE_EQ(tape.grad(x).data[0], 6.0);
}

TEST(Tape, Conv3x3GradientMatchesFiniteDifferences) {
  expect_gradients_match({random_tensor({4, 5, 2}, 1), random_tensor({2, 3, 3}, 2)},
                         [](Tape<double>& t, const std::vector<Var>& v) { return head(t, t.conv3x3(v[0], v[1]), 3); });
}

TEST(Tape, PerceiveRowsGradientMatchesFiniteDifferences) {
  expect_gradients_match(
      {random_tensor({4, 4, 3}, 4), random_tensor({3, 3, 3}, 5), random_tensor({3, 3, 3}, 6)},
      [](Tape<double>& t, const std::vector<Var>& v) {
        return head(t, t.perceive_rows(v[0], v[1], v[2], {0, 3, 5, 6, 10, 15}), 7);
      });
}

TEST(Tape, LinearGradientMatchesFiniteDifferences) {
  expect_gradients_match({random_tensor({5, 4}, 8), random_tensor({3, 4}, 9), random_tensor({3}, 10)},
                         [](Tape<double>& t, const std::vector<Var>& v) { return head(t, t.linear(v[0], v[1], v[2]), 11); });
}

TEST(Tape, ReluGradientMatchesFiniteDifferences) {
  expect_gradients_match({random_tensor({3, 7}, 12)},
                         [](Tape<double>& t, const std::vector<Var>& v) { return head(t, t.relu(v[0]), 13); });
}

TEST(Tape, ScatterAddRowsGradientMatchesFiniteDifferences) {
  expect_gradients_match({random_tensor({3, 4, 2}, 14), random_tensor({3, 2}, 15)},
                         [](Tape<double>& t, const std::vector<Var>& v) {
                           return head(t, t.scatter_add_rows(v[0], v[1], {1, 7, 11}), 16);
                         });
}

TEST(Tape, ChannelMaxGradientMatchesFiniteDifferences) {
  expect_gradients_match({random_tensor({3, 4, 3}, 17)},
                         [](Tape<double>& t, const std::vector<Var>& v) { return head(t, t.channel_max(v[0]), 18); });
}

TEST(Tape, ChannelMaxRoutesGradientToTheWinner) {
  Tape<double> tape;
  Tensor<double> x({3, 3, 1});
  x.data[5] = 2.0;
  const Var v = tape.leaf(x, true);
  const Var m = tape.channel_max(v);
  EXPECT_EQ(tape.argmax(m)[0], 5);
  tape.backward(tape.sum(m));
  for (int p = 0; p < 9; ++p) EXPECT_DOUBLE_EQ(tape.grad(v).data[static_cast<std::size_t>(p)], p == 5 ? 1.0 : 0.0);
}

TEST(Tape, CrossEntropyGradientsMatchFiniteDifferences) {
  for (int label = 0; label < 4; ++label) {
    expect_gradients_match({random_tensor({4}, 19)}, [label](Tape<double>& t, const std::vector<Var>& v) {
      return t.softmax_cross_entropy(v[0], label);
    });
    expect_gradients_match({random_tensor({4}, 20)}, [label](Tape<double>& t, const std::vector<Var>& v) {
      return t.sigmoid_cross_entropy(v[0], label);
    });
  }
}

TEST(Tape, SoftmaxCrossEntropyOfEqualLogitsIsLogClassCount) {
  Tape<double> tape;
  const Var z = tape.leaf(Tensor<double>({13}, 0.7));
  EXPECT_NEAR(tape.value(tape.softmax_cross_entropy(z, 4)).data[0], std::log(13.0), 1e-12);
}

TEST(Tape, SigmoidCrossEntropyMatchesDirectFormula) {
  const std::vector<double> z{0.3, -1.2, 2.0};
  Tape<double> tape;
  const Var v = tape.leaf(Tensor<double>({3}, z));
  double expected = 0;
  for (int k = 0; k < 3; ++k) {
    const double p = 1.0 / (1.0 + std::exp(-z[static_cast<std::size_t>(k)]));
    expected -= k == 1 ? std::log(p) : std::log(1 - p);
  }
  EXPECT_NEAR(tape.value(tape.sigmoid_cross_entropy(v, 1)).data[0], expected, 1e-12);
}

TEST(Tape, ComposedGraphMatchesFiniteDifferences) {
  // A miniature two-step automaton: perceive, MLP, scatter, repeat, pool.
  expect_gradients_match(
      {random_tensor({4, 4, 3}, 21), random_tensor({3, 3, 3}, 22), random_tensor({3, 3, 3}, 23),
       random_tensor({5, 9}, 24), random_tensor({5}, 25), random_tensor({3, 5}, 26), random_tensor({3}, 27)},
      [](Tape<double>& t, const std::vector<Var>& v) {
        Var state = v[0];
        const std::vector<std::vector<int>> masks{{0, 2, 5, 9, 14}, {1, 5, 6, 7, 12, 15}};
        for (const auto& cells : masks) {
          const Var p = t.perceive_rows(state, v[1], v[2], cells);
          const Var u = t.linear(t.relu(t.linear(p, v[3], v[4])), v[5], v[6]);
          state = t.scatter_add_rows(state, u, cells);
        }
        return t.softmax_cross_entropy(t.channel_max(state), 1);
      },
      1e-6);
}

TEST(Tape, Errors) {
  Tape<double> empty;
  EXPECT_NCA_ERROR(empty.backward(Var{0}), ErrorCode::kInvalidState);

  Tape<double> tape;
  const Var x = tape.leaf(Tensor<double>({2}, {1.0, 2.0}), true);
  EXPECT_NCA_ERROR(tape.grad(x), ErrorCode::kInvalidState);
  EXPECT_NCA_ERROR(tape.backward(x), ErrorCode::kShapeMismatch);
  EXPECT_NCA_ERROR(tape.backward(Var{42}), ErrorCode::kInvalidState);
  EXPECT_NCA_ERROR(tape.value(Var{}), ErrorCode::kInvalidState);
  EXPECT_NCA_ERROR(tape.softmax_cross_entropy(x, 2), ErrorCode::kInvalidArgument);

  const Var g = tape.leaf(Tensor<double>({3, 3, 2}), true);
  const Var k = tape.leaf(Tensor<double>({3, 3, 3}), true);
  EXPECT_NCA_ERROR(tape.conv3x3(g, k), ErrorCode::kShapeMismatch);
  EXPECT_NCA_ERROR(tape.scatter_add_rows(g, x, {0}), ErrorCode::kShapeMismatch);
  const Var w = tape.leaf(Tensor<double>({4, 3}), true);
  const Var b = tape.leaf(Tensor<double>({4}), true);
  EXPECT_NCA_ERROR(tape.linear(x, w, b), ErrorCode::kShapeMismatch);

  const Var sq = tape.square(x);
  tape.backward(tape.sum(sq));
  EXPECT_NCA_ERROR(tape.grad(sq), ErrorCode::kInvalidState);
}

TEST(Tape, UnreachedLeavesReportZeros) {
  Tape<double> tape;
  const Var x = tape.leaf(Tensor<double>({2}, {1.0, 2.0}), true);
  const Var unused = tape.leaf(Tensor<double>({3}, 1.0), true);
  tape.backward(tape.sum(x));
  EXPECT_EQ(tape.grad(unused).data, std::vector<double>(3, 0.0));
}

TEST(Tape, NoGradientFlowsIntoConstantLeaves) {
  Tape<double> tape;
  const Var c = tape.leaf(Tensor<double>({2}, {1.0, 2.0}), false);
  const Var x = tape.leaf(Tensor<double>({1, 2}, {3.0, 4.0}), true);
  const Var y = tape.sum(tape.scatter_add_rows(tape.leaf(Tensor<double>({3, 3, 2}), false), x, {0}));
  tape.backward(y);
  EXPECT_EQ(tape.grad(x).data, (std::vector<double>{1.0, 1.0}));
  EXPECT_EQ(tape.grad(c).data, (std::vector<double>{0.0, 0.0}));
}

TEST(Tape, FloatAndDoubleAgreeOnForwardValues) {
  const auto x = random_vector<double>(4 * 4 * 3, 30);
  const auto k = random_vector<double>(27, 31);
  Tape<double> td;
  Tape<float> tf;
  const Var yd = td.conv3x3(td.leaf(Tensor<double>({4, 4, 3}, x)), td.leaf(Tensor<double>({3, 3, 3}, k)));
  const Var yf = tf.conv3x3(tf.leaf(Tensor<float>({4, 4, 3}, std::vector<float>(x.begin(), x.end()))),
                            tf.leaf(Tensor<float>({3, 3, 3}, std::vector<float>(k.begin(), k.end()))));
  EXPECT_LT(test::max_abs_diff(td.value(yd).data, tf.value(yf).data), 1e-5);
}

}  // namespace
}  // namespace nca
