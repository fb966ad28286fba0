// SPDX-License-Identifier: Apache-2.0

#include <omp.h>

#include <numeric>

#include "nca/kernels.hpp"
#include "test_util.hpp"

namespace nca {
namespace {

using test::random_vector;

// Direct zero-padded depthwise convolution.
template <typename T>
std::vector<T> naive_conv(const std::vector<T>& x, GridShape s, const std::vector<T>& k) {
  std::vector<T> out(s.size(), T{0});
  for (int i = 0; i < s.height; ++i)
    for (int j = 0; j < s.width; ++j)
      for (int c = 0; c < s.channels; ++c) {
        double acc = 0;
        for (int a = -1; a <= 1; ++a)
          for (int b = -1; b <= 1; ++b) {
            const int ii = i + a;
            const int jj = j + b;
            if (ii < 0 || jj < 0 || ii >= s.height || jj >= s.width) continue;
            acc += static_cast<double>(k[c * 9 + (a + 1) * 3 + (b + 1)]) *
                   x[(static_cast<std::size_t>(ii) * s.width + jj) * s.channels + c];
          }
        out[(static_cast<std::size_t>(i) * s.width + j) * s.channels + c] = static_cast<T>(acc);
      }
  return out;
}

template <typename T>
double dot(const std::vector<T>& a, const std::vector<T>& b) {
  double s = 0;
  for (std::size_t k = 0; k < a.size(); ++k) s += static_cast<double>(a[k]) * b[k];
  return s;
}

std::vector<int> every_third_cell(const GridShape& s) {
  std::vector<int> cells;
  for (int p = 0; p < static_cast<int>(s.cells()); p += 3) cells.push_back(p);
  return cells;
}

TEST(Kernels, ConvMatchesDirectLoopOnBothImplementations) {
  const GridShape s{5, 7, 3};
  const auto x = random_vector<double>(s.size(), 1);
  const auto k = random_vector<double>(27, 2);
  const auto expected = naive_conv(x, s, k);
  std::vector<double> a(s.size()), b(s.size());
  kernels::depthwise_conv3x3<double>(x, s, k, a);
  reference::depthwise_conv3x3<double>(x, s, k, b);
  EXPECT_LT(test::max_abs_diff(a, expected), 1e-12);
  EXPECT_LT(test::max_abs_diff(b, expected), 1e-12);
}

TEST(Kernels, ConvHandComputedCorner) {
  // 3×3 single channel of ones, kernel of ones: the corner sees 4 cells, the
  // edge 6 and the centre 9.
  const GridShape s{3, 3, 1};
  const std::vector<float> x(9, 1.0f), k(9, 1.0f);
  std::vector<float> out(9);
  kernels::depthwise_conv3x3<float>(x, s, k, out);
  EXPECT_FLOAT_EQ(out[0], 4.0f);
  EXPECT_FLOAT_EQ(out[1], 6.0f);
  EXPECT_FLOAT_EQ(out[4], 9.0f);
}

TEST(Kernels, ConvIsLinearInInput) {
  const GridShape s{6, 4, 2};
  const auto x = random_vector<double>(s.size(), 3);
  const auto y = random_vector<double>(s.size(), 4);
  const auto k = random_vector<double>(18, 5);
  std::vector<double> xy(s.size());
  for (std::size_t p = 0; p < xy.size(); ++p) xy[p] = 2.0 * x[p] - 3.0 * y[p];
  std::vector<double> cx(s.size()), cy(s.size()), cxy(s.size());
  kernels::depthwise_conv3x3<double>(x, s, k, cx);
  kernels::depthwise_conv3x3<double>(y, s, k, cy);
  kernels::depthwise_conv3x3<double>(xy, s, k, cxy);
  for (std::size_t p = 0; p < xy.size(); ++p) EXPECT_NEAR(cxy[p], 2.0 * cx[p] - 3.0 * cy[p], 1e-12);
}

// <conv(x), g> = <x, conv^T g> and, since the conv is linear in k,
// <conv(x), g> = <k, dL/dk>.
TEST(Kernels, ConvBackwardSatisfiesAdjointIdentities) {
  const GridShape s{7, 5, 4};
  const auto x = random_vector<double>(s.size(), 6);
  const auto k = random_vector<double>(36, 7);
  const auto g = random_vector<double>(s.size(), 8);
  std::vector<double> y(s.size());
  kernels::depthwise_conv3x3<double>(x, s, k, y);
  const double lhs = dot(y, g);
  for (int impl = 0; impl < 2; ++impl) {
    std::vector<double> gx(s.size(), 0.0), gk(36, 0.0);
    if (impl == 0) kernels::depthwise_conv3x3_backward<double>(x, s, k, g, gx, gk);
    else reference::depthwise_conv3x3_backward<double>(x, s, k, g, gx, gk);
    EXPECT_NEAR(dot(x, gx), lhs, 1e-10) << impl;
    EXPECT_NEAR(dot(k, gk), lhs, 1e-10) << impl;
  }
}

TEST(Kernels, BackwardAccumulatesAndSkipsEmptyOutputs) {
  const GridShape s{4, 4, 2};
  const auto x = random_vector<double>(s.size(), 9);
  const auto k = random_vector<double>(18, 10);
  const auto g = random_vector<double>(s.size(), 11);
  std::vector<double> once(s.size(), 0.0), twice(s.size(), 0.0);
  kernels::depthwise_conv3x3_backward<double>(x, s, k, g, once, {});
  kernels::depthwise_conv3x3_backward<double>(x, s, k, g, twice, {});
  kernels::depthwise_conv3x3_backward<double>(x, s, k, g, twice, {});
  for (std::size_t p = 0; p < once.size(); ++p) EXPECT_NEAR(twice[p], 2 * once[p], 1e-12);
}

TEST(Kernels, PerceiveRowsEqualsFullPerceptionAtListedCells) {
  const GridShape s{6, 5, 3};
  const auto x = random_vector<double>(s.size(), 12);
  const auto k1 = random_vector<double>(27, 13);
  const auto k2 = random_vector<double>(27, 14);
  const auto c1 = naive_conv(x, s, k1);
  const auto c2 = naive_conv(x, s, k2);
  const auto cells = every_third_cell(s);
  const std::size_t n = 3;
  for (int impl = 0; impl < 2; ++impl) {
    std::vector<double> rows(cells.size() * 3 * n);
    if (impl == 0) kernels::perceive_rows<double>(x, s, k1, k2, cells, rows);
    else reference::perceive_rows<double>(x, s, k1, k2, cells, rows);
    for (std::size_t r = 0; r < cells.size(); ++r)
      for (std::size_t c = 0; c < n; ++c) {
        const std::size_t src = static_cast<std::size_t>(cells[r]) * n + c;
        EXPECT_DOUBLE_EQ(rows[r * 3 * n + c], x[src]);
        EXPECT_NEAR(rows[r * 3 * n + n + c], c1[src], 1e-12);
        EXPECT_NEAR(rows[r * 3 * n + 2 * n + c], c2[src], 1e-12);
      }
  }
}

TEST(Kernels, PerceiveRowsBackwardSatisfiesAdjointIdentity) {
  const GridShape s{6, 7, 5};
  const auto x = random_vector<double>(s.size(), 15);
  const auto k1 = random_vector<double>(45, 16);
  const auto k2 = random_vector<double>(45, 17);
  const auto cells = every_third_cell(s);
  const auto g = random_vector<double>(cells.size() * 15, 18);
  std::vector<double> rows(g.size());
  kernels::perceive_rows<double>(x, s, k1, k2, cells, rows);
  const double lhs = dot(rows, g);
  for (int impl = 0; impl < 2; ++impl) {
    std::vector<double> gx(s.size(), 0.0), gk1(45, 0.0), gk2(45, 0.0);
    if (impl == 0) kernels::perceive_rows_backward<double>(x, s, k1, k2, cells, g, gx, gk1, gk2);
    else reference::perceive_rows_backward<double>(x, s, k1, k2, cells, g, gx, gk1, gk2);
    EXPECT_NEAR(dot(x, gx), lhs, 1e-10);
    // The identity block does not depend on the kernels.
    double identity = 0;
    for (std::size_t r = 0; r < cells.size(); ++r)
      for (std::size_t c = 0; c < 5; ++c) identity += rows[r * 15 + c] * g[r * 15 + c];
    EXPECT_NEAR(dot(k1, gk1) + dot(k2, gk2), lhs - identity, 1e-10);
  }
}

TEST(Kernels, LinearMatchesDirectLoop) {
  const std::size_t rows = 7;
  const int in = 19, out = 21;  // odd sizes exercise the tile remainders
  const auto x = random_vector<double>(rows * in, 19);
  const auto w = random_vector<double>(static_cast<std::size_t>(in) * out, 20);
  const auto b = random_vector<double>(out, 21);
  std::vector<double> expected(rows * out);
  for (std::size_t r = 0; r < rows; ++r)
    for (int o = 0; o < out; ++o) {
      double acc = b[o];
      for (int i = 0; i < in; ++i) acc += w[o * in + i] * x[r * in + i];
      expected[r * out + o] = acc;
    }
  std::vector<double> y1(rows * out), y2(rows * out);
  kernels::linear<double>(x, rows, in, w, b, out, y1);
  reference::linear<double>(x, rows, in, w, b, out, y2);
  EXPECT_LT(test::max_abs_diff(y1, expected), 1e-12);
  EXPECT_LT(test::max_abs_diff(y2, expected), 1e-12);
}

TEST(Kernels, LinearBackwardMatchesDirectLoops) {
  const std::size_t rows = 70;  // spans more than one reduction block
  const int in = 13, out = 9;
  const auto x = random_vector<double>(rows * in, 22);
  const auto w = random_vector<double>(static_cast<std::size_t>(in) * out, 23);
  const auto g = random_vector<double>(rows * out, 24);
  std::vector<double> ex(rows * in, 0.0), ew(w.size(), 0.0), eb(out, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (int o = 0; o < out; ++o) {
      eb[o] += g[r * out + o];
      for (int i = 0; i < in; ++i) {
        ex[r * in + i] += g[r * out + o] * w[o * in + i];
        ew[o * in + i] += g[r * out + o] * x[r * in + i];
      }
    }
  for (int impl = 0; impl < 2; ++impl) {
    std::vector<double> gx(ex.size(), 0.0), gw(ew.size(), 0.0), gb(out, 0.0);
    if (impl == 0) kernels::linear_backward<double>(x, rows, in, w, out, g, gx, gw, gb);
    else reference::linear_backward<double>(x, rows, in, w, out, g, gx, gw, gb);
    EXPECT_LT(test::max_abs_diff(gx, ex), 1e-12);
    EXPECT_LT(test::max_abs_diff(gw, ew), 1e-12);
    EXPECT_LT(test::max_abs_diff(gb, eb), 1e-12);
  }
}

TEST(Kernels, ReluAndBackward) {
  const std::vector<float> x{-2.0f, 0.0f, 3.0f, -0.5f, 1.5f};
  std::vector<float> y(5);
  kernels::relu<float>(x, y);
  EXPECT_EQ(y, (std::vector<float>{0.0f, 0.0f, 3.0f, 0.0f, 1.5f}));
  std::vector<float> gx(5, 1.0f);
  const std::vector<float> gy{10, 20, 30, 40, 50};
  kernels::relu_backward<float>(x, gy, gx);
  EXPECT_EQ(gx, (std::vector<float>{1, 1, 31, 1, 51}));
}

TEST(Kernels, ChannelMaxBreaksTiesTowardsFirstCell) {
  const GridShape s{3, 3, 2};
  std::vector<float> x(s.size(), 0.0f);
  // Channel 0: maximum 5 at cells 4 and 7 → 4. Channel 1: all equal → 0.
  x[4 * 2 + 0] = 5.0f;
  x[7 * 2 + 0] = 5.0f;
  std::vector<float> values(2);
  std::vector<int> argmax(2);
  for (int impl = 0; impl < 2; ++impl) {
    if (impl == 0) kernels::channel_max<float>(x, s, values, argmax);
    else reference::channel_max<float>(x, s, values, argmax);
    EXPECT_EQ(values, (std::vector<float>{5.0f, 0.0f}));
    EXPECT_EQ(argmax, (std::vector<int>{4, 0}));
  }
}

TEST(Kernels, ConvOfZeroInputIsZero) {
  const GridShape s{4, 4, 2};
  const std::vector<float> x(s.size(), 0.0f);
  const auto k = random_vector<float>(18, 40);
  std::vector<float> out(s.size(), 1.0f);
  kernels::depthwise_conv3x3<float>(x, s, k, out);
  EXPECT_EQ(test::max_abs(out), 0.0);
}

TEST(Kernels, CentreOneKernelIsIdentity) {
  const GridShape s{5, 6, 3};
  const auto x = random_vector<float>(s.size(), 41);
  std::vector<float> k(27, 0.0f);
  for (int c = 0; c < 3; ++c) k[static_cast<std::size_t>(c * 9 + 4)] = 1.0f;
  std::vector<float> a(s.size()), b(s.size());
  kernels::depthwise_conv3x3<float>(x, s, k, a);
  reference::depthwise_conv3x3<float>(x, s, k, b);
  EXPECT_EQ(a, x);
  EXPECT_EQ(b, x);
}

TEST(Kernels, LinearIdentityAndZeroInput) {
  const int n = 4;
  std::vector<double> eye(16, 0.0);
  for (int i = 0; i < n; ++i) eye[static_cast<std::size_t>(i * n + i)] = 1.0;
  const std::vector<double> zero_bias(4, 0.0);
  const auto x = random_vector<double>(3 * 4, 42);
  std::vector<double> y(12);
  kernels::linear<double>(x, 3, n, eye, zero_bias, n, y);
  EXPECT_EQ(y, x);

  const auto w = random_vector<double>(3 * 4, 43);
  const std::vector<double> bias{0.5, -1.5, 2.0};
  const std::vector<double> zeros(2 * 4, 0.0);
  std::vector<double> out(6);
  kernels::linear<double>(zeros, 2, 4, w, bias, 3, out);
  EXPECT_EQ(out, (std::vector<double>{0.5, -1.5, 2.0, 0.5, -1.5, 2.0}));
}

TEST(Kernels, ReluExamplesAndFiniteDifferenceSlopes) {
  const std::vector<double> x{-1.0, 0.0, 2.0};
  std::vector<double> y(3);
  kernels::relu<double>(x, y);
  EXPECT_EQ(y, (std::vector<double>{0.0, 0.0, 2.0}));
  const std::vector<double> neg{-3.0, -0.1, -7.0};
  kernels::relu<double>(neg, y);
  EXPECT_EQ(test::max_abs(y), 0.0);

  const auto relu_at = [](double v) {
    std::vector<double> in{v}, out(1);
    kernels::relu<double>(in, out);
    return out[0];
  };
  for (double at : {2.0, -2.0}) {
    const double h = 1e-4;
    const double fd = (relu_at(at + h) - relu_at(at - h)) / (2 * h);
    std::vector<double> g(1, 0.0);
    kernels::relu_backward<double>(std::vector<double>{at}, std::vector<double>{1.0}, g);
    EXPECT_NEAR(g[0], fd, 1e-9);
    EXPECT_EQ(g[0], at > 0 ? 1.0 : 0.0);
  }
}

TEST(Kernels, ChannelMaxExamplesAndExhaustiveScan) {
  {
    const GridShape s{4, 4, 1};
    const std::vector<float> x(s.size(), 0.7f);
    std::vector<float> v(1);
    std::vector<int> pos(1);
    kernels::channel_max<float>(x, s, v, pos);
    EXPECT_EQ(v[0], 0.7f);
    EXPECT_EQ(pos[0], 0);
  }
  {
    const GridShape s{5, 6, 2};
    std::vector<float> x(s.size(), 0.0f);
    x[(2 * 6 + 3) * 2 + 1] = 5.0f;
    std::vector<float> v(2);
    std::vector<int> pos(2);
    kernels::channel_max<float>(x, s, v, pos);
    EXPECT_EQ(v[1], 5.0f);
    EXPECT_EQ(pos[1], 2 * 6 + 3);
  }
  const GridShape s{8, 8, 4};
  const auto x = random_vector<float>(s.size(), 44);
  std::vector<float> v(4);
  std::vector<int> pos(4);
  kernels::channel_max<float>(x, s, v, pos);
  for (int c = 0; c < 4; ++c) {
    int best = 0;
    for (int p = 1; p < 64; ++p)
      if (x[static_cast<std::size_t>(p * 4 + c)] > x[static_cast<std::size_t>(best * 4 + c)]) best = p;
    EXPECT_EQ(pos[static_cast<std::size_t>(c)], best);
    EXPECT_EQ(v[static_cast<std::size_t>(c)], x[static_cast<std::size_t>(best * 4 + c)]);
  }
}

TEST(Kernels, ParallelAndReferenceAgreeOnStandardSizes) {
  const GridShape s{64, 64, 16};
  const auto x = random_vector<float>(s.size(), 25);
  const auto k1 = random_vector<float>(16 * 9, 26);
  const auto k2 = random_vector<float>(16 * 9, 27);
  std::vector<int> cells;
  for (int p = 0; p < 4096; p += 2) cells.push_back(p);
  std::vector<float> r1(cells.size() * 48), r2(cells.size() * 48);
  kernels::perceive_rows<float>(x, s, k1, k2, cells, r1);
  reference::perceive_rows<float>(x, s, k1, k2, cells, r2);
  EXPECT_LT(test::max_abs_diff(r1, r2), 1e-5);

  const auto g = random_vector<float>(r1.size(), 28);
  std::vector<float> gx1(s.size()), gx2(s.size()), a1(144), a2(144), b1(144), b2(144);
  kernels::perceive_rows_backward<float>(x, s, k1, k2, cells, g, gx1, a1, b1);
  reference::perceive_rows_backward<float>(x, s, k1, k2, cells, g, gx2, a2, b2);
  EXPECT_LT(test::max_abs_diff(gx1, gx2), 1e-4);
  EXPECT_LT(test::max_abs_diff(a1, a2), 1e-4 * test::max_abs(a2));
  EXPECT_LT(test::max_abs_diff(b1, b2), 1e-4 * test::max_abs(b2));

  const auto w = random_vector<float>(32 * 48, 29);
  const auto b = random_vector<float>(32, 30);
  std::vector<float> y1(cells.size() * 32), y2(cells.size() * 32);
  kernels::linear<float>(r1, cells.size(), 48, w, b, 32, y1);
  reference::linear<float>(r1, cells.size(), 48, w, b, 32, y2);
  EXPECT_LT(test::max_abs_diff(y1, y2), 1e-4);
}

// Weight gradients reduce over fixed blocks, so the result must not change
// with the number of threads, bit for bit.
TEST(Kernels, ResultsDoNotDependOnThreadCount) {
  const GridShape s{64, 64, 16};
  const auto x = random_vector<float>(s.size(), 31);
  const auto k1 = random_vector<float>(144, 32);
  const auto k2 = random_vector<float>(144, 33);
  std::vector<int> cells;
  for (int p = 0; p < 4096; p += 2) cells.push_back(p);
  const auto g = random_vector<float>(cells.size() * 48, 34);
  const auto w = random_vector<float>(32 * 48, 35);
  const auto gy = random_vector<float>(cells.size() * 32, 36);

  auto run = [&](int threads) {
    omp_set_num_threads(threads);
    std::vector<float> out;
    std::vector<float> gx(s.size()), a(144), b(144);
    kernels::perceive_rows_backward<float>(x, s, k1, k2, cells, g, gx, a, b);
    std::vector<float> gw(w.size()), gb(32), gin(cells.size() * 48);
    kernels::linear_backward<float>(g, cells.size(), 48, w, 32, gy, gin, gw, gb);
    for (auto* v : {&gx, &a, &b, &gw, &gb, &gin}) out.insert(out.end(), v->begin(), v->end());
    return out;
  };
  const int saved = omp_get_max_threads();
  const auto one = run(1);
  const auto four = run(4);
  omp_set_num_threads(saved);
  EXPECT_EQ(one, four);
}

}  // namespace
}  // namespace nca
