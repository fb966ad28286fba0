// SPDX-License-Identifier: Apache-2.0
//
// Straightforward serial kernels. They follow the definitions literally and
// are the baseline the parallel kernels are tested and benchmarked against.

#include "nca/kernels.hpp"

#include <algorithm>

namespace nca::reference {

namespace {

inline bool inside(int i, int j, const GridShape& s) {
  return i >= 0 && i < s.height && j >= 0 && j < s.width;
}

inline std::size_t at(int i, int j, int c, const GridShape& s) {
  return (static_cast<std::size_t>(i) * s.width + j) * s.channels + c;
}

template <typename T>
T conv_at(std::span<const T> x, const GridShape& s, std::span<const T> k, int i, int j, int c) {
  T acc = 0;
  for (int a = 0; a < 3; ++a) {
    for (int b = 0; b < 3; ++b) {
      const int ii = i + a - 1;
      const int jj = j + b - 1;
      if (inside(ii, jj, s)) acc += x[at(ii, jj, c, s)] * k[c * 9 + a * 3 + b];
    }
  }
  return acc;
}

}  // namespace

template <typename T>
void depthwise_conv3x3(std::span<const T> x, GridShape shape, std::span<const T> kernel,
                       std::span<T> out) {
  for (int i = 0; i < shape.height; ++i)
    for (int j = 0; j < shape.width; ++j)
      for (int c = 0; c < shape.channels; ++c)
        out[at(i, j, c, shape)] = conv_at(x, shape, kernel, i, j, c);
}

template <typename T>
void depthwise_conv3x3_backward(std::span<const T> x, GridShape shape, std::span<const T> kernel,
                                std::span<const T> grad_out, std::span<T> grad_x,
                                std::span<T> grad_kernel) {
  for (int i = 0; i < shape.height; ++i) {
    for (int j = 0; j < shape.width; ++j) {
      for (int c = 0; c < shape.channels; ++c) {
        const T g = grad_out[at(i, j, c, shape)];
        for (int a = 0; a < 3; ++a) {
          for (int b = 0; b < 3; ++b) {
            const int ii = i + a - 1;
            const int jj = j + b - 1;
            if (!inside(ii, jj, shape)) continue;
            const std::size_t tap = static_cast<std::size_t>(c) * 9 + a * 3 + b;
            if (!grad_x.empty()) grad_x[at(ii, jj, c, shape)] += g * kernel[tap];
            if (!grad_kernel.empty()) grad_kernel[tap] += g * x[at(ii, jj, c, shape)];
          }
        }
      }
    }
  }
}

template <typename T>
void perceive_rows(std::span<const T> x, GridShape shape, std::span<const T> k1,
                   std::span<const T> k2, std::span<const int> cells, std::span<T> out) {
  const int n = shape.channels;
  for (std::size_t r = 0; r < cells.size(); ++r) {
    const int i = cells[r] / shape.width;
    const int j = cells[r] % shape.width;
    T* row = out.data() + r * 3 * n;
    for (int c = 0; c < n; ++c) {
      row[c] = x[at(i, j, c, shape)];
      row[n + c] = conv_at(x, shape, k1, i, j, c);
      row[2 * n + c] = conv_at(x, shape, k2, i, j, c);
    }
  }
}

template <typename T>
void perceive_rows_backward(std::span<const T> x, GridShape shape, std::span<const T> k1,
                            std::span<const T> k2, std::span<const int> cells,
                            std::span<const T> grad_out, std::span<T> grad_x,
                            std::span<T> grad_k1, std::span<T> grad_k2) {
  const int n = shape.channels;
  for (std::size_t r = 0; r < cells.size(); ++r) {
    const int i = cells[r] / shape.width;
    const int j = cells[r] % shape.width;
    const T* g = grad_out.data() + r * 3 * n;
    for (int c = 0; c < n; ++c) {
      if (!grad_x.empty()) grad_x[at(i, j, c, shape)] += g[c];
      for (int a = 0; a < 3; ++a) {
        for (int b = 0; b < 3; ++b) {
          const int ii = i + a - 1;
          const int jj = j + b - 1;
          if (!inside(ii, jj, shape)) continue;
          const std::size_t tap = static_cast<std::size_t>(c) * 9 + a * 3 + b;
          const T xv = x[at(ii, jj, c, shape)];
          if (!grad_x.empty()) {
            grad_x[at(ii, jj, c, shape)] += g[n + c] * k1[tap];
            grad_x[at(ii, jj, c, shape)] += g[2 * n + c] * k2[tap];
          }
          if (!grad_k1.empty()) grad_k1[tap] += g[n + c] * xv;
          if (!grad_k2.empty()) grad_k2[tap] += g[2 * n + c] * xv;
        }
      }
    }
  }
}

template <typename T>
void linear(std::span<const T> x, std::size_t rows, int in, std::span<const T> weight,
            std::span<const T> bias, int out, std::span<T> y) {
  for (std::size_t r = 0; r < rows; ++r) {
    for (int o = 0; o < out; ++o) {
      T acc = bias[o];
      for (int i = 0; i < in; ++i) acc += weight[static_cast<std::size_t>(o) * in + i] * x[r * in + i];
      y[r * out + o] = acc;
    }
  }
}

template <typename T>
void linear_backward(std::span<const T> x, std::size_t rows, int in, std::span<const T> weight,
                     int out, std::span<const T> grad_y, std::span<T> grad_x,
                     std::span<T> grad_weight, std::span<T> grad_bias) {
  for (std::size_t r = 0; r < rows; ++r) {
    for (int o = 0; o < out; ++o) {
      const T g = grad_y[r * out + o];
      if (!grad_bias.empty()) grad_bias[o] += g;
      for (int i = 0; i < in; ++i) {
        const std::size_t w = static_cast<std::size_t>(o) * in + i;
        if (!grad_x.empty()) grad_x[r * in + i] += g * weight[w];
        if (!grad_weight.empty()) grad_weight[w] += g * x[r * in + i];
      }
    }
  }
}

template <typename T>
void relu(std::span<const T> x, std::span<T> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T{0} ? x[i] : T{0};
}

template <typename T>
void relu_backward(std::span<const T> x, std::span<const T> grad_y, std::span<T> grad_x) {
  for (std::size_t i = 0; i < x.size(); ++i)
    if (x[i] > T{0}) grad_x[i] += grad_y[i];
}

template <typename T>
void channel_max(std::span<const T> x, GridShape shape, std::span<T> values,
                 std::span<int> argmax) {
  const std::size_t cells = shape.cells();
  for (int c = 0; c < shape.channels; ++c) {
    std::size_t best = 0;
    for (std::size_t p = 1; p < cells; ++p)
      if (x[p * shape.channels + c] > x[best * shape.channels + c]) best = p;
    values[c] = x[best * shape.channels + c];
    argmax[c] = static_cast<int>(best);
  }
}

#define NCA_INSTANTIATE(T)                                                                       \
  template void depthwise_conv3x3<T>(std::span<const T>, GridShape, std::span<const T>,          \
                                     std::span<T>);                                              \
  template void depthwise_conv3x3_backward<T>(std::span<const T>, GridShape, std::span<const T>, \
                                              std::span<const T>, std::span<T>, std::span<T>);   \
  template void perceive_rows<T>(std::span<const T>, GridShape, std::span<const T>,              \
                                 std::span<const T>, std::span<const int>, std::span<T>);        \
  template void perceive_rows_backward<T>(std::span<const T>, GridShape, std::span<const T>,     \
                                          std::span<const T>, std::span<const int>,              \
                                          std::span<const T>, std::span<T>, std::span<T>,        \
                                          std::span<T>);                                         \
  template void linear<T>(std::span<const T>, std::size_t, int, std::span<const T>,              \
                          std::span<const T>, int, std::span<T>);                                \
  template void linear_backward<T>(std::span<const T>, std::size_t, int, std::span<const T>,     \
                                   int, std::span<const T>, std::span<T>, std::span<T>,          \
                                   std::span<T>);                                                \
  template void relu<T>(std::span<const T>, std::span<T>);                                       \
  template void relu_backward<T>(std::span<const T>, std::span<const T>, std::span<T>);          \
  template void channel_max<T>(std::span<const T>, GridShape, std::span<T>, std::span<int>);

NCA_INSTANTIATE(float)
NCA_INSTANTIATE(double)
#undef NCA_INSTANTIATE

}  // namespace nca::reference
