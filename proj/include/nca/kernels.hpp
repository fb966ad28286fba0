// SPDX-License-Identifier: Apache-2.0
#pragma once

// Grid and matrix kernels used by the tape.
//
// Two implementations share one signature set:
//   nca::kernels    OpenMP-parallel, vectorization-friendly loop orders. Weight
//                   gradients are reduced over fixed row blocks in block order,
//                   so results do not depend on the thread count.
//   nca::reference  plain serial loops, kept for testing and benchmarking.
//
// Layout conventions:
//   grid     H×W×C row-major, channels contiguous per cell
//   kernel   C×3×3, kernel[c][a][b] weights the neighbour at (i+a-1, j+b-1)
//   matrix   rows×cols row-major; linear weights are out×in
// Out-of-grid neighbours read as zero. Backward kernels accumulate into their
// gradient outputs; an empty gradient span skips that output.

#include <cstddef>
#include <span>

#include "nca/tensor.hpp"

namespace nca::kernels {

template <typename T>
void depthwise_conv3x3(std::span<const T> x, GridShape shape, std::span<const T> kernel,
                       std::span<T> out);

template <typename T>
void depthwise_conv3x3_backward(std::span<const T> x, GridShape shape, std::span<const T> kernel,
                                std::span<const T> grad_out, std::span<T> grad_x,
                                std::span<T> grad_kernel);

/// Perception rows for a subset of cells: row r is
/// [x(cell) | conv(x, k1)(cell) | conv(x, k2)(cell)], 3C wide.
template <typename T>
void perceive_rows(std::span<const T> x, GridShape shape, std::span<const T> k1,
                   std::span<const T> k2, std::span<const int> cells, std::span<T> out);

template <typename T>
void perceive_rows_backward(std::span<const T> x, GridShape shape, std::span<const T> k1,
                            std::span<const T> k2, std::span<const int> cells,
                            std::span<const T> grad_out, std::span<T> grad_x,
                            std::span<T> grad_k1, std::span<T> grad_k2);

/// y[r] = W x[r] + b for every row r.
template <typename T>
void linear(std::span<const T> x, std::size_t rows, int in, std::span<const T> weight,
            std::span<const T> bias, int out, std::span<T> y);

template <typename T>
void linear_backward(std::span<const T> x, std::size_t rows, int in, std::span<const T> weight,
                     int out, std::span<const T> grad_y, std::span<T> grad_x,
                     std::span<T> grad_weight, std::span<T> grad_bias);

template <typename T>
void relu(std::span<const T> x, std::span<T> y);

/// grad_x += grad_y where x > 0.
template <typename T>
void relu_backward(std::span<const T> x, std::span<const T> grad_y, std::span<T> grad_x);

/// Per-channel spatial maximum; ties resolve to the first cell in row-major
/// order. argmax receives flat cell indices (row * W + col).
template <typename T>
void channel_max(std::span<const T> x, GridShape shape, std::span<T> values,
                 std::span<int> argmax);

}  // namespace nca::kernels

namespace nca::reference {

template <typename T>
void depthwise_conv3x3(std::span<const T> x, GridShape shape, std::span<const T> kernel,
                       std::span<T> out);

template <typename T>
void depthwise_conv3x3_backward(std::span<const T> x, GridShape shape, std::span<const T> kernel,
                                std::span<const T> grad_out, std::span<T> grad_x,
                                std::span<T> grad_kernel);

template <typename T>
void perceive_rows(std::span<const T> x, GridShape shape, std::span<const T> k1,
                   std::span<const T> k2, std::span<const int> cells, std::span<T> out);

template <typename T>
void perceive_rows_backward(std::span<const T> x, GridShape shape, std::span<const T> k1,
                            std::span<const T> k2, std::span<const int> cells,
                            std::span<const T> grad_out, std::span<T> grad_x,
                            std::span<T> grad_k1, std::span<T> grad_k2);

template <typename T>
void linear(std::span<const T> x, std::size_t rows, int in, std::span<const T> weight,
            std::span<const T> bias, int out, std::span<T> y);

template <typename T>
void linear_backward(std::span<const T> x, std::size_t rows, int in, std::span<const T> weight,
                     int out, std::span<const T> grad_y, std::span<T> grad_x,
                     std::span<T> grad_weight, std::span<T> grad_bias);

template <typename T>
void relu(std::span<const T> x, std::span<T> y);

template <typename T>
void relu_backward(std::span<const T> x, std::span<const T> grad_y, std::span<T> grad_x);

template <typename T>
void channel_max(std::span<const T> x, GridShape shape, std::span<T> values,
                 std::span<int> argmax);

}  // namespace nca::reference
