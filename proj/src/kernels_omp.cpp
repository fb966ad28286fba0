// SPDX-License-Identifier: Apache-2.0

#include "nca/kernels.hpp"

#include <algorithm>
#include <cstring>
#include <vector>

#include <omp.h>

namespace nca::kernels {

namespace {

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kParallelWork = 1 << 15;

// Row block for weight-gradient partial sums. Fixed so the reduction order
// never depends on the number of threads.
constexpr std::size_t kRowBlock = 64;

inline bool go_parallel(std::size_t work) {
  return work >= kParallelWork && omp_get_max_threads() > 1 && !omp_in_parallel();
}

// Runs body(i) for i in [0, n). The serial path is a plain loop because an
// OpenMP region with a false if-clause still runs the slower outlined body.
template <typename Index, typename Body>
inline void parallel_for(Index n, std::size_t work, Body&& body) {
  if (go_parallel(work)) {
#pragma omp parallel for schedule(static)
    for (Index i = 0; i < n; ++i) body(i);
  } else {
    for (Index i = 0; i < n; ++i) body(i);
  }
}

// C×3×3 → 9×C so the channel loop is the contiguous one.
template <typename T>
std::vector<T> tap_major(std::span<const T> kernel, int channels) {
  std::vector<T> out(static_cast<std::size_t>(channels) * 9);
  for (int c = 0; c < channels; ++c)
    for (int t = 0; t < 9; ++t) out[static_cast<std::size_t>(t) * channels + c] = kernel[c * 9 + t];
  return out;
}

template <typename T>
inline void conv_cell(const T* x, const GridShape& s, const T* taps, int i, int j, T* out) {
  const int n = s.channels;
  for (int c = 0; c < n; ++c) out[c] = T{0};
  for (int a = 0; a < 3; ++a) {
    const int ii = i + a - 1;
    if (ii < 0 || ii >= s.height) continue;
    for (int b = 0; b < 3; ++b) {
      const int jj = j + b - 1;
      if (jj < 0 || jj >= s.width) continue;
      const T* xn = x + (static_cast<std::size_t>(ii) * s.width + jj) * n;
      const T* k = taps + static_cast<std::size_t>(a * 3 + b) * n;
      for (int c = 0; c < n; ++c) out[c] += xn[c] * k[c];
    }
  }
}

// Transposed convolution, gather form: each input cell collects from the
// output cells whose 3×3 window covers it. Rows are independent.
template <typename T>
void conv_grad_input(const T* grad_out, const GridShape& s, const T* taps, T* grad_x) {
  const int n = s.channels;
  parallel_for(s.height, s.size() * 9, [&](int i) {
    for (int j = 0; j < s.width; ++j) {
      T* gx = grad_x + (static_cast<std::size_t>(i) * s.width + j) * n;
      for (int a = 0; a < 3; ++a) {
        const int oi = i - a + 1;
        if (oi < 0 || oi >= s.height) continue;
        for (int b = 0; b < 3; ++b) {
          const int oj = j - b + 1;
          if (oj < 0 || oj >= s.width) continue;
          const T* g = grad_out + (static_cast<std::size_t>(oi) * s.width + oj) * n;
          const T* k = taps + static_cast<std::size_t>(a * 3 + b) * n;
          for (int c = 0; c < n; ++c) gx[c] += g[c] * k[c];
        }
      }
    }
  });
}

// Kernel gradient with one partial per output row, summed in row order.
template <typename T>
void conv_grad_kernel(const T* x, const GridShape& s, const T* grad_out, T* grad_kernel) {
  const int n = s.channels;
  const std::size_t slab = static_cast<std::size_t>(9) * n;
  std::vector<T> partial(static_cast<std::size_t>(s.height) * slab, T{0});
  parallel_for(s.height, s.size() * 9, [&](int i) {
    T* acc = partial.data() + static_cast<std::size_t>(i) * slab;
    for (int j = 0; j < s.width; ++j) {
      const T* g = grad_out + (static_cast<std::size_t>(i) * s.width + j) * n;
      for (int a = 0; a < 3; ++a) {
        const int ii = i + a - 1;
        if (ii < 0 || ii >= s.height) continue;
        for (int b = 0; b < 3; ++b) {
          const int jj = j + b - 1;
          if (jj < 0 || jj >= s.width) continue;
          const T* xn = x + (static_cast<std::size_t>(ii) * s.width + jj) * n;
          T* k = acc + static_cast<std::size_t>(a * 3 + b) * n;
          for (int c = 0; c < n; ++c) k[c] += g[c] * xn[c];
        }
      }
    }
  });
  for (int i = 0; i < s.height; ++i) {
    const T* acc = partial.data() + static_cast<std::size_t>(i) * slab;
    for (int t = 0; t < 9; ++t)
      for (int c = 0; c < n; ++c) grad_kernel[c * 9 + t] += acc[static_cast<std::size_t>(t) * n + c];
  }
}

// Dense products use one 512-bit vector (GCC vector extension) per
// accumulator so the tile stays in registers; narrower targets lower it.
template <typename T>
struct Lane;
template <>
struct Lane<float> {
  typedef float type __attribute__((vector_size(64)));
};
template <>
struct Lane<double> {
  typedef double type __attribute__((vector_size(64)));
};

template <typename T>
constexpr int kLaneWidth = static_cast<int>(64 / sizeof(T));
constexpr int kTileRows = 4;

template <typename V, typename T>
inline V load_lane(const T* p) {
  V v;
  std::memcpy(&v, p, sizeof v);
  return v;
}

template <typename V, typename T>
inline void store_lane(T* p, const V& v) {
  std::memcpy(p, &v, sizeof v);
}

// c[r][0..n) += Σ_k a[r][k] · b[k][0..n) for R consecutive rows.
template <int R, typename T>
inline void rows_tile(const T* a, int k, const T* b, int n, T* c) {
  using V = typename Lane<T>::type;
  constexpr int W = kLaneWidth<T>;
  int o0 = 0;
  for (; o0 + W <= n; o0 += W) {
    V acc[R];
    for (int rr = 0; rr < R; ++rr) acc[rr] = load_lane<V>(c + rr * n + o0);
    for (int kk = 0; kk < k; ++kk) {
      const V bv = load_lane<V>(b + static_cast<std::size_t>(kk) * n + o0);
      for (int rr = 0; rr < R; ++rr) acc[rr] += a[rr * k + kk] * bv;
    }
    for (int rr = 0; rr < R; ++rr) store_lane(c + rr * n + o0, acc[rr]);
  }
  for (int rr = 0; rr < R; ++rr)
    for (int o = o0; o < n; ++o) {
      T sum = c[rr * n + o];
      for (int kk = 0; kk < k; ++kk) sum += a[rr * k + kk] * b[static_cast<std::size_t>(kk) * n + o];
      c[rr * n + o] = sum;
    }
}

// c (rows×n) += a (rows×k) · b (k×n). Rows are independent, so the result
// does not depend on the thread count.
template <typename T>
void rows_times_matrix(const T* a, std::size_t rows, int k, const T* b, int n, T* c) {
  const auto tiles = static_cast<std::ptrdiff_t>(rows / kTileRows);
  parallel_for(tiles, rows * k * n, [&](std::ptrdiff_t t) {
    const std::size_t r = static_cast<std::size_t>(t) * kTileRows;
    rows_tile<kTileRows>(a + r * k, k, b, n, c + r * n);
  });
  for (std::size_t r = static_cast<std::size_t>(tiles) * kTileRows; r < rows; ++r)
    rows_tile<1>(a + r * k, k, b, n, c + r * n);
}

// g[o][i] += Σ_{r in [r0, r1)} a[r][o] · x[r][i]; a is rows×m, x is rows×n.
template <typename T>
void transposed_product(const T* a, int m, const T* x, int n, std::size_t r0, std::size_t r1, T* g) {
  using V = typename Lane<T>::type;
  constexpr int W = kLaneWidth<T>;
  int o0 = 0;
  for (; o0 + kTileRows <= m; o0 += kTileRows) {
    int i0 = 0;
    for (; i0 + W <= n; i0 += W) {
      V acc[kTileRows] = {};
      for (std::size_t r = r0; r < r1; ++r) {
        const V xv = load_lane<V>(x + r * n + i0);
        const T* ar = a + r * m + o0;
        for (int oo = 0; oo < kTileRows; ++oo) acc[oo] += ar[oo] * xv;
      }
      for (int oo = 0; oo < kTileRows; ++oo) {
        T* dst = g + static_cast<std::size_t>(o0 + oo) * n + i0;
        store_lane(dst, load_lane<V>(dst) + acc[oo]);
      }
    }
    for (int oo = 0; oo < kTileRows; ++oo)
      for (int i = i0; i < n; ++i) {
        T sum = T{0};
        for (std::size_t r = r0; r < r1; ++r) sum += a[r * m + o0 + oo] * x[r * n + i];
        g[static_cast<std::size_t>(o0 + oo) * n + i] += sum;
      }
  }
  for (int o = o0; o < m; ++o)
    for (int i = 0; i < n; ++i) {
      T sum = T{0};
      for (std::size_t r = r0; r < r1; ++r) sum += a[r * m + o] * x[r * n + i];
      g[static_cast<std::size_t>(o) * n + i] += sum;
    }
}

}  // namespace

template <typename T>
void depthwise_conv3x3(std::span<const T> x, GridShape shape, std::span<const T> kernel,
                       std::span<T> out) {
  const auto taps = tap_major(kernel, shape.channels);
  const int w = shape.width;
  const std::size_t n = static_cast<std::size_t>(shape.channels);
  parallel_for(shape.height, shape.size() * 9, [&](int i) {
    for (int j = 0; j < w; ++j)
      conv_cell(x.data(), shape, taps.data(), i, j, out.data() + (static_cast<std::size_t>(i) * w + j) * n);
  });
}

template <typename T>
void depthwise_conv3x3_backward(std::span<const T> x, GridShape shape, std::span<const T> kernel,
                                std::span<const T> grad_out, std::span<T> grad_x,
                                std::span<T> grad_kernel) {
  if (!grad_x.empty()) {
    const auto taps = tap_major(kernel, shape.channels);
    conv_grad_input(grad_out.data(), shape, taps.data(), grad_x.data());
  }
  if (!grad_kernel.empty()) conv_grad_kernel(x.data(), shape, grad_out.data(), grad_kernel.data());
}

template <typename T>
void perceive_rows(std::span<const T> x, GridShape shape, std::span<const T> k1,
                   std::span<const T> k2, std::span<const int> cells, std::span<T> out) {
  const int n = shape.channels;
  const auto taps1 = tap_major(k1, n);
  const auto taps2 = tap_major(k2, n);
  const auto rows = static_cast<std::ptrdiff_t>(cells.size());
  parallel_for(rows, cells.size() * n * 18, [&](std::ptrdiff_t r) {
    const int i = cells[r] / shape.width;
    const int j = cells[r] % shape.width;
    T* row = out.data() + static_cast<std::size_t>(r) * 3 * n;
    T* o1 = row + n;
    T* o2 = row + 2 * n;
    const T* xc = x.data() + static_cast<std::size_t>(cells[r]) * n;
    std::copy(xc, xc + n, row);
    std::fill(o1, o1 + 2 * n, T{0});
    for (int a = 0; a < 3; ++a) {
      const int ii = i + a - 1;
      if (ii < 0 || ii >= shape.height) continue;
      for (int b = 0; b < 3; ++b) {
        const int jj = j + b - 1;
        if (jj < 0 || jj >= shape.width) continue;
        const T* xn = x.data() + (static_cast<std::size_t>(ii) * shape.width + jj) * n;
        const std::size_t t = static_cast<std::size_t>(a * 3 + b) * n;
        const T* t1 = taps1.data() + t;
        const T* t2 = taps2.data() + t;
        for (int c = 0; c < n; ++c) {
          o1[c] += xn[c] * t1[c];
          o2[c] += xn[c] * t2[c];
        }
      }
    }
  });
}

template <typename T>
void perceive_rows_backward(std::span<const T> x, GridShape shape, std::span<const T> k1,
                            std::span<const T> k2, std::span<const int> cells,
                            std::span<const T> grad_out, std::span<T> grad_x,
                            std::span<T> grad_k1, std::span<T> grad_k2) {
  const int n = shape.channels;
  const int h = shape.height;
  const int w = shape.width;
  const std::size_t row_len = static_cast<std::size_t>(3) * n;

  if (!grad_x.empty()) {
    // Gather form over input cells; only perceiving cells send gradient.
    std::vector<int> row_of(shape.cells(), -1);
    for (std::size_t r = 0; r < cells.size(); ++r) row_of[static_cast<std::size_t>(cells[r])] = static_cast<int>(r);
    const auto taps1 = tap_major(k1, n);
    const auto taps2 = tap_major(k2, n);
    parallel_for(h, cells.size() * n * 18, [&](int i) {
      for (int j = 0; j < w; ++j) {
        const std::size_t cell = static_cast<std::size_t>(i) * w + j;
        T* gx = grad_x.data() + cell * n;
        if (row_of[cell] >= 0) {
          const T* g = grad_out.data() + static_cast<std::size_t>(row_of[cell]) * row_len;
          for (int c = 0; c < n; ++c) gx[c] += g[c];
        }
        for (int a = 0; a < 3; ++a) {
          const int oi = i - a + 1;
          if (oi < 0 || oi >= h) continue;
          for (int b = 0; b < 3; ++b) {
            const int oj = j - b + 1;
            if (oj < 0 || oj >= w) continue;
            const int r = row_of[static_cast<std::size_t>(oi) * w + oj];
            if (r < 0) continue;
            const T* g1 = grad_out.data() + static_cast<std::size_t>(r) * row_len + n;
            const T* g2 = g1 + n;
            const std::size_t t = static_cast<std::size_t>(a * 3 + b) * n;
            const T* t1 = taps1.data() + t;
            const T* t2 = taps2.data() + t;
            for (int c = 0; c < n; ++c) gx[c] += g1[c] * t1[c] + g2[c] * t2[c];
          }
        }
      }
    });
  }
  if (grad_k1.empty() && grad_k2.empty()) return;

  // Kernel gradients: fixed blocks of perceiving cells, partials summed in
  // block order.
  const std::size_t slab = static_cast<std::size_t>(18) * n;
  const std::size_t blocks = (cells.size() + kRowBlock - 1) / kRowBlock;
  std::vector<T> partial(blocks * slab, T{0});
  const auto n_blocks = static_cast<std::ptrdiff_t>(blocks);
  parallel_for(n_blocks, cells.size() * n * 18, [&](std::ptrdiff_t blk) {
    T* acc1 = partial.data() + static_cast<std::size_t>(blk) * slab;
    T* acc2 = acc1 + static_cast<std::size_t>(9) * n;
    const std::size_t end = std::min(cells.size(), (static_cast<std::size_t>(blk) + 1) * kRowBlock);
    for (std::size_t r = static_cast<std::size_t>(blk) * kRowBlock; r < end; ++r) {
      const int i = cells[r] / w;
      const int j = cells[r] % w;
      const T* g1 = grad_out.data() + r * row_len + n;
      const T* g2 = g1 + n;
      for (int a = 0; a < 3; ++a) {
        const int ii = i + a - 1;
        if (ii < 0 || ii >= h) continue;
        for (int b = 0; b < 3; ++b) {
          const int jj = j + b - 1;
          if (jj < 0 || jj >= w) continue;
          const T* xn = x.data() + (static_cast<std::size_t>(ii) * w + jj) * n;
          const std::size_t t = static_cast<std::size_t>(a * 3 + b) * n;
          for (int c = 0; c < n; ++c) {
            acc1[t + c] += g1[c] * xn[c];
            acc2[t + c] += g2[c] * xn[c];
          }
        }
      }
    }
  });
  for (std::size_t blk = 0; blk < blocks; ++blk) {
    const T* acc1 = partial.data() + blk * slab;
    const T* acc2 = acc1 + static_cast<std::size_t>(9) * n;
    for (int t = 0; t < 9; ++t)
      for (int c = 0; c < n; ++c) {
        const std::size_t src = static_cast<std::size_t>(t) * n + c;
        if (!grad_k1.empty()) grad_k1[static_cast<std::size_t>(c) * 9 + t] += acc1[src];
        if (!grad_k2.empty()) grad_k2[static_cast<std::size_t>(c) * 9 + t] += acc2[src];
      }
  }
}

template <typename T>
void linear(std::span<const T> x, std::size_t rows, int in, std::span<const T> weight,
            std::span<const T> bias, int out, std::span<T> y) {
  // in×out copy of the weights so each reduction step reads a contiguous
  // run of outputs.
  std::vector<T> wt(static_cast<std::size_t>(in) * out);
  for (int o = 0; o < out; ++o)
    for (int i = 0; i < in; ++i)
      wt[static_cast<std::size_t>(i) * out + o] = weight[static_cast<std::size_t>(o) * in + i];
  for (std::size_t r = 0; r < rows; ++r) std::copy(bias.begin(), bias.end(), y.begin() + static_cast<std::ptrdiff_t>(r * out));
  rows_times_matrix(x.data(), rows, in, wt.data(), out, y.data());
}

template <typename T>
void linear_backward(std::span<const T> x, std::size_t rows, int in, std::span<const T> weight,
                     int out, std::span<const T> grad_y, std::span<T> grad_x,
                     std::span<T> grad_weight, std::span<T> grad_bias) {
  if (!grad_x.empty()) rows_times_matrix(grad_y.data(), rows, out, weight.data(), in, grad_x.data());
  if (grad_weight.empty() && grad_bias.empty()) return;

  const std::size_t wsize = static_cast<std::size_t>(in) * out;
  const std::size_t slab = wsize + out;
  const std::size_t blocks = (rows + kRowBlock - 1) / kRowBlock;
  std::vector<T> partial(blocks * slab, T{0});
  const auto n_blocks = static_cast<std::ptrdiff_t>(blocks);
  parallel_for(n_blocks, rows * in * out, [&](std::ptrdiff_t blk) {
    T* pw = partial.data() + static_cast<std::size_t>(blk) * slab;
    T* pb = pw + wsize;
    const std::size_t begin = static_cast<std::size_t>(blk) * kRowBlock;
    const std::size_t end = std::min(rows, begin + kRowBlock);
    if (!grad_weight.empty()) transposed_product(grad_y.data(), out, x.data(), in, begin, end, pw);
    for (std::size_t r = begin; r < end; ++r)
      for (int o = 0; o < out; ++o) pb[o] += grad_y[r * out + o];
  });
  for (std::size_t blk = 0; blk < blocks; ++blk) {
    const T* pw = partial.data() + blk * slab;
    if (!grad_weight.empty())
      for (std::size_t k = 0; k < wsize; ++k) grad_weight[k] += pw[k];
    if (!grad_bias.empty())
      for (int o = 0; o < out; ++o) grad_bias[o] += pw[wsize + o];
  }
}

template <typename T>
void relu(std::span<const T> x, std::span<T> y) {
  const auto size = static_cast<std::ptrdiff_t>(x.size());
  parallel_for(size, x.size(), [&](std::ptrdiff_t i) { y[i] = x[i] > T{0} ? x[i] : T{0}; });
}

template <typename T>
void relu_backward(std::span<const T> x, std::span<const T> grad_y, std::span<T> grad_x) {
  const auto size = static_cast<std::ptrdiff_t>(x.size());
  parallel_for(size, x.size(), [&](std::ptrdiff_t i) {
    if (x[i] > T{0}) grad_x[i] += grad_y[i];
  });
}

template <typename T>
void channel_max(std::span<const T> x, GridShape shape, std::span<T> values,
                 std::span<int> argmax) {
  const std::size_t n = static_cast<std::size_t>(shape.channels);
  std::copy(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(n), values.begin());
  std::fill(argmax.begin(), argmax.end(), 0);
  // Strict comparison keeps the earliest cell on ties.
  for (std::size_t p = 1; p < shape.cells(); ++p) {
    const T* cell = x.data() + p * n;
    for (std::size_t c = 0; c < n; ++c) {
      if (cell[c] > values[c]) {
        values[c] = cell[c];
        argmax[c] = static_cast<int>(p);
      }
    }
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

}  // namespace nca::kernels
