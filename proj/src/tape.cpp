// SPDX-License-Identifier: Apache-2.0

#include "nca/tape.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "nca/kernels.hpp"

namespace nca {

namespace {

[[noreturn]] void shape_error(const std::string& op, const std::string& detail) {
  throw Error(ErrorCode::kShapeMismatch, op + ": " + detail);
}

GridShape grid_shape(const std::vector<int>& shape, const char* op) {
  if (shape.size() != 3) shape_error(op, "expected an H×W×C grid, got " + shape_string(shape));
  return GridShape{shape[0], shape[1], shape[2]};
}

void check_kernel(const std::vector<int>& kernel, int channels, const char* op) {
  if (kernel != std::vector<int>{channels, 3, 3})
    shape_error(op, "kernel " + shape_string(kernel) + " does not match " +
                        std::to_string(channels) + " channels");
}

void check_cells(const std::vector<int>& cells, const GridShape& s, const char* op) {
  const auto limit = static_cast<int>(s.cells());
  for (int cell : cells)
    if (cell < 0 || cell >= limit) shape_error(op, "cell index " + std::to_string(cell) + " out of range");
}

}  // namespace

template <typename T>
const typename Tape<T>::Node& Tape<T>::node(Var v) const {
  if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size())
    throw Error(ErrorCode::kInvalidState, "tape: variable " + std::to_string(v.id) + " is not on this tape");
  return nodes_[static_cast<std::size_t>(v.id)];
}

template <typename T>
Var Tape<T>::push(Node n) {
  for (int input : n.in)
    if (input >= 0) n.requires_grad = n.requires_grad || nodes_[static_cast<std::size_t>(input)].requires_grad;
  nodes_.push_back(std::move(n));
  has_backward_ = false;
  return Var{static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
Var Tape<T>::leaf(Tensor<T> value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  return push(std::move(n));
}

template <typename T>
Var Tape<T>::leaf(const Grid<T>& grid, bool requires_grad) {
  return leaf(grid.to_tensor(), requires_grad);
}

template <typename T>
Var Tape<T>::conv3x3(Var x, Var kernel) {
  const auto& xv = node(x).value;
  const auto& kv = node(kernel).value;
  const GridShape s = grid_shape(xv.shape, "conv3x3");
  check_kernel(kv.shape, s.channels, "conv3x3");
  Node n;
  n.op = Op::kConv3x3;
  n.in[0] = x.id;
  n.in[1] = kernel.id;
  n.value = Tensor<T>(xv.shape);
  kernels::depthwise_conv3x3<T>(xv.span(), s, kv.span(), n.value.span());
  return push(std::move(n));
}

template <typename T>
Var Tape<T>::perceive_rows(Var x, Var k1, Var k2, std::vector<int> cells) {
  const auto& xv = node(x).value;
  const GridShape s = grid_shape(xv.shape, "perceive_rows");
  check_kernel(node(k1).value.shape, s.channels, "perceive_rows");
  check_kernel(node(k2).value.shape, s.channels, "perceive_rows");
  check_cells(cells, s, "perceive_rows");
  Node n;
  n.op = Op::kPerceiveRows;
  n.in[0] = x.id;
  n.in[1] = k1.id;
  n.in[2] = k2.id;
  n.value = Tensor<T>({static_cast<int>(cells.size()), 3 * s.channels});
  kernels::perceive_rows<T>(xv.span(), s, node(k1).value.span(), node(k2).value.span(), cells,
                            n.value.span());
  n.index = std::move(cells);
  return push(std::move(n));
}

template <typename T>
Var Tape<T>::linear(Var x, Var weight, Var bias) {
  const auto& xv = node(x).value;
  const auto& wv = node(weight).value;
  const auto& bv = node(bias).value;
  if (wv.rank() != 2) shape_error("linear", "weight must be rank 2, got " + shape_string(wv.shape));
  const int out = wv.dim(0);
  const int in = wv.dim(1);
  if (xv.last_dim() != in)
    shape_error("linear", "input " + shape_string(xv.shape) + " does not match weight " + shape_string(wv.shape));
  if (bv.shape != std::vector<int>{out})
    shape_error("linear", "bias " + shape_string(bv.shape) + " does not match weight " + shape_string(wv.shape));
  Node n;
  n.op = Op::kLinear;
  n.in[0] = x.id;
  n.in[1] = weight.id;
  n.in[2] = bias.id;
  auto shape = xv.shape.empty() ? std::vector<int>{1} : xv.shape;
  shape.back() = out;
  n.value = Tensor<T>(shape);
  kernels::linear<T>(xv.span(), xv.rows(), in, wv.span(), bv.span(), out, n.value.span());
  return push(std::move(n));
}

template <typename T>
Var Tape<T>::relu(Var x) {
  const auto& xv = node(x).value;
  Node n;
  n.op = Op::kRelu;
  n.in[0] = x.id;
  n.value = Tensor<T>(xv.shape);
  kernels::relu<T>(xv.span(), n.value.span());
  return push(std::move(n));
}

template <typename T>
Var Tape<T>::scatter_add_rows(Var base, Var rows, std::vector<int> cells) {
  const auto& bv = node(base).value;
  const auto& rv = node(rows).value;
  const GridShape s = grid_shape(bv.shape, "scatter_add_rows");
  if (rv.shape != std::vector<int>{static_cast<int>(cells.size()), s.channels})
    shape_error("scatter_add_rows", "rows " + shape_string(rv.shape) + " do not match " +
                                        std::to_string(cells.size()) + " cells of " +
                                        std::to_string(s.channels) + " channels");
  check_cells(cells, s, "scatter_add_rows");
  Node n;
  n.op = Op::kScatterAddRows;
  n.in[0] = base.id;
  n.in[1] = rows.id;
  n.value = bv;
  const std::size_t c = static_cast<std::size_t>(s.channels);
  for (std::size_t r = 0; r < cells.size(); ++r) {
    T* dst = n.value.data.data() + static_cast<std::size_t>(cells[r]) * c;
    const T* src = rv.data.data() + r * c;
    for (std::size_t k = 0; k < c; ++k) dst[k] += src[k];
  }
  n.index = std::move(cells);
  return push(std::move(n));
}

template <typename T>
Var Tape<T>::channel_max(Var x) {
  const auto& xv = node(x).value;
  const GridShape s = grid_shape(xv.shape, "channel_max");
  if (s.cells() == 0) shape_error("channel_max", "empty grid");
  Node n;
  n.op = Op::kChannelMax;
  n.in[0] = x.id;
  n.value = Tensor<T>({s.channels});
  n.index.resize(static_cast<std::size_t>(s.channels));
  kernels::channel_max<T>(xv.span(), s, n.value.span(), n.index);
  return push(std::move(n));
}

template <typename T>
Var Tape<T>::softmax_cross_entropy(Var logits, int label) {
  const auto& z = node(logits).value;
  if (z.rank() != 1) shape_error("softmax_cross_entropy", "logits must be a vector");
  if (label < 0 || label >= z.dim(0))
    throw Error(ErrorCode::kInvalidArgument, "softmax_cross_entropy: label " + std::to_string(label) +
                                                 " outside [0, " + std::to_string(z.dim(0)) + ")");
  double m = z.data[0];
  for (T v : z.data) m = std::max(m, static_cast<double>(v));
  double total = 0;
  for (T v : z.data) total += std::exp(static_cast<double>(v) - m);
  const double lse = m + std::log(total);
  Node n;
  n.op = Op::kSoftmaxCe;
  n.in[0] = logits.id;
  n.label = label;
  n.saved.resize(z.size());
  for (std::size_t k = 0; k < z.size(); ++k)
    n.saved[k] = static_cast<T>(std::exp(static_cast<double>(z.data[k]) - lse));
  n.value = Tensor<T>({}, {static_cast<T>(lse - static_cast<double>(z.data[static_cast<std::size_t>(label)]))});
  return push(std::move(n));
}

template <typename T>
Var Tape<T>::sigmoid_cross_entropy(Var logits, int label) {
  const auto& z = node(logits).value;
  if (z.rank() != 1) shape_error("sigmoid_cross_entropy", "logits must be a vector");
  if (label < 0 || label >= z.dim(0))
    throw Error(ErrorCode::kInvalidArgument, "sigmoid_cross_entropy: label " + std::to_string(label) +
                                                 " outside [0, " + std::to_string(z.dim(0)) + ")");
  Node n;
  n.op = Op::kSigmoidCe;
  n.in[0] = logits.id;
  n.label = label;
  n.saved.resize(z.size());
  double loss = 0;
  for (std::size_t k = 0; k < z.size(); ++k) {
    const double v = z.data[k];
    const double target = static_cast<int>(k) == label ? 1.0 : 0.0;
    loss += std::max(v, 0.0) - v * target + std::log1p(std::exp(-std::abs(v)));
    n.saved[k] = static_cast<T>(1.0 / (1.0 + std::exp(-v)));
  }
  n.value = Tensor<T>({}, {static_cast<T>(loss)});
  return push(std::move(n));
}

template <typename T>
Var Tape<T>::square(Var x) {
  const auto& xv = node(x).value;
  Node n;
  n.op = Op::kSquare;
  n.in[0] = x.id;
  n.value = Tensor<T>(xv.shape);
  for (std::size_t k = 0; k < xv.size(); ++k) n.value.data[k] = xv.data[k] * xv.data[k];
  return push(std::move(n));
}

template <typename T>
Var Tape<T>::sum(Var x) {
  const auto& xv = node(x).value;
  T total = 0;
  for (T v : xv.data) total += v;
  Node n;
  n.op = Op::kSum;
  n.in[0] = x.id;
  n.value = Tensor<T>({}, {total});
  return push(std::move(n));
}

template <typename T>
Var Tape<T>::dot(Var x, std::vector<T> weights) {
  const auto& xv = node(x).value;
  if (weights.size() != xv.size())
    shape_error("dot", "weights of size " + std::to_string(weights.size()) + " for input " + shape_string(xv.shape));
  T total = 0;
  for (std::size_t k = 0; k < xv.size(); ++k) total += xv.data[k] * weights[k];
  Node n;
  n.op = Op::kDot;
  n.in[0] = x.id;
  n.saved = std::move(weights);
  n.value = Tensor<T>({}, {total});
  return push(std::move(n));
}

template <typename T>
const Tensor<T>& Tape<T>::value(Var v) const {
  return node(v).value;
}

template <typename T>
std::span<const int> Tape<T>::argmax(Var v) const {
  const Node& n = node(v);
  if (n.op != Op::kChannelMax) throw Error(ErrorCode::kInvalidArgument, "tape: argmax of a node that is not channel_max");
  return n.index;
}

template <typename T>
Tensor<T>& Tape<T>::grad_slot(int id) {
  auto& g = grads_[static_cast<std::size_t>(id)];
  if (g.shape != nodes_[static_cast<std::size_t>(id)].value.shape || g.size() != nodes_[static_cast<std::size_t>(id)].value.size())
    g = Tensor<T>(nodes_[static_cast<std::size_t>(id)].value.shape);
  return g;
}

template <typename T>
void Tape<T>::backward(Var loss) {
  if (nodes_.empty())
    throw Error(ErrorCode::kInvalidState, "backward: no forward operations have been recorded");
  const Node& root = node(loss);
  if (root.value.size() != 1)
    throw Error(ErrorCode::kShapeMismatch, "backward: loss must be a scalar, got " + shape_string(root.value.shape));
  grads_.assign(nodes_.size(), Tensor<T>{});
  if (root.requires_grad) {
    grad_slot(loss.id).data[0] = T{1};
    for (int id = loss.id; id >= 0; --id) {
      const Node& n = nodes_[static_cast<std::size_t>(id)];
      if (n.op == Op::kLeaf || !n.requires_grad || grads_[static_cast<std::size_t>(id)].data.empty()) continue;
      backward_node(id);
      grads_[static_cast<std::size_t>(id)] = Tensor<T>{};
    }
  }
  has_backward_ = true;
}

template <typename T>
const Tensor<T>& Tape<T>::grad(Var v) const {
  const Node& n = node(v);
  if (!has_backward_) throw Error(ErrorCode::kInvalidState, "grad: backward has not been run on this tape");
  if (n.op != Op::kLeaf) throw Error(ErrorCode::kInvalidState, "grad: gradients are kept for leaves only");
  auto& g = grads_[static_cast<std::size_t>(v.id)];
  if (g.data.empty() && n.value.size() != 0) g = Tensor<T>(n.value.shape);
  return g;
}

template <typename T>
void Tape<T>::backward_node(int id) {
  const Node& n = nodes_[static_cast<std::size_t>(id)];
  const std::span<const T> g = grads_[static_cast<std::size_t>(id)].span();
  auto wants = [&](int k) { return n.in[k] >= 0 && nodes_[static_cast<std::size_t>(n.in[k])].requires_grad; };
  auto slot = [&](int k) -> std::span<T> {
    if (!wants(k)) return {};
    return grad_slot(n.in[k]).span();
  };
  auto input = [&](int k) -> const Tensor<T>& { return nodes_[static_cast<std::size_t>(n.in[k])].value; };

  switch (n.op) {
    case Op::kLeaf:
      break;
    case Op::kConv3x3: {
      const GridShape s = grid_shape(input(0).shape, "conv3x3");
      auto gx = slot(0);
      auto gk = slot(1);
      kernels::depthwise_conv3x3_backward<T>(input(0).span(), s, input(1).span(), g, gx, gk);
      break;
    }
    case Op::kPerceiveRows: {
      const GridShape s = grid_shape(input(0).shape, "perceive_rows");
      auto gx = slot(0);
      auto g1 = slot(1);
      auto g2 = slot(2);
      kernels::perceive_rows_backward<T>(input(0).span(), s, input(1).span(), input(2).span(), n.index, g,
                                         gx, g1, g2);
      break;
    }
    case Op::kLinear: {
      const auto& w = input(1);
      auto gx = slot(0);
      auto gw = slot(1);
      auto gb = slot(2);
      kernels::linear_backward<T>(input(0).span(), input(0).rows(), w.dim(1), w.span(), w.dim(0), g, gx, gw, gb);
      break;
    }
    case Op::kRelu: {
      if (wants(0)) kernels::relu_backward<T>(input(0).span(), g, slot(0));
      break;
    }
    case Op::kScatterAddRows: {
      const std::size_t c = static_cast<std::size_t>(input(0).last_dim());
      if (wants(0)) {
        auto gb = slot(0);
        for (std::size_t k = 0; k < g.size(); ++k) gb[k] += g[k];
      }
      if (wants(1)) {
        auto gr = slot(1);
        for (std::size_t r = 0; r < n.index.size(); ++r) {
          const T* src = g.data() + static_cast<std::size_t>(n.index[r]) * c;
          for (std::size_t k = 0; k < c; ++k) gr[r * c + k] += src[k];
        }
      }
      break;
    }
    case Op::kChannelMax: {
      if (wants(0)) {
        auto gx = slot(0);
        const std::size_t c = n.index.size();
        for (std::size_t k = 0; k < c; ++k) gx[static_cast<std::size_t>(n.index[k]) * c + k] += g[k];
      }
      break;
    }
    case Op::kSoftmaxCe:
    case Op::kSigmoidCe: {
      if (wants(0)) {
        auto gz = slot(0);
        for (std::size_t k = 0; k < n.saved.size(); ++k) {
          const T target = static_cast<int>(k) == n.label ? T{1} : T{0};
          gz[k] += g[0] * (n.saved[k] - target);
        }
      }
      break;
    }
    case Op::kSquare: {
      if (wants(0)) {
        auto gx = slot(0);
        const auto& x = input(0).data;
        for (std::size_t k = 0; k < x.size(); ++k) gx[k] += T{2} * x[k] * g[k];
      }
      break;
    }
    case Op::kSum: {
      if (wants(0)) {
        auto gx = slot(0);
        for (auto& v : gx) v += g[0];
      }
      break;
    }
    case Op::kDot: {
      if (wants(0)) {
        auto gx = slot(0);
        for (std::size_t k = 0; k < gx.size(); ++k) gx[k] += g[0] * n.saved[k];
      }
      break;
    }
  }
}

template class Tape<float>;
template class Tape<double>;

}  // namespace nca
