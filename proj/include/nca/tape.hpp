// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "nca/tensor.hpp"

namespace nca {

/// Handle to a node on a Tape.
struct Var {
  int id = -1;
  bool valid() const noexcept { return id >= 0; }
};

/// Reverse-mode recorder over whole-grid operations.
///
/// Nodes are appended in execution order, so the node list is already a
/// topological order. A tape belongs to a single forward pass (one sample);
/// concurrent samples use separate tapes.
template <typename T>
class Tape {
 public:
  Var leaf(Tensor<T> value, bool requires_grad = false);
  Var leaf(const Grid<T>& grid, bool requires_grad = false);

  /// x: H×W×C, kernel: C×3×3 → H×W×C
  Var conv3x3(Var x, Var kernel);
  /// x: H×W×C → |cells|×3C rows of [identity | x*k1 | x*k2]
  Var perceive_rows(Var x, Var k1, Var k2, std::vector<int> cells);
  /// x: (...)×in, weight: out×in, bias: out → (...)×out
  Var linear(Var x, Var weight, Var bias);
  Var relu(Var x);
  /// base: H×W×C, rows: |cells|×C → base with rows added at the listed cells
  Var scatter_add_rows(Var base, Var rows, std::vector<int> cells);
  /// x: H×W×C → C
  Var channel_max(Var x);
  /// Categorical cross-entropy of a logit vector → scalar.
  Var softmax_cross_entropy(Var logits, int label);
  /// Sum of per-class binary cross-entropies against a one-hot target → scalar.
  Var sigmoid_cross_entropy(Var logits, int label);
  Var square(Var x);
  Var sum(Var x);
  /// Σ x ⊙ weights with constant weights → scalar.
  Var dot(Var x, std::vector<T> weights);

  const Tensor<T>& value(Var v) const;
  /// Winning flat cell per channel of a channel_max node.
  std::span<const int> argmax(Var v) const;

  /// Propagates a scalar loss back to the leaves. Intermediate gradients are
  /// released as soon as they have been consumed.
  void backward(Var loss);
  /// Gradient of the last backward loss with respect to leaf v. Leaves that
  /// were not reachable report zeros; non-leaf nodes raise kInvalidState.
  const Tensor<T>& grad(Var v) const;

  std::size_t size() const noexcept { return nodes_.size(); }
  bool empty() const noexcept { return nodes_.empty(); }

 private:
  enum class Op : std::uint8_t {
    kLeaf,
    kConv3x3,
    kPerceiveRows,
    kLinear,
    kRelu,
    kScatterAddRows,
    kChannelMax,
    kSoftmaxCe,
    kSigmoidCe,
    kSquare,
    kSum,
    kDot,
  };

  struct Node {
    Op op = Op::kLeaf;
    int in[3] = {-1, -1, -1};
    bool requires_grad = false;
    Tensor<T> value;
    std::vector<int> index;  // cell list or argmax
    std::vector<T> saved;    // probabilities or dot weights
    int label = -1;
  };

  const Node& node(Var v) const;
  Var push(Node node);
  Tensor<T>& grad_slot(int id);
  void backward_node(int id);

  std::vector<Node> nodes_;
  mutable std::vector<Tensor<T>> grads_;
  bool has_backward_ = false;
};

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace nca
