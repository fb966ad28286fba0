// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "nca/image.hpp"
#include "nca/rng.hpp"
#include "nca/tape.hpp"
#include "nca/tensor.hpp"

namespace nca {

struct NcaConfig {
  int channels = 128;
  int steps = 64;
  int update_hidden = 128;
  int classifier_hidden = 128;
  int num_classes = 13;
  double fire_rate = 0.5;

  /// Throws kInvalidArgument when a field is out of range.
  void validate() const;

  friend bool operator==(const NcaConfig&, const NcaConfig&) = default;
};

/// Names of the trainable arrays, in storage and checkpoint order.
inline constexpr std::array<std::string_view, 10> kParamNames = {
    "k1", "k2", "W1", "b1", "W2", "b2", "W3", "b3", "W4", "b4"};

/// Shapes of the trainable arrays for a config, in kParamNames order.
std::array<std::vector<int>, 10> param_shapes(const NcaConfig& config);

/// Closed-form number of trainable scalars.
std::size_t count_params(const NcaConfig& config);

template <typename T>
struct NcaParams {
  Tensor<T> k1, k2;  // C×3×3 perception kernels
  Tensor<T> w1, b1;  // update layer 1: h_u×3C
  Tensor<T> w2, b2;  // update layer 2: C×h_u
  Tensor<T> w3, b3;  // classifier layer 1: h_c×C
  Tensor<T> w4, b4;  // classifier layer 2: classes×h_c

  std::array<Tensor<T>*, 10> arrays() { return {&k1, &k2, &w1, &b1, &w2, &b2, &w3, &b3, &w4, &b4}; }
  std::array<const Tensor<T>*, 10> arrays() const {
    return {&k1, &k2, &w1, &b1, &w2, &b2, &w3, &b3, &w4, &b4};
  }

  std::size_t scalar_count() const;

  static NcaParams zeros(const NcaConfig& config);

  template <typename U>
  NcaParams<U> cast() const {
    NcaParams<U> out;
    auto dst = out.arrays();
    auto src = arrays();
    for (std::size_t k = 0; k < src.size(); ++k) {
      dst[k]->shape = src[k]->shape;
      dst[k]->data.assign(src[k]->data.begin(), src[k]->data.end());
    }
    return out;
  }

  friend bool operator==(const NcaParams& a, const NcaParams& b) {
    auto x = a.arrays();
    auto y = b.arrays();
    for (std::size_t k = 0; k < x.size(); ++k)
      if (x[k]->shape != y[k]->shape || x[k]->data != y[k]->data) return false;
    return true;
  }
};

/// Throws kShapeMismatch naming the first array whose shape disagrees with
/// the config.
template <typename T>
void check_param_shapes(const NcaParams<T>& params, const NcaConfig& config);

/// Kernels and W1, W3, W4 uniform in ±1/sqrt(fan_in); biases zero; W2 and b2
/// zero so the untrained update is the identity.
template <typename T>
NcaParams<T> init_params(const NcaConfig& config, std::uint64_t seed);

/// One fire bit per cell for a single step, shared by all channels.
struct StepMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> bits;

  static StepMask filled(int height, int width, bool fire);
  std::vector<int> active_cells() const;
  friend bool operator==(const StepMask&, const StepMask&) = default;
};

StepMask draw_mask(int height, int width, double fire_rate, Rng& rng);

/// RGB in channels 0..2, zeros in the remaining channels.
template <typename T>
Grid<T> make_seed(const Image& image, int channels);

/// Per-cell [c | c*k1 | c*k2] as an H×W×3C grid.
template <typename T>
Grid<T> perceive(const Grid<T>& state, const Tensor<T>& k1, const Tensor<T>& k2);

/// c + δ·f_u(f_p(N_c)) for every cell; cells with δ = 0 are left untouched.
template <typename T>
Grid<T> nca_step(const Grid<T>& state, const NcaParams<T>& params, const StepMask& mask);

template <typename T>
struct RolloutResult {
  Grid<T> final_state;
  std::vector<T> features;
  std::vector<CellPos> argmax;
  std::vector<StepMask> masks;
};

/// Seed, `config.steps` masked updates with masks drawn from rng, then the
/// per-channel spatial maximum.
template <typename T>
RolloutResult<T> rollout(const Image& image, const NcaParams<T>& params, const NcaConfig& config, Rng& rng);

/// Replays a rollout with recorded masks (one per step).
template <typename T>
RolloutResult<T> rollout(const Image& image, const NcaParams<T>& params, const NcaConfig& config,
                         std::span<const StepMask> masks);

template <typename T>
struct Classification {
  std::vector<T> hidden;  // post-ReLU classifier activations
  std::vector<T> logits;
  std::vector<T> probs;   // elementwise sigmoid of the logits
  int predicted = 0;
};

template <typename T>
Classification<T> classify(std::span<const T> features, const NcaParams<T>& params);

/// Index of the largest value; lowest index on ties.
template <typename T>
int argmax_first(std::span<const T> values);

// Tape-level building blocks shared by inference and training.

struct ParamVars {
  Var k1, k2, w1, b1, w2, b2, w3, b3, w4, b4;
  std::array<Var, 10> all() const { return {k1, k2, w1, b1, w2, b2, w3, b3, w4, b4}; }
};

template <typename T>
ParamVars bind_params(Tape<T>& tape, const NcaParams<T>& params, bool requires_grad);

template <typename T>
Var record_step(Tape<T>& tape, Var state, const ParamVars& params, const StepMask& mask);

struct ClassifierVars {
  Var hidden;
  Var logits;
};

template <typename T>
ClassifierVars record_classifier(Tape<T>& tape, Var features, const ParamVars& params);

}  // namespace nca
