// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "nca/data.hpp"
#include "nca/model.hpp"

namespace nca {

enum class LossKind { kSoftmax, kSigmoid };

struct AdamHyper {
  double lr0 = 4e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double decay = 0.9999;  // applied once per optimizer step
};

/// lr0 · decay^t
double lr_at(std::int64_t t, const AdamHyper& hyper = {});

/// −log softmax(logits)[label], with max subtraction.
double cross_entropy(std::span<const double> logits, int label);

template <typename T>
struct OptimizerState {
  std::int64_t step = 0;
  NcaParams<T> m;
  NcaParams<T> v;
  AdamHyper hyper;

  static OptimizerState init(const NcaConfig& config, const AdamHyper& hyper = {});
};

/// In-place Adam update of one array with bias correction and the decayed
/// learning rate for step t (0-based).
template <typename T>
void adam_update(std::span<T> param, std::span<const T> grad, std::span<T> m, std::span<T> v, std::int64_t t,
                 const AdamHyper& hyper);

template <typename T>
void adam_step(NcaParams<T>& params, const NcaParams<T>& grads, OptimizerState<T>& state);

/// Balances `classes` to T = round(mean count) samples each: larger classes
/// are subsampled without replacement, smaller ones drawn with replacement.
/// Returns shuffled indices into labels.
std::vector<std::size_t> balanced_epoch(std::span<const int> labels, std::span<const int> classes, Rng& rng);

/// Square image under `rotations` clockwise quarter turns followed by an
/// optional horizontal flip.
Image apply_dihedral(const Image& image, int rotations, bool flip);

/// One of the 8 dihedral transforms, uniformly.
Image augment(const Image& image, Rng& rng);

template <typename T>
struct LossGradient {
  T loss = 0;
  int predicted = 0;
  NcaParams<T> grads;
};

/// Forward through seed, masked steps, channel max and classifier; then
/// backpropagation through time to every parameter.
template <typename T>
LossGradient<T> loss_and_gradient(const Image& image, int label, const NcaParams<T>& params,
                                  const NcaConfig& config, std::span<const StepMask> masks, LossKind loss);

/// Forward-only value of the same loss.
template <typename T>
T loss_value(const Image& image, int label, const NcaParams<T>& params, const NcaConfig& config,
             std::span<const StepMask> masks, LossKind loss);

struct TrainPlan {
  int batch_size = 16;
  int epochs = 32;
  AdamHyper adam;
  LossKind loss = LossKind::kSoftmax;
  bool balance = true;
  bool augment = true;
  std::uint64_t eval_seed = 0x5eed0e7a1ULL;
};

struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0;
  double val_loss = 0;
  double train_acc = 0;
  double val_acc = 0;
  double lr = 0;
};

std::string metrics_to_json(const EpochMetrics& m);

struct FitResult {
  NcaParams<float> params;
  std::vector<EpochMetrics> log;
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

/// End-to-end training. Everything random (init, balancing, augmentation,
/// masks) derives from `seed`, so a run is reproducible bit for bit
/// regardless of thread count. An empty validation set reports zeros.
FitResult fit(std::span<const Sample> train, std::span<const Sample> val, const NcaConfig& config,
              const TrainPlan& plan, std::uint64_t seed, const EpochCallback& on_epoch = {});

/// Continues from given parameters instead of a fresh initialisation.
FitResult fit_from(NcaParams<float> params, std::span<const Sample> train, std::span<const Sample> val,
                   const NcaConfig& config, const TrainPlan& plan, std::uint64_t seed,
                   const EpochCallback& on_epoch = {});

}  // namespace nca
