// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "nca/data.hpp"
#include "nca/model.hpp"

namespace nca {

inline constexpr std::uint64_t kDefaultEvalSeed = 0x5eed0e7a1ULL;

struct EvalReport {
  int num_classes = 0;
  std::int64_t samples = 0;
  double accuracy = 0.0;
  std::vector<double> precision;
  std::vector<double> recall;
  std::vector<double> f1;
  std::vector<std::vector<std::int64_t>> confusion;  // [true][predicted]
  std::string trained_on;
  std::string tested_on;
};

/// Confusion matrix and per-class scores. Classes that are never predicted
/// (or never present) score 0 precision (recall) rather than NaN.
EvalReport make_report(std::span<const int> labels, std::span<const int> predictions, int num_classes);

std::string report_to_json(const EvalReport& report);
std::string report_to_table(const EvalReport& report);

struct InferenceOptions {
  std::uint64_t seed = kDefaultEvalSeed;
  /// Number of mask draws whose logits are averaged.
  int mc_samples = 1;
};

struct Prediction {
  int predicted = 0;
  std::vector<float> logits;
};

/// Deterministic inference: masks for sample k come from a stream derived
/// from (seed, k, draw), so results do not depend on scheduling.
std::vector<Prediction> predict(const NcaParams<float>& params, const NcaConfig& config,
                                std::span<const Sample> samples, const InferenceOptions& options = {});

struct Evaluation {
  EvalReport report;
  double mean_loss = 0.0;
  std::vector<int> predictions;
};

Evaluation evaluate(const NcaParams<float>& params, const NcaConfig& config, std::span<const Sample> samples,
                    const InferenceOptions& options = {});

struct RunStats {
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation (n − 1); 0 for one run
  std::size_t runs = 0;
};

RunStats summarize_runs(std::span<const double> values);

}  // namespace nca
