// SPDX-License-Identifier: Apache-2.0
#pragma once

// Layer-wise relevance propagation (epsilon rule) over the two-layer
// classifier head, plus placement of feature relevance onto the cells that
// won the channel-wise maximum.
//
// The output relevance is seeded with the raw target logit. Biases absorb no
// relevance, so at ε = 0 every layer's relevance sums to that logit. The
// routing onto cells is an extension beyond the classifier: a feature's
// relevance goes entirely to its channel's winning cell, mirroring how the
// max-pool routes gradients.

#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "nca/model.hpp"

namespace nca {

/// Activations recorded while classifying one feature vector.
template <typename T>
struct ClassifierTrace {
  std::vector<T> features;
  std::vector<T> hidden;  // post-ReLU
  std::vector<T> logits;

  static ClassifierTrace from(std::span<const T> features, const Classification<T>& c) {
    return ClassifierTrace{std::vector<T>(features.begin(), features.end()), c.hidden, c.logits};
  }
};

struct RelevanceVector {
  std::vector<double> relevance;         // per input feature
  std::vector<double> hidden_relevance;  // per classifier hidden unit
  double output_relevance = 0.0;         // the explained logit
  int target_class = 0;
  double epsilon = 0.0;         // stabiliser used on the feature layer
  double hidden_epsilon = 0.0;  // stabiliser used on the hidden layer
};

/// One epsilon-rule step through a linear layer (bias ignored):
///   R_j = Σ_k a_j w_kj / (s_k + ε·sign(s_k)) · R_k,   s_k = Σ_j a_j w_kj
/// weight is out×in. A zero denominator passes no relevance.
std::vector<double> lrp_linear_epsilon(std::span<const double> activations, std::span<const double> weight,
                                       std::span<const double> upper_relevance, double epsilon);

/// 1e-6 · mean_k |s_k| for the layer.
double default_epsilon(std::span<const double> activations, std::span<const double> weight, int out);

/// Explains `target_class`. Without an explicit epsilon each layer uses
/// default_epsilon.
template <typename T>
RelevanceVector lrp_epsilon(const ClassifierTrace<T>& trace, const NcaParams<T>& params, int target_class,
                            std::optional<double> epsilon = std::nullopt);

struct ChannelRelevance {
  int channel = 0;
  CellPos winner;
  double relevance = 0.0;
  std::vector<float> activation;  // H×W slice of the final state
};

struct RelevanceMap {
  int height = 0;
  int width = 0;
  std::vector<ChannelRelevance> channels;  // descending relevance, ties by channel index

  /// H×W×n field holding each channel's relevance at its winning cell.
  std::vector<double> dense() const;
  double total() const;
};

template <typename T>
RelevanceMap route_to_cells(const RelevanceVector& relevance, const Grid<T>& final_state,
                            std::span<const CellPos> argmax);

/// Writes top_k min-max normalised channel images (constant channels render
/// black), one composite strip and relevance.tsv. Returns the written paths.
std::vector<std::filesystem::path> export_heatmaps(const RelevanceMap& map, int top_k,
                                                   const std::filesystem::path& out_dir);

}  // namespace nca
