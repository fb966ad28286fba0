// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "nca/model.hpp"
#include "nca/train.hpp"

namespace nca {

/// Everything a CLI run reads from its config file. The file is flat text,
/// one `key = value` per line; `#` starts a comment. Keys:
///
///   channels steps update_hidden classifier_hidden num_classes fire_rate
///   lr beta1 beta2 eps lr_decay batch_size epochs
///   loss (softmax|sigmoid) balance augment (true|false)
///   val_fraction eval_seed mc_samples
struct RunConfig {
  NcaConfig model;
  TrainPlan plan;
  double val_fraction = 0.15;
  int mc_samples = 1;

  /// Throws kConfig naming the key and line for unknown keys, malformed
  /// values or duplicate keys. `source` is used in messages.
  static RunConfig parse(std::string_view text, const std::string& source = "<config>");
  static RunConfig read(const std::filesystem::path& path);
  std::string serialize() const;
};

}  // namespace nca
