// SPDX-License-Identifier: Apache-2.0
#pragma once

// Library side of the `nca` command-line tool. Each command takes plain
// arguments, writes its artifacts and prints human-readable progress to the
// given stream, so the same code serves the CLI and the tests.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "nca/checkpoint.hpp"
#include "nca/eval.hpp"
#include "nca/run_config.hpp"
#include "nca/train.hpp"

namespace nca {

namespace fs = std::filesystem;

/// Loads a run config, or the defaults when no path is given.
RunConfig load_run_config(const std::optional<fs::path>& path);

/// Splits a manifest into train and validation samples. Existing val entries
/// are used as is; otherwise a stratified `val_fraction` of the train entries
/// is held out using `seed`. Test entries are ignored.
struct TrainingData {
  std::vector<Sample> train;
  std::vector<Sample> val;
};
TrainingData training_data(const DatasetManifest& manifest, double val_fraction, std::uint64_t seed);

/// Evaluation samples: the test split, or every entry when there is none.
std::vector<Sample> evaluation_samples(const DatasetManifest& manifest);

struct TrainArgs {
  std::optional<fs::path> config;
  fs::path manifest;
  fs::path out;                     // checkpoint path
  std::optional<fs::path> metrics;  // defaults to <out>.metrics.jsonl
  std::uint64_t seed = 0;
};

/// Trains and writes the checkpoint plus one JSON line per epoch.
/// A missing manifest raises kUsage naming the path.
FitResult cmd_train(const TrainArgs& args, std::ostream& log);

struct EvalArgs {
  fs::path checkpoint;
  fs::path manifest;
  std::optional<fs::path> out;  // JSON report
  std::optional<std::uint64_t> seed;
  std::optional<int> mc_samples;
  std::string trained_on;
};

/// Deterministic evaluation of one checkpoint; prints the table and returns
/// the report (also written as one JSON line to `out`).
EvalReport cmd_eval(const EvalArgs& args, std::ostream& log);

// Cross-domain matrix. Row i holds models trained on domain i, column j
// their accuracy on domain j's evaluation samples.

struct CrossDomainCell {
  RunStats stats;
  std::vector<EvalReport> reports;  // one per checkpoint
  std::string error;                // non-empty when the cell could not be computed
};

struct CrossDomainMatrix {
  std::vector<std::string> domains;
  std::vector<std::vector<CrossDomainCell>> cells;  // [trained on][tested on]
};

struct DomainModels {
  std::string name;
  NcaConfig config;
  std::vector<NcaParams<float>> models;
  std::vector<Sample> eval_samples;
  std::string model_error;  // checkpoints failed to load: spoils the row
  std::string data_error;   // manifest failed to load: spoils the column
};

/// Cells run sequentially unless `parallel`, with identical results.
CrossDomainMatrix crossdomain_matrix(const std::vector<DomainModels>& domains, const InferenceOptions& options,
                                     bool parallel = false);

struct DomainInputs {
  std::string name;
  fs::path manifest;
  std::vector<fs::path> checkpoints;
};

/// File-based front end: unreadable inputs are reported in their cells while
/// the remaining cells are still computed. Requires at least one domain.
CrossDomainMatrix cmd_crossdomain(const std::vector<DomainInputs>& inputs, const InferenceOptions& options,
                                  bool parallel, const std::optional<fs::path>& out, std::ostream& log);

std::string crossdomain_to_table(const CrossDomainMatrix& matrix);
/// One JSON line per cell.
std::string crossdomain_to_jsonl(const CrossDomainMatrix& matrix);

struct SweepRow {
  int channels = 0;
  double accuracy = 0.0;
  double val_accuracy = 0.0;
};

/// Trains one model per channel count (all validated to be >= 3 first) on
/// `train`/`val` and scores it on `test`.
std::vector<SweepRow> sweep_channels(const RunConfig& config, const std::vector<int>& channels,
                                     const TrainingData& data, const std::vector<Sample>& test,
                                     std::uint64_t seed, std::ostream& log);

struct SweepArgs {
  std::optional<fs::path> config;
  fs::path manifest;
  std::vector<int> channels;
  std::uint64_t seed = 0;
  std::optional<fs::path> out;  // TSV table
};

std::vector<SweepRow> cmd_sweep_channels(const SweepArgs& args, std::ostream& log);
std::string sweep_to_tsv(const std::vector<SweepRow>& rows);

struct ExplainArgs {
  fs::path checkpoint;
  fs::path image;
  int top_k = 10;
  fs::path out;
  std::uint64_t seed = kDefaultEvalSeed;
};

struct ExplainResult {
  int predicted = 0;
  std::vector<float> logits;
  std::vector<std::pair<int, double>> top;  // (channel, relevance)
  std::vector<fs::path> files;
};

/// Rollout with masks from `seed`, LRP for the predicted class, heatmap export.
ExplainResult cmd_explain(const ExplainArgs& args, std::ostream& log);

struct SynthArgs {
  fs::path out;
  int per_class = 100;
  int num_classes = 3;
  double hue_shift_deg = 0.0;
  double noise = 0.04;
  double val_fraction = 0.0;
  double test_fraction = 0.2;
  std::string domain = "synth";
  std::uint64_t seed = 0;
};

/// Writes class folders of PNGs, manifest.tsv (paths relative to `out`) and
/// an identity harmonization.tsv. Returns the manifest as written.
DatasetManifest cmd_synth(const SynthArgs& args, std::ostream& log);

}  // namespace nca
