// SPDX-License-Identifier: Apache-2.0
//
// nca: train, evaluate and explain neural cellular automaton classifiers.
// Exit codes: 0 success, 1 runtime failure, 2 usage or config error.

#include <cstdint>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "nca/commands.hpp"
#include "nca/error.hpp"

namespace {

using nca::fs::path;

std::pair<std::string, std::string> split_pair(const std::string& text, const char* flag) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0 || eq + 1 == text.size())
    throw nca::Error(nca::ErrorCode::kUsage, std::string(flag) + " expects NAME=PATH, got '" + text + "'");
  return {text.substr(0, eq), text.substr(eq + 1)};
}

template <typename V>
std::optional<V> opt_if(const CLI::Option* option, const V& value) {
  return option->count() ? std::optional<V>(value) : std::nullopt;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neural cellular automaton image classifier"};
  app.require_subcommand(1);

  // train
  auto* train = app.add_subcommand("train", "Train a model and write a checkpoint plus a metrics log");
  nca::TrainArgs train_args;
  std::string train_config, train_metrics;
  auto* train_config_opt = train->add_option("--config", train_config, "Run config (key = value lines)");
  train->add_option("--manifest", train_args.manifest, "Dataset manifest")->required();
  train->add_option("--out", train_args.out, "Checkpoint to write")->required();
  auto* train_metrics_opt = train->add_option("--metrics", train_metrics, "Metrics JSONL (default <out>.metrics.jsonl)");
  train->add_option("--seed", train_args.seed, "Master seed");

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a manifest's test split");
  nca::EvalArgs eval_args;
  std::string eval_out;
  std::uint64_t eval_seed = nca::kDefaultEvalSeed;
  int eval_mc = 1;
  eval->add_option("--checkpoint", eval_args.checkpoint, "Checkpoint")->required();
  eval->add_option("--manifest", eval_args.manifest, "Dataset manifest")->required();
  auto* eval_out_opt = eval->add_option("--out", eval_out, "Report JSON line to write");
  auto* eval_seed_opt = eval->add_option("--seed", eval_seed, "Seed for the update masks");
  auto* eval_mc_opt = eval->add_option("--mc", eval_mc, "Average logits over N mask draws")->check(CLI::PositiveNumber);
  eval->add_option("--trained-on", eval_args.trained_on, "Label for the training domain");

  // crossdomain
  auto* cross = app.add_subcommand("crossdomain", "Train-on-X / test-on-Y accuracy matrix");
  std::vector<std::string> cross_domains, cross_checkpoints;
  std::string cross_out;
  std::uint64_t cross_seed = nca::kDefaultEvalSeed;
  int cross_mc = 1;
  bool cross_parallel = false;
  cross->add_option("--manifest", cross_domains, "Domain manifest as NAME=PATH (repeat per domain)")->required();
  cross->add_option("--checkpoint", cross_checkpoints, "Checkpoint as NAME=PATH (repeat; several per domain allowed)");
  auto* cross_out_opt = cross->add_option("--out", cross_out, "JSONL with one line per cell");
  cross->add_option("--seed", cross_seed, "Seed for the update masks");
  cross->add_option("--mc", cross_mc, "Average logits over N mask draws")->check(CLI::PositiveNumber);
  cross->add_flag("--parallel", cross_parallel, "Evaluate cells concurrently");

  // sweep-channels
  auto* sweep = app.add_subcommand("sweep-channels", "Accuracy as a function of the channel count");
  nca::SweepArgs sweep_args;
  std::string sweep_config, sweep_out;
  auto* sweep_config_opt = sweep->add_option("--config", sweep_config, "Run config");
  sweep->add_option("--manifest", sweep_args.manifest, "Dataset manifest")->required();
  sweep->add_option("--channels", sweep_args.channels, "Channel counts, e.g. 8,16,32")->required()->delimiter(',');
  sweep->add_option("--seed", sweep_args.seed, "Master seed");
  auto* sweep_out_opt = sweep->add_option("--out", sweep_out, "TSV table to write");

  // explain
  auto* explain = app.add_subcommand("explain", "Relevance heatmaps for one image");
  nca::ExplainArgs explain_args;
  explain->add_option("--checkpoint", explain_args.checkpoint, "Checkpoint")->required();
  explain->add_option("--image", explain_args.image, "Image (PNG, JPEG or TIFF)")->required();
  explain->add_option("--top-k", explain_args.top_k, "Number of channels to export")->check(CLI::PositiveNumber);
  explain->add_option("--out", explain_args.out, "Output directory")->required();
  explain->add_option("--seed", explain_args.seed, "Seed for the update masks");

  // synth
  auto* synth = app.add_subcommand("synth", "Write a synthetic coloured-blob dataset");
  nca::SynthArgs synth_args;
  synth->add_option("--out", synth_args.out, "Output directory")->required();
  synth->add_option("--per-class", synth_args.per_class, "Images per class");
  synth->add_option("--classes", synth_args.num_classes, "Number of classes");
  synth->add_option("--hue-shift", synth_args.hue_shift_deg, "Hue shift in degrees (domain shift)");
  synth->add_option("--noise", synth_args.noise, "Pixel noise amplitude");
  synth->add_option("--val-fraction", synth_args.val_fraction, "Fraction assigned to val");
  synth->add_option("--test-fraction", synth_args.test_fraction, "Fraction assigned to test");
  synth->add_option("--domain", synth_args.domain, "Domain name written to the manifest");
  synth->add_option("--seed", synth_args.seed, "Master seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*train) {
      train_args.config = opt_if<path>(train_config_opt, train_config);
      train_args.metrics = opt_if<path>(train_metrics_opt, train_metrics);
      nca::cmd_train(train_args, std::cout);
    } else if (*eval) {
      eval_args.out = opt_if<path>(eval_out_opt, eval_out);
      eval_args.seed = opt_if(eval_seed_opt, eval_seed);
      eval_args.mc_samples = opt_if(eval_mc_opt, eval_mc);
      nca::cmd_eval(eval_args, std::cout);
    } else if (*cross) {
      std::vector<nca::DomainInputs> inputs;
      std::map<std::string, std::size_t> index;
      for (const auto& text : cross_domains) {
        auto [name, file] = split_pair(text, "--manifest");
        if (index.count(name)) throw nca::Error(nca::ErrorCode::kUsage, "domain '" + name + "' given twice");
        index[name] = inputs.size();
        inputs.push_back({name, file, {}});
      }
      for (const auto& text : cross_checkpoints) {
        auto [name, file] = split_pair(text, "--checkpoint");
        const auto it = index.find(name);
        if (it == index.end())
          throw nca::Error(nca::ErrorCode::kUsage, "checkpoint for unknown domain '" + name + "'");
        inputs[it->second].checkpoints.emplace_back(file);
      }
      nca::cmd_crossdomain(inputs, nca::InferenceOptions{cross_seed, cross_mc}, cross_parallel,
                           opt_if<path>(cross_out_opt, cross_out), std::cout);
    } else if (*sweep) {
      sweep_args.config = opt_if<path>(sweep_config_opt, sweep_config);
      sweep_args.out = opt_if<path>(sweep_out_opt, sweep_out);
      nca::cmd_sweep_channels(sweep_args, std::cout);
    } else if (*explain) {
      nca::cmd_explain(explain_args, std::cout);
    } else if (*synth) {
      nca::cmd_synth(synth_args, std::cout);
    }
  } catch (const nca::Error& e) {
    std::cerr << "error [" << nca::to_string(e.code()) << "]: " << e.what() << "\n";
    return e.code() == nca::ErrorCode::kUsage || e.code() == nca::ErrorCode::kConfig ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
