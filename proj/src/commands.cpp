// SPDX-License-Identifier: Apache-2.0

#include "nca/commands.hpp"

#include <cstdio>
#include <fstream>
#include <ostream>
#include <set>

#include <nlohmann/json.hpp>

#include "nca/explain.hpp"

namespace nca {

namespace {

void require_file(const fs::path& path, const char* what) {
  if (!fs::is_regular_file(path)) throw Error(ErrorCode::kUsage, std::string(what) + " not found: " + path.string());
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  return out;
}

std::string domain_of(const DatasetManifest& manifest) {
  std::set<std::string> names;
  for (const auto& e : manifest.entries) names.insert(e.domain);
  std::string out;
  for (const auto& n : names) out += (out.empty() ? "" : "+") + n;
  return out;
}

}  // namespace

RunConfig load_run_config(const std::optional<fs::path>& path) {
  return path ? RunConfig::read(*path) : RunConfig{};
}

TrainingData training_data(const DatasetManifest& manifest, double val_fraction, std::uint64_t seed) {
  DatasetManifest train = manifest.filter(Split::kTrain);
  DatasetManifest val = manifest.filter(Split::kVal);
  if (val.entries.empty() && val_fraction > 0) {
    assign_splits(train, val_fraction, 0.0, derive_seed(seed, 0x7a11));
    val = train.filter(Split::kVal);
    train = train.filter(Split::kTrain);
  }
  if (train.entries.empty()) throw Error(ErrorCode::kInvalidArgument, "manifest has no training entries");
  return TrainingData{load_samples(train), load_samples(val)};
}

std::vector<Sample> evaluation_samples(const DatasetManifest& manifest) {
  DatasetManifest test = manifest.filter(Split::kTest);
  return load_samples(test.entries.empty() ? manifest : test);
}

FitResult cmd_train(const TrainArgs& args, std::ostream& log) {
  require_file(args.manifest, "manifest");
  const RunConfig rc = load_run_config(args.config);
  const auto manifest = DatasetManifest::read(args.manifest);
  manifest.validate(true);
  for (const auto& e : manifest.entries)
    if (e.class_id >= rc.model.num_classes)
      throw Error(ErrorCode::kConfig, "manifest class id " + std::to_string(e.class_id) + " exceeds num_classes = " +
                                          std::to_string(rc.model.num_classes));
  const auto data = training_data(manifest, rc.val_fraction, args.seed);
  log << "train: " << data.train.size() << " samples, val: " << data.val.size() << " samples, "
      << count_params(rc.model) << " parameters\n";

  const fs::path metrics_path = args.metrics ? *args.metrics : fs::path(args.out.string() + ".metrics.jsonl");
  auto metrics = open_out(metrics_path);
  const auto result = fit(data.train, data.val, rc.model, rc.plan, args.seed, [&](const EpochMetrics& m) {
    metrics << metrics_to_json(m);
    metrics.flush();
    char line[160];
    std::snprintf(line, sizeof line, "epoch %3d  loss %.4f  acc %.4f  val_loss %.4f  val_acc %.4f  lr %.3g\n", m.epoch,
                  m.train_loss, m.train_acc, m.val_loss, m.val_acc, m.lr);
    log << line << std::flush;
  });
  if (args.out.has_parent_path()) fs::create_directories(args.out.parent_path());
  save_checkpoint(result.params, rc.model, args.out);
  log << "wrote " << args.out.string() << " and " << metrics_path.string() << "\n";
  return result;
}

EvalReport cmd_eval(const EvalArgs& args, std::ostream& log) {
  require_file(args.checkpoint, "checkpoint");
  require_file(args.manifest, "manifest");
  const auto ck = load_checkpoint(args.checkpoint);
  const auto manifest = DatasetManifest::read(args.manifest);
  const auto samples = evaluation_samples(manifest);
  InferenceOptions options;
  if (args.seed) options.seed = *args.seed;
  if (args.mc_samples) options.mc_samples = *args.mc_samples;
  auto evaluation = evaluate(ck.params, ck.config, samples, options);
  auto& report = evaluation.report;
  report.trained_on = args.trained_on;
  report.tested_on = domain_of(manifest);
  log << report_to_table(report);
  if (args.out) open_out(*args.out) << report_to_json(report);
  return report;
}

CrossDomainMatrix crossdomain_matrix(const std::vector<DomainModels>& domains, const InferenceOptions& options,
                                     bool parallel) {
  const auto d = domains.size();
  CrossDomainMatrix out;
  for (const auto& dom : domains) out.domains.push_back(dom.name);
  out.cells.assign(d, std::vector<CrossDomainCell>(d));

  const auto cell = [&](std::size_t i, std::size_t j) {
    auto& c = out.cells[i][j];
    if (!domains[i].model_error.empty()) {
      c.error = domains[i].model_error;
      return;
    }
    if (!domains[j].data_error.empty()) {
      c.error = domains[j].data_error;
      return;
    }
    if (domains[i].models.empty()) {
      c.error = "no checkpoints for " + domains[i].name;
      return;
    }
    if (domains[j].eval_samples.empty()) {
      c.error = "no evaluation samples for " + domains[j].name;
      return;
    }
    std::vector<double> acc;
    for (const auto& params : domains[i].models) {
      auto ev = evaluate(params, domains[i].config, domains[j].eval_samples, options);
      ev.report.trained_on = domains[i].name;
      ev.report.tested_on = domains[j].name;
      acc.push_back(ev.report.accuracy);
      c.reports.push_back(std::move(ev.report));
    }
    c.stats = summarize_runs(acc);
  };

  const auto total = static_cast<std::ptrdiff_t>(d * d);
  if (parallel) {
    std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t k = 0; k < total; ++k) {
      try {
        cell(static_cast<std::size_t>(k) / d, static_cast<std::size_t>(k) % d);
      } catch (...) {
#pragma omp critical
        if (!failure) failure = std::current_exception();
      }
    }
    if (failure) std::rethrow_exception(failure);
  } else {
    for (std::ptrdiff_t k = 0; k < total; ++k) cell(static_cast<std::size_t>(k) / d, static_cast<std::size_t>(k) % d);
  }
  return out;
}

CrossDomainMatrix cmd_crossdomain(const std::vector<DomainInputs>& inputs, const InferenceOptions& options,
                                  bool parallel, const std::optional<fs::path>& out, std::ostream& log) {
  if (inputs.empty()) throw Error(ErrorCode::kUsage, "crossdomain needs at least one domain");
  std::vector<DomainModels> domains;
  for (const auto& in : inputs) {
    DomainModels dm;
    dm.name = in.name;
    try {
      require_file(in.manifest, "manifest");
      dm.eval_samples = evaluation_samples(DatasetManifest::read(in.manifest));
    } catch (const std::exception& e) {
      dm.data_error = e.what();
    }
    for (const auto& path : in.checkpoints) {
      try {
        auto ck = load_checkpoint(path);
        if (!dm.models.empty() && !(ck.config == dm.config))
          throw Error(ErrorCode::kShapeMismatch, "checkpoint " + path.string() + " has a different config");
        dm.config = ck.config;
        dm.models.push_back(std::move(ck.params));
      } catch (const std::exception& e) {
        dm.model_error += (dm.model_error.empty() ? "" : "; ") + std::string(e.what());
      }
    }
    domains.push_back(std::move(dm));
  }
  auto matrix = crossdomain_matrix(domains, options, parallel);
  log << crossdomain_to_table(matrix);
  if (out) open_out(*out) << crossdomain_to_jsonl(matrix);
  return matrix;
}

std::string crossdomain_to_table(const CrossDomainMatrix& m) {
  std::string out = "trained on \\ tested on";
  char buf[96];
  for (const auto& name : m.domains) {
    std::snprintf(buf, sizeof buf, "  %16s", name.c_str());
    out += buf;
  }
  out += "\n";
  for (std::size_t i = 0; i < m.domains.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%-22s", m.domains[i].c_str());
    out += buf;
    for (const auto& c : m.cells[i]) {
      if (!c.error.empty()) std::snprintf(buf, sizeof buf, "  %16s", "missing");
      else if (c.stats.runs > 1) std::snprintf(buf, sizeof buf, "  %8.2f ± %5.2f", 100 * c.stats.mean, 100 * c.stats.stddev);
      else std::snprintf(buf, sizeof buf, "  %16.2f", 100 * c.stats.mean);
      out += buf;
    }
    out += "\n";
  }
  for (std::size_t i = 0; i < m.domains.size(); ++i)
    for (std::size_t j = 0; j < m.domains.size(); ++j)
      if (!m.cells[i][j].error.empty())
        out += m.domains[i] + " -> " + m.domains[j] + ": " + m.cells[i][j].error + "\n";
  return out;
}

std::string crossdomain_to_jsonl(const CrossDomainMatrix& m) {
  std::string out;
  for (std::size_t i = 0; i < m.domains.size(); ++i)
    for (std::size_t j = 0; j < m.domains.size(); ++j) {
      const auto& c = m.cells[i][j];
      nlohmann::ordered_json row;
      row["trained_on"] = m.domains[i];
      row["tested_on"] = m.domains[j];
      if (!c.error.empty()) {
        row["error"] = c.error;
      } else {
        row["runs"] = c.stats.runs;
        row["mean_accuracy"] = c.stats.mean;
        row["std_accuracy"] = c.stats.stddev;
        std::vector<double> acc;
        for (const auto& r : c.reports) acc.push_back(r.accuracy);
        row["accuracies"] = acc;
      }
      out += row.dump() + "\n";
    }
  return out;
}

std::vector<SweepRow> sweep_channels(const RunConfig& config, const std::vector<int>& channels,
                                     const TrainingData& data, const std::vector<Sample>& test, std::uint64_t seed,
                                     std::ostream& log) {
  if (channels.empty()) throw Error(ErrorCode::kInvalidArgument, "sweep needs at least one channel count");
  for (int n : channels)
    if (n < 3) throw Error(ErrorCode::kInvalidArgument, "channel count " + std::to_string(n) + " is below 3 (RGB)");
  std::vector<SweepRow> rows;
  for (int n : channels) {
    NcaConfig model = config.model;
    model.channels = n;
    const auto result = fit(data.train, data.val, model, config.plan, seed);
    InferenceOptions options{config.plan.eval_seed, config.mc_samples};
    const auto ev = evaluate(result.params, model, test, options);
    SweepRow row{n, ev.report.accuracy, result.log.empty() ? 0.0 : result.log.back().val_acc};
    log << "channels " << n << "  accuracy " << row.accuracy << "\n" << std::flush;
    rows.push_back(row);
  }
  return rows;
}

std::vector<SweepRow> cmd_sweep_channels(const SweepArgs& args, std::ostream& log) {
  for (int n : args.channels)
    if (n < 3) throw Error(ErrorCode::kUsage, "channel count " + std::to_string(n) + " is below 3 (RGB)");
  require_file(args.manifest, "manifest");
  const RunConfig rc = load_run_config(args.config);
  const auto manifest = DatasetManifest::read(args.manifest);
  const auto data = training_data(manifest, rc.val_fraction, args.seed);
  const auto test = evaluation_samples(manifest);
  auto rows = sweep_channels(rc, args.channels, data, test, args.seed, log);
  const auto tsv = sweep_to_tsv(rows);
  log << tsv;
  if (args.out) open_out(*args.out) << tsv;
  return rows;
}

std::string sweep_to_tsv(const std::vector<SweepRow>& rows) {
  std::string out = "channels\taccuracy\tval_accuracy\n";
  char buf[96];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%d\t%.6f\t%.6f\n", r.channels, r.accuracy, r.val_accuracy);
    out += buf;
  }
  return out;
}

ExplainResult cmd_explain(const ExplainArgs& args, std::ostream& log) {
  require_file(args.checkpoint, "checkpoint");
  require_file(args.image, "image");
  const auto ck = load_checkpoint(args.checkpoint);
  const Image image = load_image_64(args.image);
  Rng rng = make_rng(args.seed, 0, 0);
  const auto roll = rollout(image, ck.params, ck.config, rng);
  const auto cls = classify<float>(roll.features, ck.params);
  const auto trace = ClassifierTrace<float>::from(roll.features, cls);
  const auto rel = lrp_epsilon(trace, ck.params, cls.predicted);
  const auto map = route_to_cells(rel, roll.final_state, roll.argmax);

  ExplainResult result;
  result.predicted = cls.predicted;
  result.logits = cls.logits;
  result.files = export_heatmaps(map, args.top_k, args.out);
  log << "predicted class " << cls.predicted << " (logit " << cls.logits[static_cast<std::size_t>(cls.predicted)]
      << ")\n";
  log << "rank  channel  relevance\n";
  char buf[96];
  for (int r = 0; r < args.top_k; ++r) {
    const auto& ch = map.channels[static_cast<std::size_t>(r)];
    result.top.emplace_back(ch.channel, ch.relevance);
    std::snprintf(buf, sizeof buf, "%4d  %7d  %+.6g\n", r, ch.channel, ch.relevance);
    log << buf;
  }
  log << "relevance routed to cells via the channel-max winners\n";
  return result;
}

DatasetManifest cmd_synth(const SynthArgs& args, std::ostream& log) {
  if (args.per_class < 1) throw Error(ErrorCode::kUsage, "per-class count must be >= 1");
  if (args.num_classes < 1 || args.num_classes > kNumHarmonizedClasses)
    throw Error(ErrorCode::kUsage, "class count must be in [1, 13]");
  BlobOptions opt;
  opt.hue_shift_deg = args.hue_shift_deg;
  opt.noise = args.noise;
  const auto samples = synth_blobs(args.seed, args.per_class, args.num_classes, opt);
  fs::create_directories(args.out);
  auto manifest = write_samples(samples, args.out, args.domain);
  for (auto& e : manifest.entries) e.path = fs::path(e.path).lexically_relative(args.out).string();
  assign_splits(manifest, args.val_fraction, args.test_fraction, derive_seed(args.seed, 0x5b11));
  manifest.write(args.out / "manifest.tsv");
  open_out(args.out / "harmonization.tsv") << HarmonizationMap::identity(args.domain, args.num_classes).serialize();
  log << "wrote " << samples.size() << " images to " << args.out.string() << "\n";
  return manifest;
}

}  // namespace nca
