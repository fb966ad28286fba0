// SPDX-License-Identifier: Apache-2.0

#include "nca/eval.hpp"

#include <cmath>
#include <cstdio>
#include <exception>

#include <nlohmann/json.hpp>

#include "nca/train.hpp"

namespace nca {

EvalReport make_report(std::span<const int> labels, std::span<const int> predictions, int num_classes) {
  if (labels.size() != predictions.size())
    throw Error(ErrorCode::kShapeMismatch, "make_report: " + std::to_string(labels.size()) + " labels but " +
                                               std::to_string(predictions.size()) + " predictions");
  if (num_classes < 1) throw Error(ErrorCode::kInvalidArgument, "make_report: num_classes must be >= 1");
  EvalReport r;
  r.num_classes = num_classes;
  r.samples = static_cast<std::int64_t>(labels.size());
  r.confusion.assign(static_cast<std::size_t>(num_classes), std::vector<std::int64_t>(static_cast<std::size_t>(num_classes), 0));
  for (std::size_t k = 0; k < labels.size(); ++k) {
    const int t = labels[k];
    const int p = predictions[k];
    if (t < 0 || t >= num_classes || p < 0 || p >= num_classes)
      throw Error(ErrorCode::kInvalidArgument, "make_report: class id outside [0, " + std::to_string(num_classes) + ")");
    ++r.confusion[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)];
  }
  std::int64_t trace = 0;
  r.precision.assign(static_cast<std::size_t>(num_classes), 0.0);
  r.recall.assign(static_cast<std::size_t>(num_classes), 0.0);
  r.f1.assign(static_cast<std::size_t>(num_classes), 0.0);
  for (std::size_t c = 0; c < r.confusion.size(); ++c) {
    const std::int64_t tp = r.confusion[c][c];
    trace += tp;
    std::int64_t row = 0;
    std::int64_t col = 0;
    for (std::size_t k = 0; k < r.confusion.size(); ++k) {
      row += r.confusion[c][k];
      col += r.confusion[k][c];
    }
    r.precision[c] = col ? static_cast<double>(tp) / static_cast<double>(col) : 0.0;
    r.recall[c] = row ? static_cast<double>(tp) / static_cast<double>(row) : 0.0;
    const double s = r.precision[c] + r.recall[c];
    r.f1[c] = s > 0 ? 2.0 * r.precision[c] * r.recall[c] / s : 0.0;
  }
  r.accuracy = r.samples ? static_cast<double>(trace) / static_cast<double>(r.samples) : 0.0;
  return r;
}

std::string report_to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["trained_on"] = r.trained_on;
  j["tested_on"] = r.tested_on;
  j["samples"] = r.samples;
  j["num_classes"] = r.num_classes;
  j["accuracy"] = r.accuracy;
  j["precision"] = r.precision;
  j["recall"] = r.recall;
  j["f1"] = r.f1;
  j["confusion"] = r.confusion;
  return j.dump() + "\n";
}

std::string report_to_table(const EvalReport& r) {
  std::string out;
  char line[160];
  std::snprintf(line, sizeof line, "trained on: %s  tested on: %s  samples: %lld  accuracy: %.4f\n",
                r.trained_on.empty() ? "-" : r.trained_on.c_str(), r.tested_on.empty() ? "-" : r.tested_on.c_str(),
                static_cast<long long>(r.samples), r.accuracy);
  out += line;
  out += "class  support  precision  recall      f1\n";
  for (int c = 0; c < r.num_classes; ++c) {
    std::int64_t support = 0;
    for (auto v : r.confusion[static_cast<std::size_t>(c)]) support += v;
    std::snprintf(line, sizeof line, "%5d  %7lld  %9.4f  %6.4f  %6.4f\n", c, static_cast<long long>(support),
                  r.precision[static_cast<std::size_t>(c)], r.recall[static_cast<std::size_t>(c)],
                  r.f1[static_cast<std::size_t>(c)]);
    out += line;
  }
  out += "confusion (rows: true, columns: predicted)\n";
  for (const auto& row : r.confusion) {
    for (std::size_t k = 0; k < row.size(); ++k) {
      std::snprintf(line, sizeof line, "%s%6lld", k ? " " : "", static_cast<long long>(row[k]));
      out += line;
    }
    out += "\n";
  }
  return out;
}

std::vector<Prediction> predict(const NcaParams<float>& params, const NcaConfig& config,
                                std::span<const Sample> samples, const InferenceOptions& options) {
  config.validate();
  retain_freed_memory();
  check_param_shapes(params, config);
  if (options.mc_samples < 1) throw Error(ErrorCode::kInvalidArgument, "predict: mc_samples must be >= 1");
  std::vector<Prediction> out(samples.size());
  std::exception_ptr failure;
  const auto n = static_cast<std::ptrdiff_t>(samples.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t k = 0; k < n; ++k) {
    try {
      std::vector<double> sum(static_cast<std::size_t>(config.num_classes), 0.0);
      for (int draw = 0; draw < options.mc_samples; ++draw) {
        Rng rng = make_rng(options.seed, static_cast<std::uint64_t>(k), static_cast<std::uint64_t>(draw));
        const auto r = rollout<float>(samples[static_cast<std::size_t>(k)].image, params, config, rng);
        const auto cls = classify<float>(r.features, params);
        for (std::size_t c = 0; c < sum.size(); ++c) sum[c] += cls.logits[c];
      }
      Prediction& p = out[static_cast<std::size_t>(k)];
      p.logits.resize(sum.size());
      for (std::size_t c = 0; c < sum.size(); ++c) p.logits[c] = static_cast<float>(sum[c] / options.mc_samples);
      p.predicted = argmax_first<float>(p.logits);
    } catch (...) {
#pragma omp critical
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

Evaluation evaluate(const NcaParams<float>& params, const NcaConfig& config, std::span<const Sample> samples,
                    const InferenceOptions& options) {
  const auto preds = predict(params, config, samples, options);
  Evaluation e;
  std::vector<int> labels;
  labels.reserve(samples.size());
  double loss = 0.0;
  for (std::size_t k = 0; k < samples.size(); ++k) {
    labels.push_back(samples[k].label);
    e.predictions.push_back(preds[k].predicted);
    const std::vector<double> logits(preds[k].logits.begin(), preds[k].logits.end());
    loss += cross_entropy(logits, samples[k].label);
  }
  e.mean_loss = samples.empty() ? 0.0 : loss / static_cast<double>(samples.size());
  e.report = make_report(labels, e.predictions, config.num_classes);
  return e;
}

RunStats summarize_runs(std::span<const double> values) {
  RunStats s;
  s.runs = values.size();
  if (values.empty()) return s;
  double total = 0.0;
  for (double v : values) total += v;
  s.mean = total / static_cast<double>(values.size());
  if (values.size() > 1) {
    double sq = 0.0;
    for (double v : values) sq += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(sq / static_cast<double>(values.size() - 1));
  }
  return s;
}

}  // namespace nca
