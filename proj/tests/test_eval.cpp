// SPDX-License-Identifier: Apache-2.0

#include <nlohmann/json.hpp>

#include "nca/eval.hpp"
#include "test_util.hpp"

namespace nca {
namespace {

TEST(Report, PerfectPredictionsGiveDiagonal) {
  const std::vector<int> labels{0, 1, 2, 2, 1, 0, 3};
  const auto r = make_report(labels, labels, 4);
  EXPECT_DOUBLE_EQ(r.accuracy, 1.0);
  for (int c = 0; c < 4; ++c) {
    EXPECT_DOUBLE_EQ(r.precision[static_cast<std::size_t>(c)], 1.0);
    EXPECT_DOUBLE_EQ(r.recall[static_cast<std::size_t>(c)], 1.0);
    for (int k = 0; k < 4; ++k)
      if (k != c) EXPECT_EQ(r.confusion[static_cast<std::size_t>(c)][static_cast<std::size_t>(k)], 0);
  }
  EXPECT_EQ(r.confusion[2][2], 2);
}

TEST(Report, ConstantPredictorOnBalancedSet) {
  std::vector<int> labels;
  for (int c = 0; c < 13; ++c)
    for (int k = 0; k < 5; ++k) labels.push_back(c);
  const std::vector<int> preds(labels.size(), 6);
  const auto r = make_report(labels, preds, 13);
  EXPECT_NEAR(r.accuracy, 1.0 / 13.0, 1e-12);
  EXPECT_NEAR(r.precision[6], 1.0 / 13.0, 1e-12);
  EXPECT_DOUBLE_EQ(r.recall[6], 1.0);
  EXPECT_DOUBLE_EQ(r.precision[0], 0.0);  // never predicted
  EXPECT_DOUBLE_EQ(r.f1[0], 0.0);
}

TEST(Report, HandCountedThreeClassCase) {
  // true:  0 0 0 1 1 2 2 2 2
  // pred:  0 1 0 1 2 2 2 0 2
  const std::vector<int> t{0, 0, 0, 1, 1, 2, 2, 2, 2};
  const std::vector<int> p{0, 1, 0, 1, 2, 2, 2, 0, 2};
  const auto r = make_report(t, p, 3);
  const std::vector<std::vector<std::int64_t>> expected{{2, 1, 0}, {0, 1, 1}, {1, 0, 3}};
  EXPECT_EQ(r.confusion, expected);
  EXPECT_NEAR(r.accuracy, 6.0 / 9.0, 1e-12);
  EXPECT_NEAR(r.precision[0], 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(r.recall[0], 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(r.precision[1], 1.0 / 2.0, 1e-12);
  EXPECT_NEAR(r.recall[1], 1.0 / 2.0, 1e-12);
  EXPECT_NEAR(r.precision[2], 3.0 / 4.0, 1e-12);
  EXPECT_NEAR(r.recall[2], 3.0 / 4.0, 1e-12);
  EXPECT_NEAR(r.f1[2], 0.75, 1e-12);
}

TEST(Report, RejectsBadInput) {
  const std::vector<int> a{0, 1};
  const std::vector<int> b{0};
  EXPECT_NCA_ERROR(make_report(a, b, 2), ErrorCode::kShapeMismatch);
  const std::vector<int> c{0, 2};
  EXPECT_NCA_ERROR(make_report(a, c, 2), ErrorCode::kInvalidArgument);
  EXPECT_NCA_ERROR(make_report(a, a, 0), ErrorCode::kInvalidArgument);
}

TEST(Report, JsonAndTable) {
  const std::vector<int> t{0, 1, 1};
  const std::vector<int> p{0, 1, 0};
  auto r = make_report(t, p, 2);
  r.trained_on = "a";
  r.tested_on = "b";
  const auto line = report_to_json(r);
  ASSERT_EQ(line.back(), '\n');
  EXPECT_EQ(line.find('\n'), line.size() - 1);
  const auto j = nlohmann::json::parse(line);
  EXPECT_EQ(j["trained_on"], "a");
  EXPECT_EQ(j["samples"], 3);
  EXPECT_EQ(j["confusion"][1][0], 1);
  EXPECT_NEAR(j["accuracy"].get<double>(), 2.0 / 3.0, 1e-15);
  const auto table = report_to_table(r);
  EXPECT_NE(table.find("accuracy: 0.6667"), std::string::npos) << table;
}

TEST(RunStats, SampleStandardDeviation) {
  const std::vector<double> v{0.5, 0.7, 0.9, 0.6};
  const auto s = summarize_runs(v);
  const double mean = (0.5 + 0.7 + 0.9 + 0.6) / 4;
  double sq = 0;
  for (double x : v) sq += (x - mean) * (x - mean);
  EXPECT_NEAR(s.mean, mean, 1e-15);
  EXPECT_NEAR(s.stddev, std::sqrt(sq / 3), 1e-15);
  EXPECT_EQ(s.runs, 4u);
  const std::vector<double> one{0.3};
  EXPECT_EQ(summarize_runs(one).stddev, 0.0);
  EXPECT_EQ(summarize_runs({}).runs, 0u);
}

NcaConfig small_config() {
  NcaConfig c;
  c.channels = 4;
  c.steps = 3;
  c.update_hidden = 6;
  c.classifier_hidden = 5;
  c.num_classes = 3;
  return c;
}

std::vector<Sample> some_samples() {
  BlobOptions o;
  o.size = 16;
  return synth_blobs(2, 3, 3, o);
}

TEST(Predict, SeededAndMatchesRollout) {
  const auto c = small_config();
  auto p = init_params<float>(c, 3);
  for (auto& v : p.w2.data) v = 0.05f;
  const auto samples = some_samples();
  const InferenceOptions opt{77, 1};
  const auto a = predict(p, c, samples, opt);
  const auto b = predict(p, c, samples, opt);
  ASSERT_EQ(a.size(), samples.size());
  for (std::size_t k = 0; k < a.size(); ++k) EXPECT_EQ(a[k].logits, b[k].logits);

  Rng rng = make_rng(77, 4, 0);
  const auto r = rollout<float>(samples[4].image, p, c, rng);
  const auto cls = classify<float>(r.features, p);
  EXPECT_EQ(a[4].logits, cls.logits);
  EXPECT_EQ(a[4].predicted, cls.predicted);
}

TEST(Predict, MonteCarloAveragesDraws) {
  const auto c = small_config();
  auto p = init_params<float>(c, 5);
  for (auto& v : p.w2.data) v = 0.05f;
  const auto samples = some_samples();
  const auto avg = predict(p, c, samples, InferenceOptions{9, 3});
  std::vector<double> sum(3, 0.0);
  for (int d = 0; d < 3; ++d) {
    Rng rng = make_rng(9, 1, static_cast<std::uint64_t>(d));
    const auto r = rollout<float>(samples[1].image, p, c, rng);
    const auto cls = classify<float>(r.features, p);
    for (int k = 0; k < 3; ++k) sum[static_cast<std::size_t>(k)] += cls.logits[static_cast<std::size_t>(k)];
  }
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(avg[1].logits[static_cast<std::size_t>(k)], sum[static_cast<std::size_t>(k)] / 3, 1e-6);
  EXPECT_NCA_ERROR(predict(p, c, samples, InferenceOptions{9, 0}), ErrorCode::kInvalidArgument);
}

TEST(Evaluate, ReportsLossAndConfusion) {
  const auto c = small_config();
  const auto p = init_params<float>(c, 6);
  const auto samples = some_samples();
  const auto e = evaluate(p, c, samples);
  EXPECT_EQ(e.report.samples, 9);
  EXPECT_EQ(e.predictions.size(), 9u);
  EXPECT_GT(e.mean_loss, 0.0);
  std::int64_t total = 0;
  for (const auto& row : e.report.confusion)
    for (auto v : row) total += v;
  EXPECT_EQ(total, 9);
}

}  // namespace
}  // namespace nca
