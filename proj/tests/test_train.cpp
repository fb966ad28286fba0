// SPDX-License-Identifier: Apache-2.0

#include <map>
#include <set>

#include "nca/train.hpp"
#include "test_util.hpp"

namespace nca {
namespace {

NcaConfig small_config() {
  NcaConfig c;
  c.channels = 4;
  c.steps = 2;
  c.update_hidden = 5;
  c.classifier_hidden = 4;
  c.num_classes = 3;
  return c;
}

std::vector<Sample> small_blobs(std::uint64_t seed, int per_class) {
  BlobOptions o;
  o.size = 16;
  return synth_blobs(seed, per_class, 3, o);
}

TEST(Train, CrossEntropyOfEqualLogitsIsLogK) {
  const std::vector<double> z(13, 0.7);
  EXPECT_NEAR(cross_entropy(z, 4), std::log(13.0), 1e-12);
  const std::vector<double> y{1.0, 2.0, 3.0};
  const double direct = -std::log(std::exp(2.0) / (std::exp(1.0) + std::exp(2.0) + std::exp(3.0)));
  EXPECT_NEAR(cross_entropy(y, 1), direct, 1e-12);
  EXPECT_NCA_ERROR(cross_entropy(y, 3), ErrorCode::kInvalidArgument);
}

TEST(Train, LearningRateDecaysPerStep) {
  EXPECT_DOUBLE_EQ(lr_at(0), 4e-4);
  EXPECT_NEAR(lr_at(10000), 4e-4 * std::pow(0.9999, 10000.0), 1e-18);
  EXPECT_NEAR(lr_at(10000), 1.4714e-4, 1e-8);
  EXPECT_NCA_ERROR(lr_at(-1), ErrorCode::kInvalidArgument);
}

TEST(Train, FirstAdamStepMovesByLearningRateTimesSign) {
  std::vector<double> p{1.0, -2.0, 0.5, 3.0};
  const std::vector<double> g{0.3, -7.0, 1e-3, -0.02};
  std::vector<double> m(4, 0.0), v(4, 0.0);
  AdamHyper h;
  adam_update<double>(p, g, m, v, 0, h);
  const std::vector<double> before{1.0, -2.0, 0.5, 3.0};
  for (std::size_t k = 0; k < 4; ++k) {
    const double expected = before[k] - h.lr0 * g[k] / (std::abs(g[k]) + h.eps);
    EXPECT_NEAR(p[k], expected, 1e-15);
    EXPECT_NEAR(std::abs(p[k] - before[k]), h.lr0, 1e-8);
  }
}

TEST(Train, AdamSecondStepMatchesRecurrence) {
  std::vector<double> p{0.0}, m{0.0}, v{0.0};
  AdamHyper h;
  adam_update<double>(p, std::vector<double>{1.0}, m, v, 0, h);
  adam_update<double>(p, std::vector<double>{-2.0}, m, v, 1, h);
  const double m2 = 0.9 * 0.1 + 0.1 * -2.0;
  const double v2 = 0.999 * 0.001 + 0.001 * 4.0;
  const double step2 = h.lr0 * 0.9999 * (m2 / (1 - 0.81)) / (std::sqrt(v2 / (1 - 0.999 * 0.999)) + h.eps);
  EXPECT_NEAR(m[0], m2, 1e-15);
  EXPECT_NEAR(v[0], v2, 1e-15);
  EXPECT_NEAR(p[0], -h.lr0 / (1.0 + h.eps) - step2, 1e-15);
}

TEST(Train, AdamStepAdvancesCounter) {
  const auto c = small_config();
  auto p = init_params<float>(c, 1);
  auto state = OptimizerState<float>::init(c);
  adam_step(p, NcaParams<float>::zeros(c), state);
  EXPECT_EQ(state.step, 1);
  EXPECT_EQ(p, init_params<float>(c, 1));  // zero gradient, zero move
  auto wrong = NcaParams<float>::zeros(c);
  wrong.b4 = Tensor<float>({1});
  EXPECT_NCA_ERROR(adam_step(p, wrong, state), ErrorCode::kShapeMismatch);
}

TEST(Train, BalancedEpochUndersamplesAndOversamples) {
  // Class sizes 10, 2, 6: mean 6 per class.
  std::vector<int> labels;
  for (int k = 0; k < 10; ++k) labels.push_back(0);
  for (int k = 0; k < 2; ++k) labels.push_back(1);
  for (int k = 0; k < 6; ++k) labels.push_back(2);
  const std::vector<int> classes{0, 1, 2};
  Rng rng(3);
  const auto order = balanced_epoch(labels, classes, rng);
  ASSERT_EQ(order.size(), 18u);
  std::map<int, int> count;
  std::map<int, std::set<std::size_t>> distinct;
  for (auto k : order) {
    ++count[labels[k]];
    distinct[labels[k]].insert(k);
  }
  EXPECT_EQ(count[0], 6);
  EXPECT_EQ(count[1], 6);
  EXPECT_EQ(count[2], 6);
  EXPECT_EQ(distinct[0].size(), 6u);  // without replacement
  EXPECT_EQ(distinct[2].size(), 6u);
  EXPECT_LE(distinct[1].size(), 2u);  // with replacement

  Rng again(3);
  EXPECT_EQ(balanced_epoch(labels, classes, again), order);

  const std::vector<int> missing{0, 5};
  EXPECT_NCA_ERROR(balanced_epoch(labels, missing, rng), ErrorCode::kEmptyClass);
}

TEST(Train, BalancedEpochRoundsMeanSize) {
  const std::vector<int> labels{0, 0, 0, 1, 1};  // mean 2.5 rounds to 3
  const std::vector<int> classes{0, 1};
  Rng rng(4);
  EXPECT_EQ(balanced_epoch(labels, classes, rng).size(), 6u);
}

Image coordinate_image(int n) {
  Image img(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      img.at(i, j, 0) = static_cast<float>(i);
      img.at(i, j, 1) = static_cast<float>(j);
      img.at(i, j, 2) = static_cast<float>(i * n + j);
    }
  return img;
}

TEST(Train, DihedralTransformsAreTheEightSymmetries) {
  const Image img = coordinate_image(5);
  const Image r1 = apply_dihedral(img, 1, false);
  // A quarter turn sends the top-left corner to the top-right.
  EXPECT_EQ(r1.at(0, 4, 2), img.at(0, 0, 2));
  EXPECT_EQ(apply_dihedral(img, 4, false), img);
  EXPECT_EQ(apply_dihedral(apply_dihedral(img, 0, true), 0, true), img);
  std::set<std::vector<float>> seen;
  for (int r = 0; r < 4; ++r)
    for (bool f : {false, true}) {
      const Image t = apply_dihedral(img, r, f);
      std::vector<float> sorted = t.rgb;
      std::vector<float> original = img.rgb;
      std::sort(sorted.begin(), sorted.end());
      std::sort(original.begin(), original.end());
      EXPECT_EQ(sorted, original);
      seen.insert(t.rgb);
    }
  EXPECT_EQ(seen.size(), 8u);
  EXPECT_NCA_ERROR(apply_dihedral(Image(4, 5), 1, false), ErrorCode::kInvalidArgument);
}

TEST(Train, LossGradientMatchesFiniteDifferences) {
  const auto c = small_config();
  auto p = init_params<double>(c, 5);
  for (auto& v : p.w2.data) v = 0.1;  // make the update path live
  for (auto& v : p.b2.data) v = -0.05;
  Image img(5, 5);
  img.rgb = test::random_vector<float>(img.rgb.size(), 6, 0.0, 1.0);
  Rng rng(7);
  std::vector<StepMask> masks;
  for (int t = 0; t < c.steps; ++t) masks.push_back(draw_mask(5, 5, 0.5, rng));

  for (LossKind kind : {LossKind::kSoftmax, LossKind::kSigmoid}) {
    const auto lg = loss_and_gradient<double>(img, 2, p, c, masks, kind);
    EXPECT_NEAR(lg.loss, loss_value<double>(img, 2, p, c, masks, kind), 1e-12);
    auto probe = p;
    auto params = probe.arrays();
    const auto grads = lg.grads.arrays();
    for (std::size_t a = 0; a < params.size(); ++a) {
      for (std::size_t i = 0; i < params[a]->size(); i += 3) {
        const double saved = params[a]->data[i];
        const double h = 1e-6;
        params[a]->data[i] = saved + h;
        const double up = loss_value<double>(img, 2, probe, c, masks, kind);
        params[a]->data[i] = saved - h;
        const double down = loss_value<double>(img, 2, probe, c, masks, kind);
        params[a]->data[i] = saved;
        const double fd = (up - down) / (2 * h);
        EXPECT_NEAR(grads[a]->data[i], fd, 1e-6 * std::max(1.0, std::abs(fd)))
            << kParamNames[a] << "[" << i << "]";
      }
    }
  }
}

TEST(Train, SilentMasksGiveZeroUpdateGradients) {
  const auto c = small_config();
  auto p = init_params<double>(c, 8);
  for (auto& v : p.w2.data) v = 0.2;
  Image img(4, 4);
  img.rgb = test::random_vector<float>(img.rgb.size(), 9, 0.0, 1.0);
  const std::vector<StepMask> masks(2, StepMask::filled(4, 4, false));
  const auto lg = loss_and_gradient<double>(img, 0, p, c, masks, LossKind::kSoftmax);
  for (const auto* g : {&lg.grads.k1, &lg.grads.k2, &lg.grads.w1, &lg.grads.b1, &lg.grads.w2, &lg.grads.b2})
    EXPECT_EQ(test::max_abs(g->data), 0.0);
  EXPECT_GT(test::max_abs(lg.grads.w4.data), 0.0);
}

TEST(Train, ForwardRejectsWrongMaskCount) {
  const auto c = small_config();
  const std::vector<StepMask> masks(1, StepMask::filled(4, 4, true));
  EXPECT_NCA_ERROR(loss_value<float>(Image(4, 4), 0, init_params<float>(c, 1), c, masks, LossKind::kSoftmax),
                   ErrorCode::kInvalidArgument);
}

TEST(Train, CrossEntropyExamples) {
  std::vector<double> z(5, 0.0);
  z[2] = 30.0;
  EXPECT_LT(cross_entropy(z, 2), 1e-9);
  const auto r = test::random_vector<double>(9, 50, -4.0, 4.0);
  for (int label = 0; label < 9; ++label) {
    double denom = 0;
    for (double v : r) denom += std::exp(v);
    EXPECT_NEAR(cross_entropy(r, label), -std::log(std::exp(r[static_cast<std::size_t>(label)]) / denom), 1e-6);
    auto shifted = r;
    for (auto& v : shifted) v += 17.25;
    EXPECT_NEAR(cross_entropy(shifted, label), cross_entropy(r, label), 1e-6);
  }
}

TEST(Train, AdamExamples) {
  std::vector<double> p{0.0}, m{0.0}, v{0.0};
  adam_update<double>(p, std::vector<double>{0.5}, m, v, 0, AdamHyper{});
  EXPECT_NEAR(p[0], -0.0004, 1e-10);

  // Five steps on f(x) = x^2 starting at 1 with a large rate.
  AdamHyper h;
  h.lr0 = 0.1;
  std::vector<double> x{1.0}, mx{0.0}, vx{0.0};
  double previous = x[0] * x[0];
  for (int t = 0; t < 5; ++t) {
    adam_update<double>(x, std::vector<double>{2 * x[0]}, mx, vx, t, h);
    const double f = x[0] * x[0];
    EXPECT_LT(f, previous) << "step " << t;
    previous = f;
  }
  EXPECT_NEAR(lr_at(1), 0.00039996, 1e-15);
}

TEST(Train, BalancedEpochExamples) {
  std::vector<int> uniform;
  for (int c = 0; c < 3; ++c)
    for (int k = 0; k < 100; ++k) uniform.push_back(c);
  const std::vector<int> three{0, 1, 2};
  Rng rng(51);
  const auto order = balanced_epoch(uniform, three, rng);
  std::map<int, int> counts;
  for (auto k : order) ++counts[uniform[k]];
  EXPECT_EQ(counts, (std::map<int, int>{{0, 100}, {1, 100}, {2, 100}}));
  EXPECT_EQ(std::set<std::size_t>(order.begin(), order.end()).size(), 300u);

  std::vector<int> skewed(10, 0);
  skewed.insert(skewed.end(), 100, 1);
  const std::vector<int> two{0, 1};
  const auto o2 = balanced_epoch(skewed, two, rng);
  std::map<int, int> c2;
  std::set<std::size_t> distinct_b;
  for (auto k : o2) {
    ++c2[skewed[k]];
    if (skewed[k] == 1) distinct_b.insert(k);
  }
  EXPECT_EQ(c2[0], 55);
  EXPECT_EQ(c2[1], 55);
  EXPECT_EQ(distinct_b.size(), 55u);
}

TEST(Train, QuarterTurnMovesTopLeftToTopRight) {
  Image img(64, 64);
  img.at(0, 0, 1) = 1.0f;
  const Image r = apply_dihedral(img, 1, false);
  EXPECT_EQ(r.at(0, 63, 1), 1.0f);
  EXPECT_EQ(std::count(r.rgb.begin(), r.rgb.end(), 1.0f), 1);
  EXPECT_EQ(apply_dihedral(img, 0, false), img);
}

TEST(Train, SingleStepFloatGradientMatchesFiniteDifferences) {
  NcaConfig c;
  c.channels = 8;
  c.steps = 1;
  c.update_hidden = 8;
  c.classifier_hidden = 8;
  c.num_classes = 4;
  auto p = NcaParams<double>::zeros(c);
  std::uint64_t s = 60;
  for (auto* a : p.arrays()) a->data = test::random_vector<double>(a->size(), ++s, -0.4, 0.4);
  Image img(6, 6);
  img.rgb = test::random_vector<float>(img.rgb.size(), 70, 0.0, 1.0);
  const std::vector<StepMask> masks{StepMask::filled(6, 6, true)};
  const auto g32 = loss_and_gradient<float>(img, 1, p.cast<float>(), c, masks, LossKind::kSoftmax).grads;
  auto probe = p;
  auto arrays = probe.arrays();
  const auto analytic = g32.arrays();
  for (std::size_t a = 0; a < arrays.size(); ++a) {
    double diff = 0, na = 0, nf = 0;
    for (std::size_t i = 0; i < arrays[a]->size(); ++i) {
      const double saved = arrays[a]->data[i];
      const double h = 1e-3;
      arrays[a]->data[i] = saved + h;
      const double up = loss_value<double>(img, 1, probe, c, masks, LossKind::kSoftmax);
      arrays[a]->data[i] = saved - h;
      const double down = loss_value<double>(img, 1, probe, c, masks, LossKind::kSoftmax);
      arrays[a]->data[i] = saved;
      const double fd = (up - down) / (2 * h);
      const double g = analytic[a]->data[i];
      diff += (g - fd) * (g - fd);
      na += g * g;
      nf += fd * fd;
    }
    EXPECT_LT(std::sqrt(diff / std::max(na, nf)), 1e-3) << kParamNames[a];
  }
}

TEST(Train, OneEpochLowersTheLossOnASingleClass) {
  const auto c = small_config();
  auto samples = small_blobs(80, 16);
  std::vector<Sample> one_class;
  for (auto& s : samples)
    if (s.label == 0) one_class.push_back(s);
  while (one_class.size() < 16) one_class.push_back(one_class.front());
  one_class.resize(16);
  const auto start = init_params<float>(c, 81);
  const auto mean_loss = [&](const NcaParams<float>& p) {
    std::vector<StepMask> masks(static_cast<std::size_t>(c.steps), StepMask::filled(16, 16, true));
    double total = 0;
    for (const auto& s : one_class) total += loss_value<float>(s.image, s.label, p, c, masks, LossKind::kSoftmax);
    return total / static_cast<double>(one_class.size());
  };
  TrainPlan plan;
  plan.epochs = 1;
  plan.batch_size = 2;
  plan.adam.lr0 = 1e-2;
  const auto r = fit_from(start, one_class, {}, c, plan, 82);
  EXPECT_LT(mean_loss(r.params), mean_loss(start));
}

TEST(Train, FitIsDeterministicAndLogsEveryEpoch) {
  const auto c = small_config();
  const auto train = small_blobs(10, 4);
  const auto val = small_blobs(11, 2);
  TrainPlan plan;
  plan.epochs = 3;
  plan.batch_size = 3;
  int calls = 0;
  const auto a = fit(train, val, c, plan, 12, [&](const EpochMetrics&) { ++calls; });
  const auto b = fit(train, val, c, plan, 12);
  EXPECT_EQ(calls, 3);
  ASSERT_EQ(a.log.size(), 3u);
  EXPECT_EQ(a.params, b.params);
  for (std::size_t e = 0; e < 3; ++e) {
    EXPECT_EQ(a.log[e].train_loss, b.log[e].train_loss);
    EXPECT_EQ(a.log[e].val_loss, b.log[e].val_loss);
  }
  EXPECT_FALSE(a.params == init_params<float>(c, derive_seed(12, 0)));
  // 12 samples in batches of 3: four steps per epoch.
  EXPECT_NEAR(a.log[2].lr, lr_at(12), 1e-15);
  const auto other = fit(train, val, c, plan, 13);
  EXPECT_FALSE(other.params == a.params);
}

TEST(Train, ZeroLearningRateLeavesParametersUnchanged) {
  const auto c = small_config();
  const auto train = small_blobs(14, 2);
  TrainPlan plan;
  plan.epochs = 1;
  plan.adam.lr0 = 0.0;
  const auto start = init_params<float>(c, 15);
  const auto r = fit_from(start, train, {}, c, plan, 16);
  EXPECT_EQ(r.params, start);
}

TEST(Train, FitRejectsBadInput) {
  const auto c = small_config();
  TrainPlan plan;
  plan.epochs = 1;
  EXPECT_NCA_ERROR(fit({}, {}, c, plan, 1), ErrorCode::kInvalidArgument);
  auto train = small_blobs(1, 1);
  train[0].label = 7;
  EXPECT_NCA_ERROR(fit(train, {}, c, plan, 1), ErrorCode::kInvalidArgument);
  plan.batch_size = 0;
  EXPECT_NCA_ERROR(fit(small_blobs(1, 1), {}, c, plan, 1), ErrorCode::kInvalidArgument);
}

TEST(Train, DivergentTrainingIsReported) {
  const auto c = small_config();
  TrainPlan plan;
  plan.epochs = 3;
  plan.batch_size = 1;
  plan.adam.lr0 = 1e30;
  EXPECT_NCA_ERROR(fit(small_blobs(2, 3), {}, c, plan, 3), ErrorCode::kNonFiniteLoss);
}

TEST(Train, MetricsSerialiseAsJson) {
  EpochMetrics m;
  m.epoch = 3;
  m.train_loss = 0.5;
  m.lr = 1e-4;
  const auto text = metrics_to_json(m);
  EXPECT_NE(text.find("\"epoch\":3"), std::string::npos) << text;
  EXPECT_NE(text.find("\"train_loss\":0.5"), std::string::npos) << text;
  EXPECT_EQ(text.find('\n'), std::string::npos);
}

}  // namespace
}  // namespace nca
