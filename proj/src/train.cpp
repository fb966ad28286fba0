// SPDX-License-Identifier: Apache-2.0

#include "nca/train.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>
#include <set>

#include <nlohmann/json.hpp>

#include "nca/eval.hpp"

namespace nca {

double lr_at(std::int64_t t, const AdamHyper& hyper) {
  if (t < 0) throw Error(ErrorCode::kInvalidArgument, "lr_at: step must be >= 0");
  return hyper.lr0 * std::pow(hyper.decay, static_cast<double>(t));
}

double cross_entropy(std::span<const double> logits, int label) {
  if (label < 0 || static_cast<std::size_t>(label) >= logits.size())
    throw Error(ErrorCode::kInvalidArgument, "cross_entropy: label " + std::to_string(label) + " outside [0, " +
                                                 std::to_string(logits.size()) + ")");
  const double m = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (double z : logits) total += std::exp(z - m);
  return m + std::log(total) - logits[static_cast<std::size_t>(label)];
}

template <typename T>
OptimizerState<T> OptimizerState<T>::init(const NcaConfig& config, const AdamHyper& hyper) {
  OptimizerState s;
  s.m = NcaParams<T>::zeros(config);
  s.v = NcaParams<T>::zeros(config);
  s.hyper = hyper;
  return s;
}

template <typename T>
void adam_update(std::span<T> param, std::span<const T> grad, std::span<T> m, std::span<T> v, std::int64_t t,
                 const AdamHyper& hyper) {
  if (grad.size() != param.size() || m.size() != param.size() || v.size() != param.size())
    throw Error(ErrorCode::kShapeMismatch, "adam_update: parameter, gradient and moment sizes differ");
  const double lr = lr_at(t, hyper);
  const double c1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(t + 1));
  const double c2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(t + 1));
  for (std::size_t k = 0; k < param.size(); ++k) {
    const double g = grad[k];
    const double mk = hyper.beta1 * m[k] + (1.0 - hyper.beta1) * g;
    const double vk = hyper.beta2 * v[k] + (1.0 - hyper.beta2) * g * g;
    m[k] = static_cast<T>(mk);
    v[k] = static_cast<T>(vk);
    const double step = lr * (mk / c1) / (std::sqrt(vk / c2) + hyper.eps);
    param[k] = static_cast<T>(param[k] - step);
  }
}

template <typename T>
void adam_step(NcaParams<T>& params, const NcaParams<T>& grads, OptimizerState<T>& state) {
  auto p = params.arrays();
  auto g = grads.arrays();
  auto m = state.m.arrays();
  auto v = state.v.arrays();
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (p[k]->shape != g[k]->shape)
      throw Error(ErrorCode::kShapeMismatch, "adam_step: gradient of " + std::string(kParamNames[k]) + " has shape " +
                                                 shape_string(g[k]->shape));
    adam_update<T>(p[k]->span(), g[k]->span(), m[k]->span(), v[k]->span(), state.step, state.hyper);
  }
  ++state.step;
}

std::vector<std::size_t> balanced_epoch(std::span<const int> labels, std::span<const int> classes, Rng& rng) {
  if (classes.empty()) throw Error(ErrorCode::kInvalidArgument, "balanced_epoch: no classes to balance");
  std::vector<std::vector<std::size_t>> members(classes.size());
  for (std::size_t k = 0; k < labels.size(); ++k) {
    const auto it = std::find(classes.begin(), classes.end(), labels[k]);
    if (it != classes.end()) members[static_cast<std::size_t>(it - classes.begin())].push_back(k);
  }
  std::size_t total = 0;
  for (std::size_t c = 0; c < classes.size(); ++c) {
    if (members[c].empty())
      throw Error(ErrorCode::kEmptyClass, "balanced_epoch: class " + std::to_string(classes[c]) + " has no samples");
    total += members[c].size();
  }
  const auto target = static_cast<std::size_t>(std::llround(static_cast<double>(total) / classes.size()));

  std::vector<std::size_t> order;
  order.reserve(target * classes.size());
  for (auto& group : members) {
    if (group.size() >= target) {
      std::shuffle(group.begin(), group.end(), rng);
      order.insert(order.end(), group.begin(), group.begin() + static_cast<std::ptrdiff_t>(target));
    } else {
      std::uniform_int_distribution<std::size_t> pick(0, group.size() - 1);
      for (std::size_t k = 0; k < target; ++k) order.push_back(group[pick(rng)]);
    }
  }
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

Image apply_dihedral(const Image& image, int rotations, bool flip) {
  if (image.height != image.width)
    throw Error(ErrorCode::kInvalidArgument, "augment: image must be square, got " + std::to_string(image.height) +
                                                 "x" + std::to_string(image.width));
  const int n = image.height;
  Image out = image;
  for (int r = 0; r < ((rotations % 4) + 4) % 4; ++r) {
    Image next(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        for (int k = 0; k < 3; ++k) next.at(j, n - 1 - i, k) = out.at(i, j, k);
    out = std::move(next);
  }
  if (flip) {
    Image next(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        for (int k = 0; k < 3; ++k) next.at(i, n - 1 - j, k) = out.at(i, j, k);
    out = std::move(next);
  }
  return out;
}

Image augment(const Image& image, Rng& rng) {
  std::uniform_int_distribution<int> pick(0, 7);
  const int v = pick(rng);
  return apply_dihedral(image, v >> 1, (v & 1) != 0);
}

namespace {

template <typename T>
struct ForwardVars {
  ParamVars params;
  Var logits;
  Var loss;
};

template <typename T>
ForwardVars<T> record_forward(Tape<T>& tape, const Image& image, int label, const NcaParams<T>& params,
                              const NcaConfig& config, std::span<const StepMask> masks, LossKind loss,
                              bool requires_grad) {
  config.validate();
  check_param_shapes(params, config);
  if (masks.size() != static_cast<std::size_t>(config.steps))
    throw Error(ErrorCode::kInvalidArgument, "forward: " + std::to_string(masks.size()) + " masks for " +
                                                 std::to_string(config.steps) + " steps");
  ForwardVars<T> f;
  f.params = bind_params(tape, params, requires_grad);
  Var state = tape.leaf(make_seed<T>(image, config.channels));
  for (const auto& mask : masks) state = record_step(tape, state, f.params, mask);
  const ClassifierVars cv = record_classifier(tape, tape.channel_max(state), f.params);
  f.logits = cv.logits;
  f.loss = loss == LossKind::kSoftmax ? tape.softmax_cross_entropy(cv.logits, label)
                                      : tape.sigmoid_cross_entropy(cv.logits, label);
  return f;
}

}  // namespace

template <typename T>
LossGradient<T> loss_and_gradient(const Image& image, int label, const NcaParams<T>& params, const NcaConfig& config,
                                  std::span<const StepMask> masks, LossKind loss) {
  Tape<T> tape;
  const auto f = record_forward(tape, image, label, params, config, masks, loss, true);
  tape.backward(f.loss);
  LossGradient<T> out;
  out.loss = tape.value(f.loss).data[0];
  out.predicted = argmax_first<T>(tape.value(f.logits).data);
  auto dst = out.grads.arrays();
  const auto vars = f.params.all();
  for (std::size_t k = 0; k < vars.size(); ++k) *dst[k] = tape.grad(vars[k]);
  return out;
}

template <typename T>
T loss_value(const Image& image, int label, const NcaParams<T>& params, const NcaConfig& config,
             std::span<const StepMask> masks, LossKind loss) {
  Tape<T> tape;
  const auto f = record_forward(tape, image, label, params, config, masks, loss, false);
  return tape.value(f.loss).data[0];
}

std::string metrics_to_json(const EpochMetrics& m) {
  nlohmann::ordered_json j;
  j["epoch"] = m.epoch;
  j["train_loss"] = m.train_loss;
  j["val_loss"] = m.val_loss;
  j["train_acc"] = m.train_acc;
  j["val_acc"] = m.val_acc;
  j["lr"] = m.lr;
  return j.dump();
}

FitResult fit(std::span<const Sample> train, std::span<const Sample> val, const NcaConfig& config,
              const TrainPlan& plan, std::uint64_t seed, const EpochCallback& on_epoch) {
  config.validate();
  return fit_from(init_params<float>(config, derive_seed(seed, 0)), train, val, config, plan, seed, on_epoch);
}

FitResult fit_from(NcaParams<float> params, std::span<const Sample> train, std::span<const Sample> val,
                   const NcaConfig& config, const TrainPlan& plan, std::uint64_t seed, const EpochCallback& on_epoch) {
  config.validate();
  retain_freed_memory();
  check_param_shapes(params, config);
  if (train.empty()) throw Error(ErrorCode::kInvalidArgument, "fit: empty training set");
  if (plan.batch_size < 1 || plan.epochs < 0)
    throw Error(ErrorCode::kInvalidArgument, "fit: batch_size must be >= 1 and epochs >= 0");

  std::vector<int> labels;
  labels.reserve(train.size());
  for (const auto& s : train) {
    if (s.label < 0 || s.label >= config.num_classes)
      throw Error(ErrorCode::kInvalidArgument, "fit: label " + std::to_string(s.label) + " outside [0, " +
                                                   std::to_string(config.num_classes) + ")");
    labels.push_back(s.label);
  }
  const std::set<int> present(labels.begin(), labels.end());
  const std::vector<int> classes(present.begin(), present.end());

  FitResult result;
  auto state = OptimizerState<float>::init(config, plan.adam);
  for (int epoch = 0; epoch < plan.epochs; ++epoch) {
    const auto epoch_id = static_cast<std::uint64_t>(epoch) + 1;
    Rng epoch_rng = make_rng(seed, epoch_id);
    std::vector<std::size_t> order;
    if (plan.balance) {
      order = balanced_epoch(labels, classes, epoch_rng);
    } else {
      order.resize(train.size());
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::shuffle(order.begin(), order.end(), epoch_rng);
    }

    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(plan.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(plan.batch_size));
      std::vector<LossGradient<float>> parts(end - start);
      std::exception_ptr failure;
      const auto batch = static_cast<std::ptrdiff_t>(end - start);
#pragma omp parallel for schedule(dynamic)
      for (std::ptrdiff_t b = 0; b < batch; ++b) {
        try {
          const std::size_t position = start + static_cast<std::size_t>(b);
          const Sample& sample = train[order[position]];
          Rng rng = make_rng(seed, epoch_id, position + 1);
          const Image image = plan.augment ? augment(sample.image, rng) : sample.image;
          std::vector<StepMask> masks;
          masks.reserve(static_cast<std::size_t>(config.steps));
          for (int t = 0; t < config.steps; ++t)
            masks.push_back(draw_mask(image.height, image.width, config.fire_rate, rng));
          parts[static_cast<std::size_t>(b)] = loss_and_gradient<float>(image, sample.label, params, config, masks, plan.loss);
        } catch (...) {
#pragma omp critical
          if (!failure) failure = std::current_exception();
        }
      }
      if (failure) std::rethrow_exception(failure);

      // Serial reduction in batch order.
      NcaParams<float> grads = NcaParams<float>::zeros(config);
      auto dst = grads.arrays();
      const float scale = 1.0f / static_cast<float>(parts.size());
      for (std::size_t b = 0; b < parts.size(); ++b) {
        const auto& part = parts[b];
        if (!std::isfinite(part.loss))
          throw Error(ErrorCode::kNonFiniteLoss, "fit: non-finite loss " + std::to_string(part.loss) + " at epoch " +
                                                     std::to_string(epoch) + ", optimizer step " +
                                                     std::to_string(state.step) + ", sample " +
                                                     std::to_string(order[start + b]) + "; consider a lower learning rate");
        loss_sum += part.loss;
        if (part.predicted == train[order[start + b]].label) ++correct;
        const auto src = part.grads.arrays();
        for (std::size_t k = 0; k < dst.size(); ++k)
          for (std::size_t i = 0; i < dst[k]->size(); ++i) dst[k]->data[i] += src[k]->data[i];
      }
      for (auto* a : dst)
        for (auto& v : a->data) v *= scale;
      adam_step(params, grads, state);
    }

    EpochMetrics m;
    m.epoch = epoch + 1;
    m.train_loss = order.empty() ? 0.0 : loss_sum / static_cast<double>(order.size());
    m.train_acc = order.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(order.size());
    if (!val.empty()) {
      const auto e = evaluate(params, config, val, InferenceOptions{plan.eval_seed, 1});
      m.val_loss = e.mean_loss;
      m.val_acc = e.report.accuracy;
    }
    m.lr = lr_at(state.step, plan.adam);
    result.log.push_back(m);
    if (on_epoch) on_epoch(m);
  }
  result.params = std::move(params);
  return result;
}

#define NCA_INSTANTIATE(T)                                                                                   \
  template struct OptimizerState<T>;                                                                         \
  template void adam_update<T>(std::span<T>, std::span<const T>, std::span<T>, std::span<T>, std::int64_t,   \
                               const AdamHyper&);                                                            \
  template void adam_step<T>(NcaParams<T>&, const NcaParams<T>&, OptimizerState<T>&);                        \
  template LossGradient<T> loss_and_gradient<T>(const Image&, int, const NcaParams<T>&, const NcaConfig&,    \
                                                std::span<const StepMask>, LossKind);                        \
  template T loss_value<T>(const Image&, int, const NcaParams<T>&, const NcaConfig&,                         \
                           std::span<const StepMask>, LossKind);

NCA_INSTANTIATE(float)
NCA_INSTANTIATE(double)
#undef NCA_INSTANTIATE

}  // namespace nca
