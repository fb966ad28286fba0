// SPDX-License-Identifier: Apache-2.0

#include "nca/model.hpp"

#include <cmath>
#include <string>

#include "nca/kernels.hpp"

namespace nca {

void NcaConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::kInvalidArgument, "config: " + what); };
  if (channels < 3) fail("channels must be >= 3 (RGB plus hidden), got " + std::to_string(channels));
  if (steps < 0) fail("steps must be >= 0, got " + std::to_string(steps));
  if (update_hidden < 1) fail("update_hidden must be >= 1");
  if (classifier_hidden < 1) fail("classifier_hidden must be >= 1");
  if (num_classes < 1) fail("num_classes must be >= 1");
  if (!(fire_rate > 0.0 && fire_rate <= 1.0)) fail("fire_rate must be in (0, 1], got " + std::to_string(fire_rate));
}

std::array<std::vector<int>, 10> param_shapes(const NcaConfig& config) {
  const int n = config.channels;
  const int hu = config.update_hidden;
  const int hc = config.classifier_hidden;
  const int classes = config.num_classes;
  return {std::vector<int>{n, 3, 3}, {n, 3, 3}, {hu, 3 * n}, {hu}, {n, hu}, {n},
          {hc, n},                   {hc},      {classes, hc}, {classes}};
}

std::size_t count_params(const NcaConfig& config) {
  const std::size_t n = static_cast<std::size_t>(config.channels);
  const std::size_t hu = static_cast<std::size_t>(config.update_hidden);
  const std::size_t hc = static_cast<std::size_t>(config.classifier_hidden);
  const std::size_t classes = static_cast<std::size_t>(config.num_classes);
  return 18 * n + 3 * n * hu + hu + hu * n + n + n * hc + hc + hc * classes + classes;
}

template <typename T>
std::size_t NcaParams<T>::scalar_count() const {
  std::size_t total = 0;
  for (const auto* a : arrays()) total += a->size();
  return total;
}

template <typename T>
NcaParams<T> NcaParams<T>::zeros(const NcaConfig& config) {
  NcaParams p;
  const auto shapes = param_shapes(config);
  auto dst = p.arrays();
  for (std::size_t k = 0; k < dst.size(); ++k) *dst[k] = Tensor<T>(shapes[k]);
  return p;
}

template <typename T>
void check_param_shapes(const NcaParams<T>& params, const NcaConfig& config) {
  const auto shapes = param_shapes(config);
  const auto arrays = params.arrays();
  for (std::size_t k = 0; k < arrays.size(); ++k) {
    if (arrays[k]->shape != shapes[k] || arrays[k]->size() != shape_size(shapes[k]))
      throw Error(ErrorCode::kShapeMismatch, "parameter " + std::string(kParamNames[k]) + " has shape " +
                                                 shape_string(arrays[k]->shape) + ", config expects " +
                                                 shape_string(shapes[k]));
  }
}

template <typename T>
NcaParams<T> init_params(const NcaConfig& config, std::uint64_t seed) {
  config.validate();
  NcaParams<T> p = NcaParams<T>::zeros(config);
  Rng rng(seed);
  auto fill = [&rng](Tensor<T>& t, int fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& v : t.data) v = static_cast<T>(dist(rng));
  };
  fill(p.k1, 9);
  fill(p.k2, 9);
  fill(p.w1, 3 * config.channels);
  fill(p.w3, config.channels);
  fill(p.w4, config.classifier_hidden);
  return p;
}

StepMask StepMask::filled(int height, int width, bool fire) {
  return StepMask{height, width, std::vector<std::uint8_t>(static_cast<std::size_t>(height) * width, fire ? 1 : 0)};
}

std::vector<int> StepMask::active_cells() const {
  std::vector<int> cells;
  cells.reserve(bits.size());
  for (std::size_t p = 0; p < bits.size(); ++p)
    if (bits[p]) cells.push_back(static_cast<int>(p));
  return cells;
}

StepMask draw_mask(int height, int width, double fire_rate, Rng& rng) {
  StepMask mask = StepMask::filled(height, width, false);
  std::bernoulli_distribution fire(fire_rate);
  for (auto& bit : mask.bits) bit = fire(rng) ? 1 : 0;
  return mask;
}

template <typename T>
Grid<T> make_seed(const Image& image, int channels) {
  if (channels < 3)
    throw Error(ErrorCode::kInvalidArgument, "make_seed: need at least 3 channels, got " + std::to_string(channels));
  Grid<T> seed(image.height, image.width, channels);
  for (int r = 0; r < image.height; ++r)
    for (int c = 0; c < image.width; ++c)
      for (int k = 0; k < 3; ++k) seed.at(r, c, k) = static_cast<T>(image.at(r, c, k));
  return seed;
}

template <typename T>
Grid<T> perceive(const Grid<T>& state, const Tensor<T>& k1, const Tensor<T>& k2) {
  Tape<T> tape;
  const Var x = tape.leaf(state);
  std::vector<int> cells(state.shape().cells());
  for (std::size_t p = 0; p < cells.size(); ++p) cells[p] = static_cast<int>(p);
  const Var rows = tape.perceive_rows(x, tape.leaf(k1), tape.leaf(k2), std::move(cells));
  return Grid<T>(state.height(), state.width(), 3 * state.channels(), tape.value(rows).data);
}

template <typename T>
ParamVars bind_params(Tape<T>& tape, const NcaParams<T>& params, bool requires_grad) {
  ParamVars v;
  v.k1 = tape.leaf(params.k1, requires_grad);
  v.k2 = tape.leaf(params.k2, requires_grad);
  v.w1 = tape.leaf(params.w1, requires_grad);
  v.b1 = tape.leaf(params.b1, requires_grad);
  v.w2 = tape.leaf(params.w2, requires_grad);
  v.b2 = tape.leaf(params.b2, requires_grad);
  v.w3 = tape.leaf(params.w3, requires_grad);
  v.b3 = tape.leaf(params.b3, requires_grad);
  v.w4 = tape.leaf(params.w4, requires_grad);
  v.b4 = tape.leaf(params.b4, requires_grad);
  return v;
}

template <typename T>
Var record_step(Tape<T>& tape, Var state, const ParamVars& params, const StepMask& mask) {
  const auto& shape = tape.value(state).shape;
  if (shape.size() != 3 || shape[0] != mask.height || shape[1] != mask.width ||
      mask.bits.size() != static_cast<std::size_t>(mask.height) * mask.width)
    throw Error(ErrorCode::kShapeMismatch, "nca_step: mask " + std::to_string(mask.height) + "x" +
                                               std::to_string(mask.width) + " does not match state " +
                                               shape_string(shape));
  // Only firing cells need the update MLP; the others keep their state.
  auto cells = mask.active_cells();
  const Var perception = tape.perceive_rows(state, params.k1, params.k2, cells);
  const Var hidden = tape.relu(tape.linear(perception, params.w1, params.b1));
  const Var update = tape.linear(hidden, params.w2, params.b2);
  return tape.scatter_add_rows(state, update, std::move(cells));
}

template <typename T>
ClassifierVars record_classifier(Tape<T>& tape, Var features, const ParamVars& params) {
  ClassifierVars out;
  out.hidden = tape.relu(tape.linear(features, params.w3, params.b3));
  out.logits = tape.linear(out.hidden, params.w4, params.b4);
  return out;
}

template <typename T>
Grid<T> nca_step(const Grid<T>& state, const NcaParams<T>& params, const StepMask& mask) {
  Tape<T> tape;
  const ParamVars pv = bind_params(tape, params, false);
  const Var next = record_step(tape, tape.leaf(state), pv, mask);
  return Grid<T>::from_tensor(tape.value(next));
}

template <typename T>
RolloutResult<T> rollout(const Image& image, const NcaParams<T>& params, const NcaConfig& config,
                         std::span<const StepMask> masks) {
  config.validate();
  check_param_shapes(params, config);
  if (masks.size() != static_cast<std::size_t>(config.steps))
    throw Error(ErrorCode::kInvalidArgument, "rollout: " + std::to_string(masks.size()) + " masks for " +
                                                 std::to_string(config.steps) + " steps");
  RolloutResult<T> result;
  result.final_state = make_seed<T>(image, config.channels);
  for (const auto& mask : masks) result.final_state = nca_step(result.final_state, params, mask);

  const GridShape s = result.final_state.shape();
  result.features.resize(static_cast<std::size_t>(s.channels));
  std::vector<int> flat(static_cast<std::size_t>(s.channels));
  kernels::channel_max<T>(result.final_state.values(), s, result.features, flat);
  result.argmax.reserve(flat.size());
  for (int p : flat) result.argmax.push_back(CellPos{p / s.width, p % s.width});
  result.masks.assign(masks.begin(), masks.end());
  return result;
}

template <typename T>
RolloutResult<T> rollout(const Image& image, const NcaParams<T>& params, const NcaConfig& config, Rng& rng) {
  config.validate();
  std::vector<StepMask> masks;
  masks.reserve(static_cast<std::size_t>(config.steps));
  for (int t = 0; t < config.steps; ++t) masks.push_back(draw_mask(image.height, image.width, config.fire_rate, rng));
  return rollout(image, params, config, std::span<const StepMask>(masks));
}

template <typename T>
int argmax_first(std::span<const T> values) {
  int best = 0;
  for (std::size_t k = 1; k < values.size(); ++k)
    if (values[k] > values[static_cast<std::size_t>(best)]) best = static_cast<int>(k);
  return best;
}

template <typename T>
Classification<T> classify(std::span<const T> features, const NcaParams<T>& params) {
  if (params.w3.rank() != 2 || features.size() != static_cast<std::size_t>(params.w3.dim(1)))
    throw Error(ErrorCode::kShapeMismatch, "classify: " + std::to_string(features.size()) +
                                               " features for classifier weight " + shape_string(params.w3.shape));
  Tape<T> tape;
  const ParamVars pv = bind_params(tape, params, false);
  const Var v = tape.leaf(Tensor<T>({static_cast<int>(features.size())},
                                    std::vector<T>(features.begin(), features.end())));
  const ClassifierVars cv = record_classifier(tape, v, pv);
  Classification<T> out;
  out.hidden = tape.value(cv.hidden).data;
  out.logits = tape.value(cv.logits).data;
  out.probs.resize(out.logits.size());
  for (std::size_t k = 0; k < out.logits.size(); ++k)
    out.probs[k] = static_cast<T>(1.0 / (1.0 + std::exp(-static_cast<double>(out.logits[k]))));
  out.predicted = argmax_first<T>(out.logits);
  return out;
}

#define NCA_INSTANTIATE(T)                                                                              \
  template struct NcaParams<T>;                                                                         \
  template void check_param_shapes<T>(const NcaParams<T>&, const NcaConfig&);                           \
  template NcaParams<T> init_params<T>(const NcaConfig&, std::uint64_t);                                \
  template Grid<T> make_seed<T>(const Image&, int);                                                     \
  template Grid<T> perceive<T>(const Grid<T>&, const Tensor<T>&, const Tensor<T>&);                     \
  template Grid<T> nca_step<T>(const Grid<T>&, const NcaParams<T>&, const StepMask&);                   \
  template RolloutResult<T> rollout<T>(const Image&, const NcaParams<T>&, const NcaConfig&, Rng&);      \
  template RolloutResult<T> rollout<T>(const Image&, const NcaParams<T>&, const NcaConfig&,             \
                                       std::span<const StepMask>);                                      \
  template int argmax_first<T>(std::span<const T>);                                                     \
  template Classification<T> classify<T>(std::span<const T>, const NcaParams<T>&);                      \
  template ParamVars bind_params<T>(Tape<T>&, const NcaParams<T>&, bool);                               \
  template Var record_step<T>(Tape<T>&, Var, const ParamVars&, const StepMask&);                        \
  template ClassifierVars record_classifier<T>(Tape<T>&, Var, const ParamVars&);

NCA_INSTANTIATE(float)
NCA_INSTANTIATE(double)
#undef NCA_INSTANTIATE

}  // namespace nca
