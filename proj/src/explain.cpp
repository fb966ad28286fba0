// SPDX-License-Identifier: Apache-2.0

#include "nca/explain.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <system_error>

namespace nca {

namespace fs = std::filesystem;

namespace {

std::vector<double> layer_sums(std::span<const double> activations, std::span<const double> weight, int out) {
  const std::size_t in = activations.size();
  std::vector<double> s(static_cast<std::size_t>(out), 0.0);
  for (std::size_t k = 0; k < s.size(); ++k)
    for (std::size_t j = 0; j < in; ++j) s[k] += activations[j] * weight[k * in + j];
  return s;
}

template <typename T>
std::vector<double> widen(const std::vector<T>& v) {
  return std::vector<double>(v.begin(), v.end());
}

}  // namespace

std::vector<double> lrp_linear_epsilon(std::span<const double> activations, std::span<const double> weight,
                                       std::span<const double> upper_relevance, double epsilon) {
  const std::size_t in = activations.size();
  const std::size_t out = upper_relevance.size();
  if (weight.size() != in * out)
    throw Error(ErrorCode::kShapeMismatch, "lrp: weight of size " + std::to_string(weight.size()) + " for " +
                                               std::to_string(out) + "x" + std::to_string(in) + " layer");
  if (epsilon < 0) throw Error(ErrorCode::kInvalidArgument, "lrp: epsilon must be >= 0");
  const auto s = layer_sums(activations, weight, static_cast<int>(out));
  std::vector<double> lower(in, 0.0);
  for (std::size_t k = 0; k < out; ++k) {
    const double den = s[k] + epsilon * (s[k] >= 0 ? 1.0 : -1.0);
    if (den == 0.0) continue;
    const double ratio = upper_relevance[k] / den;
    for (std::size_t j = 0; j < in; ++j) lower[j] += activations[j] * weight[k * in + j] * ratio;
  }
  return lower;
}

double default_epsilon(std::span<const double> activations, std::span<const double> weight, int out) {
  const auto s = layer_sums(activations, weight, out);
  double total = 0.0;
  for (double v : s) total += std::abs(v);
  return s.empty() ? 0.0 : 1e-6 * total / static_cast<double>(s.size());
}

template <typename T>
RelevanceVector lrp_epsilon(const ClassifierTrace<T>& trace, const NcaParams<T>& params, int target_class,
                            std::optional<double> epsilon) {
  const std::size_t n = trace.features.size();
  const std::size_t hidden = static_cast<std::size_t>(params.w3.rank() == 2 ? params.w3.dim(0) : 0);
  const std::size_t classes = static_cast<std::size_t>(params.w4.rank() == 2 ? params.w4.dim(0) : 0);
  if (n == 0 || trace.hidden.size() != hidden || trace.logits.size() != classes || hidden == 0 ||
      params.w3.dim(1) != static_cast<int>(n))
    throw Error(ErrorCode::kInvalidState, "lrp: forward activations are missing or do not match the classifier");
  if (target_class < 0 || static_cast<std::size_t>(target_class) >= classes)
    throw Error(ErrorCode::kInvalidArgument, "lrp: target class " + std::to_string(target_class) + " outside [0, " +
                                                 std::to_string(classes) + ")");
  if (epsilon && *epsilon < 0) throw Error(ErrorCode::kInvalidArgument, "lrp: epsilon must be >= 0");

  const auto features = widen(trace.features);
  const auto hidden_act = widen(trace.hidden);
  const auto w3 = widen(params.w3.data);
  const auto w4 = widen(params.w4.data);

  RelevanceVector r;
  r.target_class = target_class;
  r.output_relevance = static_cast<double>(trace.logits[static_cast<std::size_t>(target_class)]);
  std::vector<double> top(classes, 0.0);
  top[static_cast<std::size_t>(target_class)] = r.output_relevance;

  r.hidden_epsilon = epsilon ? *epsilon : default_epsilon(hidden_act, w4, static_cast<int>(classes));
  r.hidden_relevance = lrp_linear_epsilon(hidden_act, w4, top, r.hidden_epsilon);
  // ReLU passes relevance unchanged: inactive units already hold zero.
  r.epsilon = epsilon ? *epsilon : default_epsilon(features, w3, static_cast<int>(hidden));
  r.relevance = lrp_linear_epsilon(features, w3, r.hidden_relevance, r.epsilon);
  return r;
}

std::vector<double> RelevanceMap::dense() const {
  const std::size_t n = channels.size();
  std::vector<double> out(static_cast<std::size_t>(height) * width * n, 0.0);
  for (const auto& ch : channels)
    out[(static_cast<std::size_t>(ch.winner.row) * width + ch.winner.col) * n + static_cast<std::size_t>(ch.channel)] +=
        ch.relevance;
  return out;
}

double RelevanceMap::total() const {
  double t = 0.0;
  for (const auto& ch : channels) t += ch.relevance;
  return t;
}

template <typename T>
RelevanceMap route_to_cells(const RelevanceVector& relevance, const Grid<T>& final_state,
                            std::span<const CellPos> argmax) {
  const auto n = static_cast<std::size_t>(final_state.channels());
  if (relevance.relevance.size() != n || argmax.size() != n)
    throw Error(ErrorCode::kShapeMismatch, "route_to_cells: relevance, argmax and state channel counts differ");
  RelevanceMap map;
  map.height = final_state.height();
  map.width = final_state.width();
  map.channels.reserve(n);
  for (std::size_t c = 0; c < n; ++c) {
    ChannelRelevance ch;
    ch.channel = static_cast<int>(c);
    ch.winner = argmax[c];
    ch.relevance = relevance.relevance[c];
    ch.activation.reserve(final_state.shape().cells());
    for (int i = 0; i < map.height; ++i)
      for (int j = 0; j < map.width; ++j) ch.activation.push_back(static_cast<float>(final_state.at(i, j, ch.channel)));
    map.channels.push_back(std::move(ch));
  }
  std::stable_sort(map.channels.begin(), map.channels.end(),
                   [](const ChannelRelevance& a, const ChannelRelevance& b) { return a.relevance > b.relevance; });
  return map;
}

std::vector<fs::path> export_heatmaps(const RelevanceMap& map, int top_k, const fs::path& out_dir) {
  if (top_k < 1 || static_cast<std::size_t>(top_k) > map.channels.size())
    throw Error(ErrorCode::kInvalidArgument, "export_heatmaps: top_k must be in [1, " +
                                                 std::to_string(map.channels.size()) + "], got " + std::to_string(top_k));
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec || !fs::is_directory(out_dir))
    throw Error(ErrorCode::kIo, "export_heatmaps: cannot create output directory " + out_dir.string());

  const int h = map.height;
  const int w = map.width;
  const auto cells = static_cast<std::size_t>(h) * w;
  std::vector<fs::path> written;
  std::vector<std::uint8_t> strip(cells * static_cast<std::size_t>(top_k), 0);
  std::string sidecar = "channel\trelevance\trow\tcol\n";

  for (int rank = 0; rank < top_k; ++rank) {
    const auto& ch = map.channels[static_cast<std::size_t>(rank)];
    const auto [lo, hi] = std::minmax_element(ch.activation.begin(), ch.activation.end());
    std::vector<std::uint8_t> pixels(cells, 0);
    if (*hi > *lo) {
      const double range = static_cast<double>(*hi) - *lo;
      for (std::size_t p = 0; p < cells; ++p)
        pixels[p] = static_cast<std::uint8_t>(std::lround(255.0 * (ch.activation[p] - *lo) / range));
    }
    for (int i = 0; i < h; ++i)
      std::copy_n(pixels.begin() + static_cast<std::ptrdiff_t>(i) * w, w,
                  strip.begin() + (static_cast<std::ptrdiff_t>(i) * top_k + rank) * w);

    char name[64];
    std::snprintf(name, sizeof name, "rank%02d_channel%03d.png", rank, ch.channel);
    const fs::path path = out_dir / name;
    write_png_gray(path, h, w, pixels);
    written.push_back(path);

    char row[128];
    std::snprintf(row, sizeof row, "%d\t%.9g\t%d\t%d\n", ch.channel, ch.relevance, ch.winner.row, ch.winner.col);
    sidecar += row;
  }

  const fs::path composite = out_dir / "composite.png";
  write_png_gray(composite, h, w * top_k, strip);
  written.push_back(composite);

  const fs::path tsv = out_dir / "relevance.tsv";
  std::ofstream out(tsv, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "export_heatmaps: cannot write " + tsv.string());
  out << sidecar;
  written.push_back(tsv);
  return written;
}

template RelevanceVector lrp_epsilon<float>(const ClassifierTrace<float>&, const NcaParams<float>&, int,
                                            std::optional<double>);
template RelevanceVector lrp_epsilon<double>(const ClassifierTrace<double>&, const NcaParams<double>&, int,
                                             std::optional<double>);
template RelevanceMap route_to_cells<float>(const RelevanceVector&, const Grid<float>&, std::span<const CellPos>);
template RelevanceMap route_to_cells<double>(const RelevanceVector&, const Grid<double>&, std::span<const CellPos>);

}  // namespace nca
