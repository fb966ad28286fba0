// SPDX-License-Identifier: Apache-2.0

#include "nca/run_config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "nca/error.hpp"

namespace nca {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void fail(const std::string& source, int line, std::string_view key, const std::string& what) {
  throw Error(ErrorCode::kConfig,
              source + ":" + std::to_string(line) + ": key '" + std::string(key) + "': " + what);
}

template <typename V>
bool parse_number(std::string_view text, V& out) {
  if constexpr (std::is_floating_point_v<V>) {
    auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
    return ec == std::errc{} && p == text.data() + text.size();
  } else {
    int base = 10;
    if (text.size() > 2 && text[0] == '0' && (text[1] == 'x' || text[1] == 'X')) {
      text.remove_prefix(2);
      base = 16;
    }
    auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), out, base);
    return ec == std::errc{} && p == text.data() + text.size();
  }
}

bool parse_bool(std::string_view text, bool& out) {
  if (text == "true" || text == "1" || text == "yes") {
    out = true;
    return true;
  }
  if (text == "false" || text == "0" || text == "no") {
    out = false;
    return true;
  }
  return false;
}

using Setter = std::function<bool(RunConfig&, std::string_view)>;

template <typename V, typename F>
Setter number_at(F field) {
  return [field](RunConfig& rc, std::string_view text) {
    V value{};
    if (!parse_number(text, value)) return false;
    field(rc) = value;
    return true;
  };
}

template <typename F>
Setter bool_at(F field) {
  return [field](RunConfig& rc, std::string_view text) { return parse_bool(text, field(rc)); };
}

const std::map<std::string, Setter, std::less<>>& setters() {
  static const std::map<std::string, Setter, std::less<>> table = {
      {"channels", number_at<int>([](RunConfig& r) -> int& { return r.model.channels; })},
      {"steps", number_at<int>([](RunConfig& r) -> int& { return r.model.steps; })},
      {"update_hidden", number_at<int>([](RunConfig& r) -> int& { return r.model.update_hidden; })},
      {"classifier_hidden", number_at<int>([](RunConfig& r) -> int& { return r.model.classifier_hidden; })},
      {"num_classes", number_at<int>([](RunConfig& r) -> int& { return r.model.num_classes; })},
      {"fire_rate", number_at<double>([](RunConfig& r) -> double& { return r.model.fire_rate; })},
      {"lr", number_at<double>([](RunConfig& r) -> double& { return r.plan.adam.lr0; })},
      {"beta1", number_at<double>([](RunConfig& r) -> double& { return r.plan.adam.beta1; })},
      {"beta2", number_at<double>([](RunConfig& r) -> double& { return r.plan.adam.beta2; })},
      {"eps", number_at<double>([](RunConfig& r) -> double& { return r.plan.adam.eps; })},
      {"lr_decay", number_at<double>([](RunConfig& r) -> double& { return r.plan.adam.decay; })},
      {"batch_size", number_at<int>([](RunConfig& r) -> int& { return r.plan.batch_size; })},
      {"epochs", number_at<int>([](RunConfig& r) -> int& { return r.plan.epochs; })},
      {"loss",
       [](RunConfig& r, std::string_view t) {
         if (t == "softmax") r.plan.loss = LossKind::kSoftmax;
         else if (t == "sigmoid") r.plan.loss = LossKind::kSigmoid;
         else return false;
         return true;
       }},
      {"balance", bool_at([](RunConfig& r) -> bool& { return r.plan.balance; })},
      {"augment", bool_at([](RunConfig& r) -> bool& { return r.plan.augment; })},
      {"val_fraction", number_at<double>([](RunConfig& r) -> double& { return r.val_fraction; })},
      {"eval_seed", number_at<std::uint64_t>([](RunConfig& r) -> std::uint64_t& { return r.plan.eval_seed; })},
      {"mc_samples", number_at<int>([](RunConfig& r) -> int& { return r.mc_samples; })},
  };
  return table;
}

}  // namespace

RunConfig RunConfig::parse(std::string_view text, const std::string& source) {
  RunConfig rc;
  std::set<std::string, std::less<>> seen;
  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) fail(source, line_no, line, "expected 'key = value'");
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    const auto it = setters().find(key);
    if (it == setters().end()) fail(source, line_no, key, "unknown key");
    if (!seen.insert(std::string(key)).second) fail(source, line_no, key, "duplicate key");
    if (value.empty() || !it->second(rc, value)) fail(source, line_no, key, "bad value '" + std::string(value) + "'");
  }

  const auto range = [&](bool ok, std::string_view key, const char* what) {
    if (!ok) throw Error(ErrorCode::kConfig, source + ": key '" + std::string(key) + "': " + what);
  };
  try {
    rc.model.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::kConfig, source + ": " + e.what());
  }
  range(rc.plan.adam.lr0 >= 0, "lr", "must be >= 0");
  range(rc.plan.adam.beta1 >= 0 && rc.plan.adam.beta1 < 1, "beta1", "must be in [0, 1)");
  range(rc.plan.adam.beta2 >= 0 && rc.plan.adam.beta2 < 1, "beta2", "must be in [0, 1)");
  range(rc.plan.adam.eps > 0, "eps", "must be > 0");
  range(rc.plan.adam.decay > 0 && rc.plan.adam.decay <= 1, "lr_decay", "must be in (0, 1]");
  range(rc.plan.batch_size >= 1, "batch_size", "must be >= 1");
  range(rc.plan.epochs >= 0, "epochs", "must be >= 0");
  range(rc.val_fraction >= 0 && rc.val_fraction < 1, "val_fraction", "must be in [0, 1)");
  range(rc.mc_samples >= 1, "mc_samples", "must be >= 1");
  return rc;
}

RunConfig RunConfig::read(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kConfig, "cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

std::string RunConfig::serialize() const {
  std::ostringstream out;
  out.precision(17);
  out << "channels = " << model.channels << "\n"
      << "steps = " << model.steps << "\n"
      << "update_hidden = " << model.update_hidden << "\n"
      << "classifier_hidden = " << model.classifier_hidden << "\n"
      << "num_classes = " << model.num_classes << "\n"
      << "fire_rate = " << model.fire_rate << "\n"
      << "lr = " << plan.adam.lr0 << "\n"
      << "beta1 = " << plan.adam.beta1 << "\n"
      << "beta2 = " << plan.adam.beta2 << "\n"
      << "eps = " << plan.adam.eps << "\n"
      << "lr_decay = " << plan.adam.decay << "\n"
      << "batch_size = " << plan.batch_size << "\n"
      << "epochs = " << plan.epochs << "\n"
      << "loss = " << (plan.loss == LossKind::kSoftmax ? "softmax" : "sigmoid") << "\n"
      << "balance = " << (plan.balance ? "true" : "false") << "\n"
      << "augment = " << (plan.augment ? "true" : "false") << "\n"
      << "val_fraction = " << val_fraction << "\n"
      << "eval_seed = " << plan.eval_seed << "\n"
      << "mc_samples = " << mc_samples << "\n";
  return out.str();
}

}  // namespace nca
