// SPDX-License-Identifier: Apache-2.0

#include "nca/data.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <random>
#include <sstream>

#include "nca/error.hpp"
#include "nca/rng.hpp"

namespace nca {

namespace fs = std::filesystem;

namespace {

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const auto tab = line.find('\t', start);
    fields.push_back(line.substr(start, tab == std::string_view::npos ? std::string_view::npos : tab - start));
    if (tab == std::string_view::npos) break;
    start = tab + 1;
  }
  return fields;
}

template <typename F>
void for_each_line(std::string_view text, F&& f) {
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    ++line_no;
    if (!line.empty() && line.front() != '#') f(line, line_no);
    if (end == text.size()) break;
    start = end + 1;
  }
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void dump(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorCode::kIo, "failed writing " + path.string());
}

int parse_int(std::string_view text, const std::string& where) {
  int value = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size())
    throw Error(ErrorCode::kDecode, where + ": expected an integer, got '" + std::string(text) + "'");
  return value;
}

bool supported_extension(const fs::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".tif" || ext == ".tiff";
}

std::vector<fs::path> sorted_children(const fs::path& dir, bool directories) {
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().filename().string().starts_with('.')) continue;
    if (directories ? entry.is_directory() : entry.is_regular_file()) out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::array<float, 3> hsv_to_rgb(double hue_deg, double sat, double val) {
  const double h = std::fmod(std::fmod(hue_deg, 360.0) + 360.0, 360.0) / 60.0;
  const double c = val * sat;
  const double x = c * (1.0 - std::abs(std::fmod(h, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(h)) {
    case 0: r = c; g = x; break;
    case 1: r = x; g = c; break;
    case 2: g = c; b = x; break;
    case 3: g = x; b = c; break;
    case 4: r = x; b = c; break;
    default: r = c; b = x; break;
  }
  const double m = val - c;
  return {static_cast<float>(r + m), static_cast<float>(g + m), static_cast<float>(b + m)};
}

}  // namespace

std::string_view to_string(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "train";
}

Split parse_split(std::string_view text) {
  if (text == "train") return Split::kTrain;
  if (text == "val") return Split::kVal;
  if (text == "test") return Split::kTest;
  throw Error(ErrorCode::kDecode, "unknown split '" + std::string(text) + "' (expected train, val or test)");
}

DatasetManifest DatasetManifest::read(const fs::path& path) {
  if (!fs::exists(path)) throw Error(ErrorCode::kIo, "manifest not found: " + path.string());
  return parse(slurp(path), path.parent_path());
}

DatasetManifest DatasetManifest::parse(std::string_view text, const fs::path& base) {
  DatasetManifest m;
  for_each_line(text, [&](std::string_view line, std::size_t line_no) {
    const std::string where = "manifest line " + std::to_string(line_no);
    const auto fields = split_tabs(line);
    if (fields.size() != 5)
      throw Error(ErrorCode::kDecode, where + ": expected 5 tab-separated fields, got " + std::to_string(fields.size()));
    ManifestEntry e;
    const fs::path p{std::string(fields[0])};
    e.path = (p.is_relative() && !base.empty() ? base / p : p).lexically_normal().string();
    e.raw_label = std::string(fields[1]);
    e.class_id = parse_int(fields[2], where);
    e.domain = std::string(fields[3]);
    e.split = parse_split(fields[4]);
    m.entries.push_back(std::move(e));
  });
  return m;
}

std::string DatasetManifest::serialize() const {
  std::string out;
  for (const auto& e : entries) {
    out += e.path + '\t' + e.raw_label + '\t' + std::to_string(e.class_id) + '\t' + e.domain + '\t' +
           std::string(to_string(e.split)) + '\n';
  }
  return out;
}

void DatasetManifest::write(const fs::path& path) const { dump(path, serialize()); }

DatasetManifest DatasetManifest::filter(Split split) const {
  DatasetManifest out;
  for (const auto& e : entries)
    if (e.split == split) out.entries.push_back(e);
  return out;
}

void DatasetManifest::validate(bool check_files) const {
  for (const auto& e : entries) {
    if (e.class_id < 0 || e.class_id >= kNumHarmonizedClasses)
      throw Error(ErrorCode::kInvalidArgument, "manifest: class id " + std::to_string(e.class_id) + " of " + e.path +
                                                   " outside [0, " + std::to_string(kNumHarmonizedClasses) + ")");
    if (e.domain.empty()) throw Error(ErrorCode::kInvalidArgument, "manifest: empty domain for " + e.path);
    if (check_files && !fs::exists(e.path)) throw Error(ErrorCode::kIo, "manifest: missing image " + e.path);
  }
}

HarmonizationMap HarmonizationMap::read(const fs::path& path) {
  if (!fs::exists(path)) throw Error(ErrorCode::kIo, "harmonization map not found: " + path.string());
  return parse(slurp(path));
}

HarmonizationMap HarmonizationMap::parse(std::string_view text) {
  HarmonizationMap map;
  for_each_line(text, [&](std::string_view line, std::size_t line_no) {
    const std::string where = "harmonization map line " + std::to_string(line_no);
    const auto fields = split_tabs(line);
    if (fields.size() != 3)
      throw Error(ErrorCode::kDecode, where + ": expected 3 tab-separated fields, got " + std::to_string(fields.size()));
    const int id = fields[2] == "EXCLUDED" ? kExcluded : parse_int(fields[2], where);
    if (id != kExcluded && (id < 0 || id >= kNumHarmonizedClasses))
      throw Error(ErrorCode::kDecode, where + ": class id " + std::to_string(id) + " outside [0, 13)");
    map.set(std::string(fields[0]), std::string(fields[1]), id);
  });
  return map;
}

HarmonizationMap HarmonizationMap::identity(const std::string& domain, int num_classes) {
  HarmonizationMap map;
  for (int c = 0; c < num_classes; ++c) map.set(domain, std::to_string(c), c);
  return map;
}

void HarmonizationMap::set(const std::string& domain, const std::string& raw_label, int class_id) {
  table_[{domain, raw_label}] = class_id;
}

int HarmonizationMap::lookup(const std::string& raw_label, const std::string& domain) const {
  const auto it = table_.find({domain, raw_label});
  if (it == table_.end())
    throw Error(ErrorCode::kUnmappedLabel,
                "label '" + raw_label + "' of domain '" + domain + "' has no harmonization entry");
  return it->second;
}

std::string HarmonizationMap::serialize() const {
  std::string out;
  for (const auto& [key, id] : table_)
    out += key.first + '\t' + key.second + '\t' + (id == kExcluded ? std::string("EXCLUDED") : std::to_string(id)) + '\n';
  return out;
}

int harmonize(const std::string& raw_label, const std::string& domain, const HarmonizationMap& map) {
  return map.lookup(raw_label, domain);
}

HarmonizedManifest apply_harmonization(const DatasetManifest& manifest, const HarmonizationMap& map) {
  HarmonizedManifest out;
  for (const auto& e : manifest.entries) {
    const int id = harmonize(e.raw_label, e.domain, map);
    if (id == HarmonizationMap::kExcluded) {
      ++out.excluded;
      continue;
    }
    ManifestEntry copy = e;
    copy.class_id = id;
    out.manifest.entries.push_back(std::move(copy));
  }
  return out;
}

HarmonizedManifest scan_folder(const fs::path& root, const HarmonizationMap& map, const std::string& domain) {
  if (!fs::is_directory(root)) throw Error(ErrorCode::kIo, "dataset root is not a directory: " + root.string());
  HarmonizedManifest out;
  std::size_t images = 0;
  for (const auto& folder : sorted_children(root, true)) {
    const std::string label = folder.filename().string();
    const auto files = sorted_children(folder, false);
    if (files.empty()) continue;
    const int id = harmonize(label, domain, map);
    for (const auto& file : files) {
      if (!supported_extension(file))
        throw Error(ErrorCode::kUnsupportedFormat, "unsupported image format: " + file.string());
      ++images;
      if (id == HarmonizationMap::kExcluded) {
        ++out.excluded;
        continue;
      }
      out.manifest.entries.push_back(ManifestEntry{file.string(), label, id, domain, Split::kTrain});
    }
  }
  if (images == 0) throw Error(ErrorCode::kInvalidArgument, "no images found under " + root.string());
  return out;
}

void assign_splits(DatasetManifest& manifest, double val_fraction, double test_fraction, std::uint64_t seed) {
  if (val_fraction < 0 || test_fraction < 0 || val_fraction + test_fraction >= 1.0)
    throw Error(ErrorCode::kInvalidArgument, "split fractions must be >= 0 and sum to less than 1");
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t k = 0; k < manifest.entries.size(); ++k) by_class[manifest.entries[k].class_id].push_back(k);
  for (auto& [id, members] : by_class) {
    Rng rng = make_rng(seed, static_cast<std::uint64_t>(id));
    std::shuffle(members.begin(), members.end(), rng);
    const auto n_val = static_cast<std::size_t>(std::lround(val_fraction * members.size()));
    const auto n_test = static_cast<std::size_t>(std::lround(test_fraction * members.size()));
    for (std::size_t k = 0; k < members.size(); ++k) {
      Split s = Split::kTrain;
      if (k < n_val) s = Split::kVal;
      else if (k < n_val + n_test) s = Split::kTest;
      manifest.entries[members[k]].split = s;
    }
  }
}

std::vector<Sample> load_samples(const DatasetManifest& manifest) {
  std::vector<Sample> samples(manifest.entries.size());
  std::exception_ptr failure;
  const auto n = static_cast<std::ptrdiff_t>(samples.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t k = 0; k < n; ++k) {
    try {
      samples[static_cast<std::size_t>(k)] =
          Sample{load_image_64(manifest.entries[static_cast<std::size_t>(k)].path),
                 manifest.entries[static_cast<std::size_t>(k)].class_id};
    } catch (...) {
#pragma omp critical
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return samples;
}

double blob_hue(int class_id, int num_classes, double hue_shift_deg) {
  const double h = 360.0 * class_id / num_classes + hue_shift_deg;
  return std::fmod(std::fmod(h, 360.0) + 360.0, 360.0);
}

std::vector<Sample> synth_blobs(std::uint64_t seed, int per_class, int num_classes, const BlobOptions& options) {
  if (per_class < 1) throw Error(ErrorCode::kInvalidArgument, "synth_blobs: per_class must be >= 1");
  if (num_classes < 1 || num_classes > kNumHarmonizedClasses)
    throw Error(ErrorCode::kInvalidArgument, "synth_blobs: num_classes must be in [1, 13]");
  if (options.size < 16) throw Error(ErrorCode::kInvalidArgument, "synth_blobs: image size must be >= 16");

  const int size = options.size;
  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(per_class) * num_classes);
  for (int k = 0; k < per_class; ++k) {
    for (int c = 0; c < num_classes; ++c) {
      Rng rng = make_rng(seed, static_cast<std::uint64_t>(k) * num_classes + c);
      std::normal_distribution<double> noise(0.0, options.noise);
      std::uniform_real_distribution<double> jitter(-1.0, 1.0);
      const double cy = size / 2.0 + jitter(rng) * size / 8.0;
      const double cx = size / 2.0 + jitter(rng) * size / 8.0;
      const double radius = size * (0.13 + 0.03 * (c % 3)) + jitter(rng) * size / 64.0;
      const auto disk = hsv_to_rgb(blob_hue(c, num_classes, options.hue_shift_deg), 0.85, 0.9);
      const std::array<float, 3> background{0.50f, 0.48f, 0.52f};

      Sample s{Image(size, size), c};
      for (int r = 0; r < size; ++r) {
        for (int col = 0; col < size; ++col) {
          const double dy = r + 0.5 - cy;
          const double dx = col + 0.5 - cx;
          const bool inside = dy * dy + dx * dx <= radius * radius;
          for (int ch = 0; ch < 3; ++ch) {
            const double base = inside ? disk[static_cast<std::size_t>(ch)] : background[static_cast<std::size_t>(ch)];
            s.image.at(r, col, ch) = static_cast<float>(std::clamp(base + noise(rng), 0.0, 1.0));
          }
        }
      }
      out.push_back(std::move(s));
    }
  }
  return out;
}

std::string class_folder_name(int class_id) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "class_%02d", class_id);
  return buf;
}

DatasetManifest write_samples(const std::vector<Sample>& samples, const fs::path& root, const std::string& domain,
                              const std::string& prefix) {
  DatasetManifest m;
  for (std::size_t k = 0; k < samples.size(); ++k) {
    const std::string folder = class_folder_name(samples[k].label);
    fs::create_directories(root / folder);
    char name[64];
    std::snprintf(name, sizeof name, "%s_%05zu.png", prefix.c_str(), k);
    const fs::path rel = fs::path(folder) / name;
    write_png_rgb(root / rel, samples[k].image);
    m.entries.push_back(ManifestEntry{(root / rel).lexically_normal().string(), folder, samples[k].label, domain, Split::kTrain});
  }
  return m;
}

}  // namespace nca
