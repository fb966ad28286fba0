// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "nca/image.hpp"

namespace nca {

inline constexpr int kNumHarmonizedClasses = 13;

struct Sample {
  Image image;
  int label = 0;
};

enum class Split { kTrain, kVal, kTest };

std::string_view to_string(Split split);
Split parse_split(std::string_view text);

struct ManifestEntry {
  std::string path;
  std::string raw_label;
  int class_id = 0;
  std::string domain;
  Split split = Split::kTrain;

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

/// Manifest file: one `path<TAB>raw_label<TAB>class_id<TAB>domain<TAB>split`
/// record per line. Relative paths resolve against the manifest's directory.
struct DatasetManifest {
  std::vector<ManifestEntry> entries;

  static DatasetManifest read(const std::filesystem::path& path);
  static DatasetManifest parse(std::string_view text, const std::filesystem::path& base = {});
  std::string serialize() const;
  void write(const std::filesystem::path& path) const;

  DatasetManifest filter(Split split) const;
  /// Throws kInvalidArgument when class ids leave [0, 13), a domain is empty,
  /// or (with check_files) a path does not exist.
  void validate(bool check_files) const;
};

/// Per-domain raw label → harmonized class id, or kExcluded.
class HarmonizationMap {
 public:
  static constexpr int kExcluded = -1;

  /// Lines `domain<TAB>raw_label<TAB>class_id|EXCLUDED`; '#' starts a comment.
  static HarmonizationMap read(const std::filesystem::path& path);
  static HarmonizationMap parse(std::string_view text);
  static HarmonizationMap identity(const std::string& domain, int num_classes);

  void set(const std::string& domain, const std::string& raw_label, int class_id);
  /// Throws kUnmappedLabel naming domain and label when there is no entry.
  int lookup(const std::string& raw_label, const std::string& domain) const;
  std::string serialize() const;

 private:
  std::map<std::pair<std::string, std::string>, int> table_;
};

/// class id or HarmonizationMap::kExcluded.
int harmonize(const std::string& raw_label, const std::string& domain, const HarmonizationMap& map);

struct HarmonizedManifest {
  DatasetManifest manifest;
  std::size_t excluded = 0;
};

/// Re-labels every entry through the map and drops excluded ones.
HarmonizedManifest apply_harmonization(const DatasetManifest& manifest, const HarmonizationMap& map);

/// One entry per image under root/<raw_label>/, in lexicographic order, all in
/// the train split.
HarmonizedManifest scan_folder(const std::filesystem::path& root, const HarmonizationMap& map,
                               const std::string& domain);

/// Stratified random re-assignment of splits by class.
void assign_splits(DatasetManifest& manifest, double val_fraction, double test_fraction, std::uint64_t seed);

/// Decodes every entry at 64×64.
std::vector<Sample> load_samples(const DatasetManifest& manifest);

struct BlobOptions {
  int size = kDomainSize;
  double hue_shift_deg = 0.0;
  double noise = 0.04;
};

/// Hue of the disk drawn for a class, in degrees [0, 360).
double blob_hue(int class_id, int num_classes, double hue_shift_deg);

/// Synthetic stand-in for single-cell images: a noisy grey background and one
/// disk whose hue (and radius band) identifies the class. per_class samples
/// per class, interleaved by class; fully determined by the seed.
std::vector<Sample> synth_blobs(std::uint64_t seed, int per_class, int num_classes, const BlobOptions& options = {});

/// Writes samples as PNGs under root/class_XX/ and returns a manifest with
/// identity raw labels for the given domain.
DatasetManifest write_samples(const std::vector<Sample>& samples, const std::filesystem::path& root,
                              const std::string& domain, const std::string& prefix = "img");

std::string class_folder_name(int class_id);

}  // namespace nca
