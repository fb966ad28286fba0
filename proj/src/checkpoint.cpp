// SPDX-License-Identifier: Apache-2.0

#include "nca/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

namespace nca {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[4] = {'N', 'C', 'A', 'C'};

class Writer {
 public:
  template <typename V>
  void put(V value) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
    bytes_.insert(bytes_.end(), p, p + sizeof(V));
  }
  void put_bytes(const void* data, std::size_t size) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    bytes_.insert(bytes_.end(), p, p + size);
  }
  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  Reader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}

  template <typename V>
  V get(const char* what) {
    V value;
    need(sizeof(V), what);
    std::memcpy(&value, data_ + pos_, sizeof(V));
    pos_ += sizeof(V);
    return value;
  }
  void get_bytes(void* out, std::size_t size, const char* what) {
    need(size, what);
    std::memcpy(out, data_ + pos_, size);
    pos_ += size;
  }
  std::size_t position() const { return pos_; }
  std::size_t remaining() const { return size_ - pos_; }

 private:
  void need(std::size_t size, const char* what) {
    if (size > size_ - pos_)
      throw Error(ErrorCode::kTruncated, std::string("checkpoint truncated while reading ") + what);
  }

  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

}  // namespace

std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t size) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t k = 0; k < size; ++k) {
    h ^= data[k];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::vector<std::uint8_t> encode_checkpoint(const NcaParams<float>& params, const NcaConfig& config) {
  config.validate();
  check_param_shapes(params, config);
  Writer w;
  w.put_bytes(kMagic, 4);
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::int32_t>(config.channels);
  w.put<std::int32_t>(config.steps);
  w.put<std::int32_t>(config.update_hidden);
  w.put<std::int32_t>(config.classifier_hidden);
  w.put<std::int32_t>(config.num_classes);
  w.put<double>(config.fire_rate);
  const auto arrays = params.arrays();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(arrays.size()));
  for (std::size_t k = 0; k < arrays.size(); ++k) {
    const auto name = kParamNames[k];
    w.put<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
    w.put_bytes(name.data(), name.size());
    w.put<std::uint32_t>(static_cast<std::uint32_t>(arrays[k]->rank()));
    for (int d : arrays[k]->shape) w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
    w.put_bytes(arrays[k]->data.data(), arrays[k]->size() * sizeof(float));
  }
  auto& bytes = w.bytes();
  w.put<std::uint64_t>(fnv1a64(bytes.data(), bytes.size()));
  return std::move(w.bytes());
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4) throw Error(ErrorCode::kTruncated, "checkpoint truncated while reading magic");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw Error(ErrorCode::kBadMagic, "not a checkpoint (bad magic)");
  if (bytes.size() < 8 + 8) throw Error(ErrorCode::kTruncated, "checkpoint truncated while reading header");

  // The trailing 8 bytes are the checksum; the structure must fit before it.
  Reader r(bytes.data() + 4, bytes.size() - 4 - 8);
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion)
    throw Error(ErrorCode::kUnknownVersion, "unknown checkpoint version " + std::to_string(version));

  Checkpoint ck;
  ck.config.channels = r.get<std::int32_t>("config");
  ck.config.steps = r.get<std::int32_t>("config");
  ck.config.update_hidden = r.get<std::int32_t>("config");
  ck.config.classifier_hidden = r.get<std::int32_t>("config");
  ck.config.num_classes = r.get<std::int32_t>("config");
  ck.config.fire_rate = r.get<double>("config");
  const auto count = r.get<std::uint32_t>("array count");
  if (count != kParamNames.size())
    throw Error(ErrorCode::kShapeMismatch, "checkpoint holds " + std::to_string(count) + " arrays, expected 10");

  auto arrays = ck.params.arrays();
  for (std::size_t k = 0; k < arrays.size(); ++k) {
    const auto name_len = r.get<std::uint32_t>("array name length");
    if (name_len > 64) throw Error(ErrorCode::kShapeMismatch, "checkpoint array name too long");
    std::string name(name_len, '\0');
    r.get_bytes(name.data(), name_len, "array name");
    if (name != kParamNames[k])
      throw Error(ErrorCode::kShapeMismatch, "checkpoint array " + std::to_string(k) + " is '" + name +
                                                 "', expected '" + std::string(kParamNames[k]) + "'");
    const auto rank = r.get<std::uint32_t>("array rank");
    if (rank > 4) throw Error(ErrorCode::kShapeMismatch, "checkpoint array " + name + " has rank " + std::to_string(rank));
    std::vector<int> shape;
    std::size_t count_values = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const auto dim = r.get<std::uint32_t>("array dims");
      if (dim > (1u << 24)) throw Error(ErrorCode::kShapeMismatch, "checkpoint array " + name + " has an absurd dimension");
      shape.push_back(static_cast<int>(dim));
      count_values *= dim;
      if (count_values > r.remaining() / sizeof(float))
        throw Error(ErrorCode::kTruncated, "checkpoint truncated while reading array values");
    }
    std::vector<float> values(count_values);
    r.get_bytes(values.data(), count_values * sizeof(float), "array values");
    *arrays[k] = Tensor<float>(std::move(shape), std::move(values));
  }
  const std::size_t body = 4 + r.position();
  if (body != bytes.size() - 8)
    throw Error(ErrorCode::kChecksumMismatch, "checkpoint has " + std::to_string(bytes.size() - 8 - body) +
                                                  " unexpected trailing bytes");
  std::uint64_t stored = 0;
  std::memcpy(&stored, bytes.data() + body, 8);
  if (stored != fnv1a64(bytes.data(), body)) throw Error(ErrorCode::kChecksumMismatch, "checkpoint checksum mismatch");

  ck.config.validate();
  check_param_shapes(ck.params, ck.config);
  return ck;
}

void save_checkpoint(const NcaParams<float>& params, const NcaConfig& config, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(params, config);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::kIo, "failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open checkpoint " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace nca
