// SPDX-License-Identifier: Apache-2.0

#include "nca/tensor.hpp"

#include <functional>
#include <mutex>
#include <numeric>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace nca {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kShapeMismatch: return "shape_mismatch";
    case ErrorCode::kInvalidArgument: return "invalid_argument";
    case ErrorCode::kInvalidState: return "invalid_state";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kDecode: return "decode";
    case ErrorCode::kUnsupportedFormat: return "unsupported_format";
    case ErrorCode::kConfig: return "config";
    case ErrorCode::kUsage: return "usage";
    case ErrorCode::kBadMagic: return "bad_magic";
    case ErrorCode::kUnknownVersion: return "unknown_version";
    case ErrorCode::kTruncated: return "truncated";
    case ErrorCode::kChecksumMismatch: return "checksum_mismatch";
    case ErrorCode::kUnmappedLabel: return "unmapped_label";
    case ErrorCode::kEmptyClass: return "empty_class";
    case ErrorCode::kNonFiniteLoss: return "non_finite_loss";
  }
  return "unknown";
}

std::size_t shape_size(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw Error(ErrorCode::kShapeMismatch, "negative dimension in " + shape_string(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_string(const std::vector<int>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

template <typename T>
Tensor<T>::Tensor(std::vector<int> s, T fill) : shape(std::move(s)), data(shape_size(shape), fill) {}

template <typename T>
Tensor<T>::Tensor(std::vector<int> s, std::vector<T> values) : shape(std::move(s)), data(std::move(values)) {
  if (data.size() != shape_size(shape))
    throw Error(ErrorCode::kShapeMismatch, "tensor: " + std::to_string(data.size()) +
                                               " values for shape " + shape_string(shape));
}

namespace {

void check_grid(int height, int width, int channels) {
  if (height < 3 || width < 3 || channels < 1)
    throw Error(ErrorCode::kShapeMismatch,
                "grid: need H >= 3, W >= 3, channels >= 1, got " +
                    shape_string({height, width, channels}));
}

}  // namespace

template <typename T>
Grid<T>::Grid(int height, int width, int channels)
    : shape_{height, width, channels} {
  check_grid(height, width, channels);
  values_.assign(shape_.size(), T{0});
}

template <typename T>
Grid<T>::Grid(int height, int width, int channels, std::vector<T> values)
    : shape_{height, width, channels}, values_(std::move(values)) {
  check_grid(height, width, channels);
  if (values_.size() != shape_.size())
    throw Error(ErrorCode::kShapeMismatch, "grid: " + std::to_string(values_.size()) +
                                               " values for " + shape_string({height, width, channels}));
}

template <typename T>
Grid<T> Grid<T>::from_tensor(const Tensor<T>& tensor) {
  if (tensor.rank() != 3)
    throw Error(ErrorCode::kShapeMismatch, "grid: tensor " + shape_string(tensor.shape) + " is not rank 3");
  return Grid(tensor.dim(0), tensor.dim(1), tensor.dim(2), tensor.data);
}

template <typename T>
Tensor<T> Grid<T>::to_tensor() const {
  return Tensor<T>({shape_.height, shape_.width, shape_.channels}, values_);
}

template struct Tensor<float>;
template struct Tensor<double>;
template struct Tensor<int>;
template class Grid<float>;
template class Grid<double>;

void retain_freed_memory() {
#if defined(__GLIBC__)
  static std::once_flag once;
  std::call_once(once, [] {
    mallopt(M_MMAP_THRESHOLD, 32 << 20);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
  });
#endif
}

}  // namespace nca
