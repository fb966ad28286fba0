// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "nca/error.hpp"

namespace nca {

/// Dense row-major array with an explicit shape. The last dimension is the
/// contiguous one, so a rank-3 grid H×W×C stores the channels of a cell next
/// to each other and can be viewed as a (H·W)×C matrix.
template <typename T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s, T fill = T{0});
  Tensor(std::vector<int> s, std::vector<T> values);

  std::size_t size() const noexcept { return data.size(); }
  int rank() const noexcept { return static_cast<int>(shape.size()); }
  int dim(int axis) const { return shape.at(static_cast<std::size_t>(axis)); }
  int last_dim() const { return shape.empty() ? 1 : shape.back(); }
  std::size_t rows() const { return last_dim() == 0 ? 0 : size() / last_dim(); }

  std::span<T> span() noexcept { return data; }
  std::span<const T> span() const noexcept { return data; }
};

std::size_t shape_size(const std::vector<int>& shape);
std::string shape_string(const std::vector<int>& shape);

struct CellPos {
  int row = 0;
  int col = 0;
  friend bool operator==(const CellPos&, const CellPos&) = default;
};

struct GridShape {
  int height = 0;
  int width = 0;
  int channels = 0;

  std::size_t cells() const noexcept {
    return static_cast<std::size_t>(height) * static_cast<std::size_t>(width);
  }
  std::size_t size() const noexcept { return cells() * static_cast<std::size_t>(channels); }
  friend bool operator==(const GridShape&, const GridShape&) = default;
};

/// H×W×n field of cell states. Requires H ≥ 3, W ≥ 3 and n ≥ 1.
template <typename T>
class Grid {
 public:
  Grid() = default;
  Grid(int height, int width, int channels);
  Grid(int height, int width, int channels, std::vector<T> values);

  static Grid from_tensor(const Tensor<T>& tensor);
  Tensor<T> to_tensor() const;

  int height() const noexcept { return shape_.height; }
  int width() const noexcept { return shape_.width; }
  int channels() const noexcept { return shape_.channels; }
  GridShape shape() const noexcept { return shape_; }

  T& at(int row, int col, int channel) { return values_[index(row, col, channel)]; }
  const T& at(int row, int col, int channel) const { return values_[index(row, col, channel)]; }

  std::span<T> values() noexcept { return values_; }
  std::span<const T> values() const noexcept { return values_; }

  friend bool operator==(const Grid&, const Grid&) = default;

 private:
  std::size_t index(int row, int col, int channel) const noexcept {
    return (static_cast<std::size_t>(row) * shape_.width + col) * shape_.channels + channel;
  }

  GridShape shape_{};
  std::vector<T> values_;
};

/// Asks the C allocator to keep freed blocks instead of returning them to
/// the OS. A rollout allocates and frees megabytes per step and fresh pages
/// are slow to fault in. Idempotent; a no-op outside glibc.
void retain_freed_memory();

}  // namespace nca
