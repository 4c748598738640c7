#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "anomaly_recon/error.hpp"

namespace anomaly_recon {

// Dense row-major 2D array.
template <class T>
struct Array2 {
  std::int64_t rows = 0;
  std::int64_t cols = 0;
  std::vector<T> data;

  Array2() = default;
  Array2(std::int64_t r, std::int64_t c, T fill = T{})
      : rows(r), cols(c), data(static_cast<std::size_t>(r * c), fill) {
    if (r < 0 || c < 0) throw InvalidArgument("negative array extent");
  }

  T& operator()(std::int64_t i, std::int64_t j) { return data[static_cast<std::size_t>(i * cols + j)]; }
  const T& operator()(std::int64_t i, std::int64_t j) const {
    return data[static_cast<std::size_t>(i * cols + j)];
  }
  std::int64_t size() const { return rows * cols; }
  bool same_shape(const Array2& o) const { return rows == o.rows && cols == o.cols; }
  bool operator==(const Array2&) const = default;
};

// Dense C-order 3D array indexed (k, i, j) = (z, y, x).
template <class T>
struct Array3 {
  std::array<std::int64_t, 3> shape{0, 0, 0};
  std::vector<T> data;

  Array3() = default;
  Array3(std::int64_t k, std::int64_t i, std::int64_t j, T fill = T{})
      : shape{k, i, j}, data(static_cast<std::size_t>(k * i * j), fill) {
    if (k < 0 || i < 0 || j < 0) throw InvalidArgument("negative array extent");
  }

  std::int64_t depth() const { return shape[0]; }
  std::int64_t rows() const { return shape[1]; }
  std::int64_t cols() const { return shape[2]; }
  std::int64_t size() const { return shape[0] * shape[1] * shape[2]; }
  std::int64_t plane() const { return shape[1] * shape[2]; }

  std::size_t index(std::int64_t k, std::int64_t i, std::int64_t j) const {
    return static_cast<std::size_t>((k * shape[1] + i) * shape[2] + j);
  }
  T& operator()(std::int64_t k, std::int64_t i, std::int64_t j) { return data[index(k, i, j)]; }
  const T& operator()(std::int64_t k, std::int64_t i, std::int64_t j) const { return data[index(k, i, j)]; }

  Array2<T> slice(std::int64_t k) const {
    Array2<T> out(shape[1], shape[2]);
    std::copy(data.begin() + static_cast<std::ptrdiff_t>(k * plane()),
              data.begin() + static_cast<std::ptrdiff_t>((k + 1) * plane()), out.data.begin());
    return out;
  }
  void set_slice(std::int64_t k, const Array2<T>& s) {
    if (s.rows != shape[1] || s.cols != shape[2]) throw InvalidArgument("slice shape mismatch");
    std::copy(s.data.begin(), s.data.end(), data.begin() + static_cast<std::ptrdiff_t>(k * plane()));
  }
  bool same_shape(const Array3& o) const { return shape == o.shape; }
  bool operator==(const Array3&) const = default;
};

using Image = Array2<double>;
using Mask2 = Array2<std::uint8_t>;
using Grid3 = Array3<double>;
using Mask3 = Array3<std::uint8_t>;

}  // namespace anomaly_recon
