#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "slotalign/error.hpp"

namespace slotalign::nk {

// Dense row-major tensor. Rank 1 and rank 2 are the only shapes the model
// uses; higher ranks are accepted but get no special accessors.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape, T fill = T(0))
      : shape_(std::move(shape)), data_(count(shape_), fill) {}

  Tensor(std::vector<std::size_t> shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != count(shape_)) {
      throw InvalidInput("tensor data length " + std::to_string(data_.size()) +
                         " does not match shape product " + std::to_string(count(shape_)));
    }
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, T fill = T(0)) {
    return Tensor({rows, cols}, fill);
  }
  static Tensor vector(std::size_t n, T fill = T(0)) { return Tensor({n}, fill); }
  static Tensor scalar(T v) { return Tensor({1}, std::vector<T>{v}); }

  const std::vector<std::size_t>& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  // Rank-1 tensors are treated as a single row.
  std::size_t rows() const noexcept {
    return shape_.size() >= 2 ? shape_[0] : (shape_.empty() ? 0 : 1);
  }
  std::size_t cols() const noexcept {
    return shape_.empty() ? 0 : shape_.back();
  }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> span() noexcept { return data_; }
  std::span<const T> span() const noexcept { return data_; }
  std::vector<T>& values() noexcept { return data_; }
  const std::vector<T>& values() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  T& operator()(std::size_t r, std::size_t c) noexcept {
    assert(r < rows() && c < cols());
    return data_[r * cols() + c];
  }
  const T& operator()(std::size_t r, std::size_t c) const noexcept {
    assert(r < rows() && c < cols());
    return data_[r * cols() + c];
  }

  std::span<T> row(std::size_t r) noexcept { return {data_.data() + r * cols(), cols()}; }
  std::span<const T> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols(), cols()};
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](T x) { return std::isfinite(x); });
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    std::transform(data_.begin(), data_.end(), out.data(), [](T x) { return static_cast<U>(x); });
    return out;
  }

  bool operator==(const Tensor&) const = default;

  static std::size_t count(const std::vector<std::size_t>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           std::multiplies<>{}) *
           (shape.empty() ? 0 : 1);
  }

 private:
  std::vector<std::size_t> shape_;
  std::vector<T> data_;
};

inline std::string shape_str(const std::vector<std::size_t>& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

// Square boolean allow-mask for attention: allow(i, j) means row i may read j.
class BoolMask {
 public:
  BoolMask() = default;
  BoolMask(std::size_t rows, std::size_t cols, bool fill = false)
      : rows_(rows), cols_(cols), bits_(rows * cols, fill ? 1 : 0) {}

  static BoolMask identity(std::size_t n) {
    BoolMask m(n, n);
    for (std::size_t i = 0; i < n; ++i) m.set(i, i, true);
    return m;
  }
  static BoolMask causal(std::size_t n) {
    BoolMask m(n, n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j <= i; ++j) m.set(i, j, true);
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool operator()(std::size_t i, std::size_t j) const noexcept {
    return bits_[i * cols_ + j] != 0;
  }
  void set(std::size_t i, std::size_t j, bool v) noexcept { bits_[i * cols_ + j] = v ? 1 : 0; }

  std::size_t row_count(std::size_t i) const noexcept {
    return static_cast<std::size_t>(
        std::count(bits_.begin() + static_cast<std::ptrdiff_t>(i * cols_),
                   bits_.begin() + static_cast<std::ptrdiff_t>((i + 1) * cols_), 1));
  }

  bool operator==(const BoolMask&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<unsigned char> bits_;
};

}  // namespace slotalign::nk
