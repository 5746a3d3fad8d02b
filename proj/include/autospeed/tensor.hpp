#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "autospeed/errors.hpp"

namespace autospeed {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// Dense row-major n-d array. Every extent is positive and data.size() equals
// the product of extents.
template <class T>
class BasicTensor {
 public:
  BasicTensor() = default;

  explicit BasicTensor(Shape shape, T fill = T(0)) : shape_(std::move(shape)) {
    check_shape(shape_);
    data_.assign(shape_numel(shape_), fill);
  }

  BasicTensor(Shape shape, std::vector<T> data, bool validate_finite = false)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape(shape_);
    if (data_.size() != shape_numel(shape_)) {
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_str(shape_));
    }
    if (validate_finite) {
      for (std::size_t i = 0; i < data_.size(); ++i) {
        if (!std::isfinite(static_cast<double>(data_[i]))) {
          throw ValidationError("non-finite tensor value at flat index " + std::to_string(i));
        }
      }
    }
  }

  static BasicTensor scalar(T v) { return BasicTensor(Shape{1}, std::vector<T>{v}); }

  const Shape& shape() const { return shape_; }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t ndim() const { return shape_.size(); }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> span() { return data_; }
  std::span<const T> span() const { return data_; }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  const T& at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

  T item() const {
    if (data_.size() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape_));
    return data_[0];
  }

  BasicTensor reshaped(Shape shape) const {
    if (shape_numel(shape) != data_.size()) {
      throw DimensionError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    }
    return BasicTensor(std::move(shape), data_);
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(),
                       [](T v) { return std::isfinite(static_cast<double>(v)); });
  }

  template <class U>
  BasicTensor<U> cast() const {
    std::vector<U> out(data_.size());
    std::transform(data_.begin(), data_.end(), out.begin(), [](T v) { return static_cast<U>(v); });
    return BasicTensor<U>(shape_, std::move(out));
  }

  friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  static void check_shape(const Shape& shape) {
    if (shape.empty()) throw DimensionError("tensor shape must have at least one extent");
    for (auto e : shape) {
      if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
    }
  }

  Shape shape_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<float>;

inline void require_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (a != b) {
    throw DimensionError(std::string(what) + ": shape mismatch " + shape_str(a) + " vs " +
                         shape_str(b));
  }
}

// Byte-level fingerprint of a tensor, used by freeze/mutation audits.
std::uint64_t tensor_hash(const Tensor& t, std::uint64_t seed = 1469598103934665603ULL);

}  // namespace autospeed
