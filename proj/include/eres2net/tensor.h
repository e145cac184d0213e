// Copyright 2026 The eres2net-cpp Authors
// Licensed under the Apache License, Version 2.0

#ifndef ERES2NET_TENSOR_H_
#define ERES2NET_TENSOR_H_

#include <array>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "eres2net/errors.h"

namespace eres2net {

using Shape = std::vector<int>;

enum class Axis : std::uint8_t { kNone, kBatch, kChannel, kFrequency, kTime };

const char* axis_name(Axis axis);
std::string shape_string(const Shape& dims);
std::int64_t num_elements(const Shape& dims);

/// Dense row-major tensor of rank <= 4. Axis labels are optional metadata;
/// feature maps carry (batch, channel, frequency, time).
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape dims, T fill = T(0));
  Tensor(Shape dims, std::vector<T> data);

  static Tensor feature_map(int batch, int channels, int freq, int time, T fill = T(0));

  const Shape& dims() const { return dims_; }
  int rank() const { return static_cast<int>(dims_.size()); }
  int dim(int i) const { return dims_.at(static_cast<std::size_t>(i)); }
  std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  const T& operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  // 4-D accessors for (batch, channel, frequency, time) maps.
  T& at(int n, int c, int f, int t) { return data_[offset(n, c, f, t)]; }
  const T& at(int n, int c, int f, int t) const { return data_[offset(n, c, f, t)]; }

  const std::array<Axis, 4>& axes() const { return axes_; }
  void set_axes(std::array<Axis, 4> axes) { axes_ = axes; }

  void fill(T value);
  bool all_finite() const;

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(dims_);
    for (std::size_t i = 0; i < data_.size(); ++i) out.storage()[i] = static_cast<U>(data_[i]);
    out.set_axes(axes_);
    return out;
  }

  bool operator==(const Tensor& other) const { return dims_ == other.dims_ && data_ == other.data_; }

 private:
  std::size_t offset(int n, int c, int f, int t) const {
    return ((static_cast<std::size_t>(n) * dims_[1] + c) * dims_[2] + f) * dims_[3] + t;
  }

  Shape dims_;
  std::vector<T> data_;
  std::array<Axis, 4> axes_{Axis::kNone, Axis::kNone, Axis::kNone, Axis::kNone};
};

/// Throws ShapeError naming `what` when dims differ.
void require_same_dims(const Shape& a, const Shape& b, const std::string& what);

/// Throws ShapeError unless `dims` has the given rank.
void require_rank(const Shape& dims, int rank, const std::string& what);

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace eres2net

#endif  // ERES2NET_TENSOR_H_
