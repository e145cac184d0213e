// Copyright 2026 The eres2net-cpp Authors
// Licensed under the Apache License, Version 2.0

#include "eres2net/tensor.h"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace eres2net {

const char* axis_name(Axis axis) {
  switch (axis) {
    case Axis::kBatch: return "batch";
    case Axis::kChannel: return "channel";
    case Axis::kFrequency: return "frequency";
    case Axis::kTime: return "time";
    case Axis::kNone: break;
  }
  return "axis";
}

std::string shape_string(const Shape& dims) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < dims.size(); ++i) os << (i ? ", " : "") << dims[i];
  os << ')';
  return os.str();
}

std::int64_t num_elements(const Shape& dims) {
  std::int64_t n = 1;
  for (int d : dims) n *= d;
  return n;
}

namespace {

void validate_dims(const Shape& dims) {
  if (dims.empty() || dims.size() > 4)
    throw ShapeError("tensor rank must be 1..4, got " + std::to_string(dims.size()));
  for (int d : dims)
    if (d <= 0) throw ShapeError("tensor dims must be positive, got " + shape_string(dims));
}

}  // namespace

template <typename T>
Tensor<T>::Tensor(Shape dims, T fill) : dims_(std::move(dims)) {
  validate_dims(dims_);
  data_.assign(static_cast<std::size_t>(num_elements(dims_)), fill);
}

template <typename T>
Tensor<T>::Tensor(Shape dims, std::vector<T> data) : dims_(std::move(dims)), data_(std::move(data)) {
  validate_dims(dims_);
  if (static_cast<std::int64_t>(data_.size()) != num_elements(dims_))
    throw ShapeError("data length " + std::to_string(data_.size()) + " does not match dims " +
                     shape_string(dims_));
}

template <typename T>
Tensor<T> Tensor<T>::feature_map(int batch, int channels, int freq, int time, T fill) {
  Tensor out({batch, channels, freq, time}, fill);
  out.axes_ = {Axis::kBatch, Axis::kChannel, Axis::kFrequency, Axis::kTime};
  return out;
}

template <typename T>
void Tensor<T>::fill(T value) {
  std::fill(data_.begin(), data_.end(), value);
}

template <typename T>
bool Tensor<T>::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
}

void require_same_dims(const Shape& a, const Shape& b, const std::string& what) {
  if (a == b) return;
  if (a.size() != b.size())
    throw ShapeError(what + ": rank mismatch " + shape_string(a) + " vs " + shape_string(b));
  static constexpr Axis kMapAxes[4] = {Axis::kBatch, Axis::kChannel, Axis::kFrequency, Axis::kTime};
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] != b[i]) {
      std::string axis = a.size() == 4 ? axis_name(kMapAxes[i]) : "axis " + std::to_string(i);
      throw ShapeError(what + ": " + axis + " mismatch " + shape_string(a) + " vs " + shape_string(b));
    }
  }
}

void require_rank(const Shape& dims, int rank, const std::string& what) {
  if (static_cast<int>(dims.size()) != rank)
    throw ShapeError(what + ": expected rank " + std::to_string(rank) + ", got " + shape_string(dims));
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace eres2net
