// Copyright 2026 The eres2net-cpp Authors
// Licensed under the Apache License, Version 2.0

#ifndef ERES2NET_PARAM_STORE_H_
#define ERES2NET_PARAM_STORE_H_

#include <cstdint>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "eres2net/autodiff.h"

namespace eres2net {

enum class ParamKind : std::uint8_t {
  kWeight,  // learnable, weight-decayed
  kNorm,    // learnable BN gamma/beta, not decayed
  kBuffer,  // running statistics, not learnable
};

/// Named tensors in insertion order. Names are slash-delimited paths such as
/// "stage2/block0/aff1/w1". Learnable entries are graph leaves, so a forward
/// pass reads them without copying and backward deposits gradients in place.
template <typename T>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    ParamKind kind;
    std::shared_ptr<Node<T>> node;

    bool learnable() const { return kind != ParamKind::kBuffer; }
    const Tensor<T>& value() const { return node->value; }
  };

  Var<T> add(const std::string& name, Tensor<T> value, ParamKind kind);

  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  Var<T> var(const std::string& name) const;
  Tensor<T>& value(const std::string& name);
  const Tensor<T>& value(const std::string& name) const;
  /// Gradient of a learnable entry; zeros if nothing has flowed into it.
  Tensor<T>& grad(const std::string& name);
  ParamKind kind(const std::string& name) const { return entries_[lookup(name)].kind; }

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<std::string> names() const;
  std::size_t count() const { return entries_.size(); }

  void zero_grad();

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& e : entries_) out.add(e.name, e.node->value.template cast<U>(), e.kind);
    return out;
  }

  /// Same names, kinds, dims and bit-identical values, in the same order.
  bool identical(const ParamStore& other) const;

 private:
  std::size_t lookup(const std::string& name) const;

  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Zeroes every gradient in `store`, then backpropagates from `root`.
/// Learnable entries the root does not depend on end with zero gradients.
template <typename T>
void backward(const Var<T>& root, ParamStore<T>& store);

extern template class ParamStore<float>;
extern template class ParamStore<double>;

}  // namespace eres2net

#endif  // ERES2NET_PARAM_STORE_H_
