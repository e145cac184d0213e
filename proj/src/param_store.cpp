// Copyright 2026 The eres2net-cpp Authors
// Licensed under the Apache License, Version 2.0

#include "eres2net/param_store.h"

#include <cstring>

namespace eres2net {

template <typename T>
Var<T> ParamStore<T>::add(const std::string& name, Tensor<T> value, ParamKind kind) {
  if (name.empty()) throw ContractError("parameter name must not be empty");
  if (contains(name)) throw ContractError("duplicate parameter name '" + name + "'");
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->requires_grad = kind != ParamKind::kBuffer;
  index_.emplace(name, entries_.size());
  entries_.push_back(Entry{name, kind, node});
  return Var<T>(node);
}

template <typename T>
std::size_t ParamStore<T>::lookup(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unknown parameter '" + name + "'");
  return it->second;
}

template <typename T>
Var<T> ParamStore<T>::var(const std::string& name) const {
  return Var<T>(entries_[lookup(name)].node);
}

template <typename T>
Tensor<T>& ParamStore<T>::value(const std::string& name) {
  return entries_[lookup(name)].node->value;
}

template <typename T>
const Tensor<T>& ParamStore<T>::value(const std::string& name) const {
  return entries_[lookup(name)].node->value;
}

template <typename T>
Tensor<T>& ParamStore<T>::grad(const std::string& name) {
  return entries_[lookup(name)].node->grad_buffer();
}

template <typename T>
std::vector<std::string> ParamStore<T>::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.name);
  return out;
}

template <typename T>
void ParamStore<T>::zero_grad() {
  for (auto& e : entries_)
    if (e.learnable()) e.node->grad_buffer().fill(T(0));
}

template <typename T>
bool ParamStore<T>::identical(const ParamStore& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& a = entries_[i];
    const auto& b = other.entries_[i];
    if (a.name != b.name || a.kind != b.kind || a.value().dims() != b.value().dims()) return false;
    if (std::memcmp(a.value().data().data(), b.value().data().data(), a.value().data().size_bytes()) != 0)
      return false;
  }
  return true;
}

template <typename T>
void backward(const Var<T>& root, ParamStore<T>& store) {
  store.zero_grad();
  backward(root);
}

template class ParamStore<float>;
template class ParamStore<double>;
template void backward<float>(const Var<float>&, ParamStore<float>&);
template void backward<double>(const Var<double>&, ParamStore<double>&);

}  // namespace eres2net
