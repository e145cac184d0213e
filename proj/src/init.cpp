// Copyright 2026 The eres2net-cpp Authors
// Licensed under the Apache License, Version 2.0

#include "eres2net/init.h"

#include <cmath>
#include <random>

namespace eres2net {

std::uint64_t name_hash(const std::string& name) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : name) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

namespace {

template <typename T>
Tensor<T> gaussian(const Shape& dims, double stddev, std::uint64_t seed, const std::string& name) {
  std::mt19937_64 rng(seed ^ name_hash(name));
  std::normal_distribution<double> normal(0.0, stddev);
  Tensor<T> out(dims);
  for (auto& v : out.data()) v = static_cast<T>(normal(rng));
  return out;
}

}  // namespace

template <typename T>
void add_conv(ParamStore<T>& store, const std::string& name, int out, int in, int kh, int kw, std::uint64_t seed) {
  const double fan_out = static_cast<double>(out) * kh * kw;
  store.add(name, gaussian<T>({out, in, kh, kw}, std::sqrt(2.0 / fan_out), seed, name), ParamKind::kWeight);
}

template <typename T>
void add_batch_norm(ParamStore<T>& store, const std::string& prefix, int channels) {
  store.add(prefix + "/gamma", Tensor<T>({channels}, T(1)), ParamKind::kNorm);
  store.add(prefix + "/beta", Tensor<T>({channels}, T(0)), ParamKind::kNorm);
  store.add(prefix + "/running_mean", Tensor<T>({channels}, T(0)), ParamKind::kBuffer);
  store.add(prefix + "/running_var", Tensor<T>({channels}, T(1)), ParamKind::kBuffer);
}

template <typename T>
void add_linear(ParamStore<T>& store, const std::string& name, int out, int in, std::uint64_t seed) {
  store.add(name, gaussian<T>({out, in}, 1.0 / std::sqrt(static_cast<double>(in)), seed, name), ParamKind::kWeight);
}

template <typename T>
BatchNormState<T> bind_batch_norm(ParamStore<T>& store, const std::string& prefix) {
  BatchNormState<T> state;
  state.gamma = store.var(prefix + "/gamma");
  state.beta = store.var(prefix + "/beta");
  state.running_mean = &store.value(prefix + "/running_mean");
  state.running_var = &store.value(prefix + "/running_var");
  return state;
}

#define ERES2NET_INSTANTIATE(T)                                                                          \
  template void add_conv<T>(ParamStore<T>&, const std::string&, int, int, int, int, std::uint64_t);      \
  template void add_batch_norm<T>(ParamStore<T>&, const std::string&, int);                              \
  template void add_linear<T>(ParamStore<T>&, const std::string&, int, int, std::uint64_t);              \
  template BatchNormState<T> bind_batch_norm<T>(ParamStore<T>&, const std::string&);

ERES2NET_INSTANTIATE(float)
ERES2NET_INSTANTIATE(double)

#undef ERES2NET_INSTANTIATE

}  // namespace eres2net
