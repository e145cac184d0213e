// Copyright 2026 The eres2net-cpp Authors
// Licensed under the Apache License, Version 2.0

#ifndef ERES2NET_INIT_H_
#define ERES2NET_INIT_H_

// Parameter registration helpers. Every tensor is drawn from a generator
// seeded by (seed, name), so a parameter's initial value depends only on its
// path and never on which other modules exist. That is what makes the four
// architecture variants comparable tensor-for-tensor on a shared seed.

#include <cstdint>
#include <string>

#include "eres2net/param_store.h"

namespace eres2net {

std::uint64_t name_hash(const std::string& name);

/// Bias-free conv kernel [out,in,kh,kw], N(0, 2/fan_out).
template <typename T>
void add_conv(ParamStore<T>& store, const std::string& name, int out, int in, int kh, int kw, std::uint64_t seed);

/// gamma=1, beta=0, running_mean=0, running_var=1 under `prefix`.
template <typename T>
void add_batch_norm(ParamStore<T>& store, const std::string& prefix, int channels);

/// Linear weight [out,in], N(0, 1/in).
template <typename T>
void add_linear(ParamStore<T>& store, const std::string& name, int out, int in, std::uint64_t seed);

/// Binds the four BN tensors registered under `prefix`.
template <typename T>
BatchNormState<T> bind_batch_norm(ParamStore<T>& store, const std::string& prefix);

}  // namespace eres2net

#endif  // ERES2NET_INIT_H_
