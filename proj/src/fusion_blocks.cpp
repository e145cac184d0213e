// Copyright 2026 The eres2net-cpp Authors
// Licensed under the Apache License, Version 2.0

#include "eres2net/fusion_blocks.h"

#include <algorithm>
#include <vector>

#include "eres2net/init.h"

namespace eres2net {

void BlockConfig::validate() const {
  if (in_channels < 1 || mid_channels < 1 || out_channels < 1)
    throw ConfigError("block widths must be positive");
  if (scale < 2) throw ConfigError("block scale must be >= 2, got " + std::to_string(scale));
  if (mid_channels % scale != 0)
    throw ConfigError("block mid channels " + std::to_string(mid_channels) + " not divisible by scale " +
                      std::to_string(scale));
  if (stride != 1 && stride != 2) throw ConfigError("block stride must be 1 or 2, got " + std::to_string(stride));
  if (reduction < 1) throw ConfigError("AFF reduction must be >= 1");
}

int aff_hidden_channels(int channels, int reduction) { return std::max(channels / reduction, 1); }

template <typename T>
AffParams<T> AffParams<T>::bind(ParamStore<T>& store, const std::string& prefix, int reduction) {
  AffParams p;
  p.w1 = store.var(prefix + "/w1");
  p.w2 = store.var(prefix + "/w2");
  p.bn1 = bind_batch_norm(store, prefix + "/bn1");
  p.bn2 = bind_batch_norm(store, prefix + "/bn2");
  p.reduction = reduction;
  return p;
}

template <typename T>
void init_aff(ParamStore<T>& store, const std::string& prefix, int channels, int reduction, std::uint64_t seed) {
  const int hidden = aff_hidden_channels(channels, reduction);
  add_conv(store, prefix + "/w1", hidden, 2 * channels, 1, 1, seed);
  add_batch_norm(store, prefix + "/bn1", hidden);
  add_conv(store, prefix + "/w2", channels, hidden, 1, 1, seed);
  add_batch_norm(store, prefix + "/bn2", channels);
}

template <typename T>
Var<T> aff_weights(const Var<T>& a, const Var<T>& b, AffParams<T>& params, BnMode mode) {
  require_same_dims(a.dims(), b.dims(), "aff_weights");
  if (params.w2.dim(0) != a.dim(1))
    throw ShapeError("aff_weights: module built for " + std::to_string(params.w2.dim(0)) +
                     " channels, inputs have " + std::to_string(a.dim(1)));
  const Var<T> pair[2] = {a, b};
  Var<T> h = conv2d(channel_concat<T>(pair), params.w1);
  h = activation(batch_norm(h, params.bn1, mode), Activation::kSilu);
  h = batch_norm(conv2d(h, params.w2), params.bn2, mode);
  return activation(h, Activation::kTanh);
}

template <typename T>
Var<T> aff_fuse(const Var<T>& a, const Var<T>& b, AffParams<T>& params, BnMode mode) {
  return attention_merge(aff_weights(a, b, params, mode), a, b);
}

namespace {

std::string branch_name(const std::string& prefix, int i) { return prefix + "/k" + std::to_string(i); }
std::string aff_name(const std::string& prefix, int i) { return prefix + "/aff" + std::to_string(i); }

// Branches are numbered 1..s as in the hierarchical formulation.
template <typename T>
Var<T> branch_conv(const Var<T>& x, ParamStore<T>& store, const std::string& name, BnMode mode) {
  auto bn = bind_batch_norm(store, name + "/bn");
  return activation(batch_norm(conv2d(x, store.var(name + "/conv"), {1, 1}, {1, 1}), bn, mode), Activation::kRelu);
}

template <typename T>
Var<T> reduce(const Var<T>& x, const BlockConfig& c, ParamStore<T>& store, const std::string& prefix, BnMode mode) {
  if (x.dim(1) != c.in_channels)
    throw ShapeError("block " + prefix + ": channel mismatch, expected " + std::to_string(c.in_channels) +
                     " input channels, got " + shape_string(x.dims()));
  auto bn = bind_batch_norm(store, prefix + "/reduce/bn");
  return activation(batch_norm(conv2d(x, store.var(prefix + "/reduce/conv"), {c.stride, c.stride}), bn, mode),
                    Activation::kRelu);
}

template <typename T>
Var<T> expand_and_merge(const std::vector<Var<T>>& branches, const Var<T>& x, const BlockConfig& c,
                        ParamStore<T>& store, const std::string& prefix, BnMode mode) {
  auto expand_bn = bind_batch_norm(store, prefix + "/expand/bn");
  Var<T> out = batch_norm(conv2d(channel_concat<T>(branches), store.var(prefix + "/expand/conv")), expand_bn, mode);
  Var<T> shortcut = x;
  if (c.has_projection()) {
    auto bn = bind_batch_norm(store, prefix + "/shortcut/bn");
    shortcut = batch_norm(conv2d(x, store.var(prefix + "/shortcut/conv"), {c.stride, c.stride}), bn, mode);
  }
  return activation(add(out, shortcut), Activation::kRelu);
}

}  // namespace

template <typename T>
void init_block(ParamStore<T>& store, const std::string& prefix, const BlockConfig& c, std::uint64_t seed) {
  c.validate();
  const int w = c.branch_channels();
  add_conv(store, prefix + "/reduce/conv", c.mid_channels, c.in_channels, 1, 1, seed);
  add_batch_norm(store, prefix + "/reduce/bn", c.mid_channels);
  for (int i = c.use_lff ? 1 : 2; i <= c.scale; ++i) {
    add_conv(store, branch_name(prefix, i) + "/conv", w, w, 3, 3, seed);
    add_batch_norm(store, branch_name(prefix, i) + "/bn", w);
  }
  if (c.use_lff)
    for (int i = 2; i <= c.scale; ++i) init_aff(store, aff_name(prefix, i), w, c.reduction, seed);
  add_conv(store, prefix + "/expand/conv", c.out_channels, c.mid_channels, 1, 1, seed);
  add_batch_norm(store, prefix + "/expand/bn", c.out_channels);
  if (c.has_projection()) {
    add_conv(store, prefix + "/shortcut/conv", c.out_channels, c.in_channels, 1, 1, seed);
    add_batch_norm(store, prefix + "/shortcut/bn", c.out_channels);
  }
}

template <typename T>
Var<T> res2net_block(const Var<T>& x, const BlockConfig& c, ParamStore<T>& store, const std::string& prefix,
                     BnMode mode) {
  c.validate();
  if (c.use_lff) throw ConfigError("res2net_block: config requests LFF; use eres2net_block");
  auto xs = channel_split(reduce(x, c, store, prefix, mode), c.scale);
  std::vector<Var<T>> ys;
  ys.reserve(xs.size());
  ys.push_back(xs[0]);
  ys.push_back(branch_conv(xs[1], store, branch_name(prefix, 2), mode));
  for (int i = 3; i <= c.scale; ++i)
    ys.push_back(branch_conv(add(xs[i - 1], ys.back()), store, branch_name(prefix, i), mode));
  return expand_and_merge(ys, x, c, store, prefix, mode);
}

template <typename T>
Var<T> eres2net_block(const Var<T>& x, const BlockConfig& c, ParamStore<T>& store, const std::string& prefix,
                      BnMode mode) {
  c.validate();
  if (!c.use_lff) throw ConfigError("eres2net_block: config must set use_lff");
  auto xs = channel_split(reduce(x, c, store, prefix, mode), c.scale);
  std::vector<Var<T>> ys;
  ys.reserve(xs.size());
  ys.push_back(branch_conv(xs[0], store, branch_name(prefix, 1), mode));
  for (int i = 2; i <= c.scale; ++i) {
    auto aff = AffParams<T>::bind(store, aff_name(prefix, i), c.reduction);
    ys.push_back(branch_conv(aff_fuse(xs[i - 1], ys.back(), aff, mode), store, branch_name(prefix, i), mode));
  }
  return expand_and_merge(ys, x, c, store, prefix, mode);
}

template <typename T>
Var<T> block_forward(const Var<T>& x, const BlockConfig& c, ParamStore<T>& store, const std::string& prefix,
                     BnMode mode) {
  return c.use_lff ? eres2net_block(x, c, store, prefix, mode) : res2net_block(x, c, store, prefix, mode);
}

#define ERES2NET_INSTANTIATE(T)                                                                                   \
  template struct AffParams<T>;                                                                                   \
  template void init_aff<T>(ParamStore<T>&, const std::string&, int, int, std::uint64_t);                         \
  template Var<T> aff_weights<T>(const Var<T>&, const Var<T>&, AffParams<T>&, BnMode);                            \
  template Var<T> aff_fuse<T>(const Var<T>&, const Var<T>&, AffParams<T>&, BnMode);                               \
  template void init_block<T>(ParamStore<T>&, const std::string&, const BlockConfig&, std::uint64_t);             \
  template Var<T> res2net_block<T>(const Var<T>&, const BlockConfig&, ParamStore<T>&, const std::string&, BnMode); \
  template Var<T> eres2net_block<T>(const Var<T>&, const BlockConfig&, ParamStore<T>&, const std::string&, BnMode); \
  template Var<T> block_forward<T>(const Var<T>&, const BlockConfig&, ParamStore<T>&, const std::string&, BnMode);

ERES2NET_INSTANTIATE(float)
ERES2NET_INSTANTIATE(double)

#undef ERES2NET_INSTANTIATE

}  // namespace eres2net
