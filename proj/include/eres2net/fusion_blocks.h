// Copyright 2026 The eres2net-cpp Authors
// Licensed under the Apache License, Version 2.0

#ifndef ERES2NET_FUSION_BLOCKS_H_
#define ERES2NET_FUSION_BLOCKS_H_

#include <cstdint>
#include <string>

#include "eres2net/param_store.h"

namespace eres2net {

/// Widths and behavior of one residual block.
///
/// The block is 1x1 reduce (in -> mid, carrying the stride) -> split into
/// `scale` branches of mid/scale channels -> hierarchical 3x3 branch convs ->
/// concat -> 1x1 expand (mid -> out) -> add shortcut -> ReLU. With `use_lff`
/// adjacent branches are merged by attentional fusion instead of addition.
struct BlockConfig {
  int in_channels = 0;
  int mid_channels = 0;
  int out_channels = 0;
  int scale = 2;
  int stride = 1;
  bool use_lff = false;
  int reduction = 4;

  int branch_channels() const { return mid_channels / scale; }
  bool has_projection() const { return stride != 1 || in_channels != out_channels; }
  /// Throws ConfigError on any violated invariant.
  void validate() const;
};

/// Parameters of one attentional fusion module over c-channel inputs:
/// w1 [max(c/r,1), 2c, 1, 1], w2 [c, max(c/r,1), 1, 1], a BN after each.
template <typename T>
struct AffParams {
  Var<T> w1;
  Var<T> w2;
  BatchNormState<T> bn1;
  BatchNormState<T> bn2;
  int reduction = 4;

  static AffParams bind(ParamStore<T>& store, const std::string& prefix, int reduction);
};

int aff_hidden_channels(int channels, int reduction);

template <typename T>
void init_aff(ParamStore<T>& store, const std::string& prefix, int channels, int reduction, std::uint64_t seed);

/// U = tanh(BN(W2 * SiLU(BN(W1 * [a, b])))), entries in (-1, 1), dims of a.
template <typename T>
Var<T> aff_weights(const Var<T>& a, const Var<T>& b, AffParams<T>& params, BnMode mode);

/// (U + 1) * a + (1 - U) * b with U = aff_weights(a, b).
template <typename T>
Var<T> aff_fuse(const Var<T>& a, const Var<T>& b, AffParams<T>& params, BnMode mode);

/// Registers every tensor the block needs under `prefix`.
template <typename T>
void init_block(ParamStore<T>& store, const std::string& prefix, const BlockConfig& config, std::uint64_t seed);

/// Hierarchical block: y1 = x1, y2 = K2(x2), yi = Ki(xi + y(i-1)).
template <typename T>
Var<T> res2net_block(const Var<T>& x, const BlockConfig& config, ParamStore<T>& store, const std::string& prefix,
                     BnMode mode);

/// Attentional block: y1 = K1(x1), yi = Ki(aff_fuse(xi, y(i-1))).
template <typename T>
Var<T> eres2net_block(const Var<T>& x, const BlockConfig& config, ParamStore<T>& store, const std::string& prefix,
                      BnMode mode);

/// Dispatches on config.use_lff.
template <typename T>
Var<T> block_forward(const Var<T>& x, const BlockConfig& config, ParamStore<T>& store, const std::string& prefix,
                     BnMode mode);

}  // namespace eres2net

#endif  // ERES2NET_FUSION_BLOCKS_H_
