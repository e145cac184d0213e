// Copyright 2026 The eres2net-cpp Authors
// Licensed under the Apache License, Version 2.0

#ifndef ERES2NET_NETWORK_H_
#define ERES2NET_NETWORK_H_

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "eres2net/fusion_blocks.h"
#include "eres2net/param_store.h"

namespace eres2net {

/// The four ablation rows: plain hierarchical blocks, attentional blocks (LFF),
/// plain blocks plus the bottom-up pathway (GFF), and both.
enum class Variant : std::uint8_t { kRes2Net, kRes2NetLff, kRes2NetGff, kERes2Net };

const char* variant_name(Variant v);
/// Accepts "res2net", "res2net+lff", "res2net+gff", "eres2net".
Variant parse_variant(const std::string& name);

struct ModelConfig {
  std::array<int, 4> stage_depths{3, 4, 6, 3};
  std::array<int, 4> stage_channels{64, 128, 256, 512};
  int stem_channels = 32;
  int scale = 2;
  int reduction = 4;
  int embedding_dim = 192;
  int feat_dim = 80;
  Variant variant = Variant::kERes2Net;
  double width_multiplier = 1.0;
  /// Bottom-up pathway downsamples the previous fused map (true) or the raw
  /// previous stage output (false).
  bool gff_cascade = true;

  bool use_lff() const { return variant == Variant::kRes2NetLff || variant == Variant::kERes2Net; }
  bool use_gff() const { return variant == Variant::kRes2NetGff || variant == Variant::kERes2Net; }

  /// Channel count after the width multiplier: at least 8, rounded to a
  /// multiple of scale * reduction. Identity at width 1.0 for the default widths.
  int scaled(int channels) const;
  int stem_width() const { return scaled(stem_channels); }
  int stage_width(int stage) const { return scaled(stage_channels[static_cast<std::size_t>(stage)]); }
  /// Frequency bins reaching the pooling layer.
  int pooled_freq() const { return feat_dim / 8; }
  int pooled_dim() const { return 2 * stage_width(3) * pooled_freq(); }
  BlockConfig block_config(int stage, int index) const;

  void validate() const;
};

/// A model is its configuration plus every tensor it owns.
template <typename T>
struct Model {
  ModelConfig config;
  ParamStore<T> params;
};

template <typename T>
struct ForwardTrace {
  std::array<Var<T>, 4> stages;  // S_1..S_4
  Var<T> head_input;             // S_4 or the fused F_4
  Var<T> pooled;
  Var<T> embedding;
};

/// Deterministic initialization from (config, seed).
template <typename T>
Model<T> build_model(const ModelConfig& config, std::uint64_t seed);

/// features [B,1,feat_dim,T] -> embeddings [B,embedding_dim]. T is
/// right-padded with zeros to a multiple of 8 first.
template <typename T>
Var<T> forward(Model<T>& model, const Var<T>& features, BnMode mode);

template <typename T>
ForwardTrace<T> forward_trace(Model<T>& model, const Var<T>& features, BnMode mode);

/// Right-pads the time axis of a [B,C,F,T] map with zeros to a multiple of 8.
template <typename T>
Tensor<T> pad_time_to_multiple(const Tensor<T>& features, int multiple = 8);

/// Bottom-up fusion F_1 = S_1, F_j = aff_fuse(D_j(F_(j-1)), S_j); returns F_4.
/// With cascade off, D_j is applied to S_(j-1) instead.
template <typename T>
Var<T> gff_forward(const std::array<Var<T>, 4>& stages, const ModelConfig& config, ParamStore<T>& store,
                   BnMode mode);

template <typename T>
void init_gff(ParamStore<T>& store, const ModelConfig& config, std::uint64_t seed);

/// Learnable-scalar counts by region of the network.
struct ParamCounts {
  std::int64_t frame_level = 0;  // stem, stages, fusion pathway
  std::int64_t embedding = 0;    // pooled -> embedding linear map
  std::int64_t head = 0;         // AAM classifier matrix ("head/" prefix)

  std::int64_t total(bool include_head) const { return frame_level + embedding + (include_head ? head : 0); }
};

template <typename T>
ParamCounts count_param_regions(const ParamStore<T>& store);

/// Learnable scalars of the embedding network, classifier head optional.
template <typename T>
std::int64_t count_params(const ParamStore<T>& store, bool include_head = false);

/// Writes every tensor (learnable and running statistics) as float32.
template <typename T>
void save_weights(const ParamStore<T>& store, const std::string& path);

/// Reads a weight file; entry kinds are inferred from the name suffix.
ParamStore<float> load_weights(const std::string& path);

/// Copies `loaded` into `target`, requiring exactly the same names and dims.
/// Throws FormatError naming the first missing, unexpected or mis-shaped path.
template <typename T>
void assign_weights(ParamStore<T>& target, const ParamStore<float>& loaded);

}  // namespace eres2net

#endif  // ERES2NET_NETWORK_H_
