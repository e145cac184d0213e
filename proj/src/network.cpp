// Copyright 2026 The eres2net-cpp Authors
// Licensed under the Apache License, Version 2.0

#include "eres2net/network.h"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "eres2net/init.h"
#include "eres2net/tensor_io.h"

namespace eres2net {

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::kRes2Net: return "res2net";
    case Variant::kRes2NetLff: return "res2net+lff";
    case Variant::kRes2NetGff: return "res2net+gff";
    case Variant::kERes2Net: return "eres2net";
  }
  return "unknown";
}

Variant parse_variant(const std::string& name) {
  for (Variant v : {Variant::kRes2Net, Variant::kRes2NetLff, Variant::kRes2NetGff, Variant::kERes2Net})
    if (name == variant_name(v)) return v;
  throw ConfigError("unknown variant '" + name + "' (expected res2net, res2net+lff, res2net+gff or eres2net)");
}

int ModelConfig::scaled(int channels) const {
  const int unit = scale * reduction;
  const long rounded = std::lround(channels * width_multiplier / unit);
  int v = static_cast<int>(std::max(rounded, 1L)) * unit;
  if (v < 8) v = (8 + unit - 1) / unit * unit;
  return v;
}

BlockConfig ModelConfig::block_config(int stage, int index) const {
  BlockConfig c;
  c.out_channels = stage_width(stage);
  c.in_channels = index > 0 ? c.out_channels : (stage == 0 ? stem_width() : stage_width(stage - 1));
  c.mid_channels = c.out_channels / 2;
  c.scale = scale;
  c.stride = (stage > 0 && index == 0) ? 2 : 1;
  c.use_lff = use_lff();
  c.reduction = reduction;
  return c;
}

void ModelConfig::validate() const {
  if (!(width_multiplier > 0)) throw ConfigError("width_multiplier must be positive");
  if (scale < 2) throw ConfigError("scale must be >= 2");
  if (reduction < 1) throw ConfigError("reduction must be >= 1");
  if (embedding_dim < 1) throw ConfigError("embedding_dim must be positive");
  if (stem_channels < 1) throw ConfigError("stem_channels must be positive");
  if (feat_dim < 8 || feat_dim % 8 != 0)
    throw ConfigError("feat_dim must be a positive multiple of 8, got " + std::to_string(feat_dim));
  for (int s = 0; s < 4; ++s) {
    if (stage_depths[s] < 1) throw ConfigError("stage depths must be >= 1");
    if (stage_channels[s] < 1) throw ConfigError("stage channels must be positive");
    const int w = stage_width(s);
    if ((w / 2) % scale != 0 || w % 2 != 0)
      throw ConfigError("stage " + std::to_string(s + 1) + " width " + std::to_string(w) +
                        " does not split into " + std::to_string(scale) + " branches after the 1x1 reduce");
    if (s > 0 && w != 2 * stage_width(s - 1))
      throw ConfigError("stage widths must double per stage, got " + std::to_string(stage_width(s - 1)) + " -> " +
                        std::to_string(w));
  }
}

namespace {

std::string stage_prefix(int stage, int index) {
  return "stage" + std::to_string(stage + 1) + "/block" + std::to_string(index);
}

std::string gff_prefix(const char* what, int j) { return std::string("gff/") + what + std::to_string(j); }

ParamKind kind_from_name(const std::string& name) {
  auto ends_with = [&](const std::string& suffix) {
    return name.size() >= suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  if (ends_with("/running_mean") || ends_with("/running_var")) return ParamKind::kBuffer;
  if (ends_with("/gamma") || ends_with("/beta")) return ParamKind::kNorm;
  return ParamKind::kWeight;
}

}  // namespace

template <typename T>
void init_gff(ParamStore<T>& store, const ModelConfig& config, std::uint64_t seed) {
  for (int j = 2; j <= 4; ++j) {
    const int in = config.stage_width(j - 2);
    const int out = config.stage_width(j - 1);
    add_conv(store, gff_prefix("down", j) + "/conv", out, in, 3, 3, seed);
    add_batch_norm(store, gff_prefix("down", j) + "/bn", out);
    init_aff(store, gff_prefix("aff", j), out, config.reduction, seed);
  }
}

template <typename T>
Model<T> build_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Model<T> model{config, {}};
  auto& store = model.params;
  add_conv(store, "stem/conv", config.stem_width(), 1, 3, 3, seed);
  add_batch_norm(store, "stem/bn", config.stem_width());
  for (int s = 0; s < 4; ++s)
    for (int i = 0; i < config.stage_depths[s]; ++i) init_block(store, stage_prefix(s, i), config.block_config(s, i), seed);
  if (config.use_gff()) init_gff(store, config, seed);
  add_linear(store, "embedding/weight", config.embedding_dim, config.pooled_dim(), seed);
  return model;
}

template <typename T>
Tensor<T> pad_time_to_multiple(const Tensor<T>& features, int multiple) {
  require_rank(features.dims(), 4, "pad_time_to_multiple");
  const int n = features.dim(0), c = features.dim(1), f = features.dim(2), t = features.dim(3);
  const int padded = (t + multiple - 1) / multiple * multiple;
  if (padded == t) return features;
  auto out = Tensor<T>::feature_map(n, c, f, padded);
  for (int b = 0; b < n; ++b)
    for (int ch = 0; ch < c; ++ch)
      for (int k = 0; k < f; ++k)
        std::copy_n(&features.at(b, ch, k, 0), t, &out.at(b, ch, k, 0));
  return out;
}

template <typename T>
Var<T> gff_forward(const std::array<Var<T>, 4>& stages, const ModelConfig& config, ParamStore<T>& store,
                   BnMode mode) {
  Var<T> fused = stages[0];
  for (int j = 2; j <= 4; ++j) {
    const Var<T>& source = config.gff_cascade ? fused : stages[static_cast<std::size_t>(j - 2)];
    auto bn = bind_batch_norm(store, gff_prefix("down", j) + "/bn");
    Var<T> down = batch_norm(conv2d(source, store.var(gff_prefix("down", j) + "/conv"), {2, 2}, {1, 1}), bn, mode);
    const Var<T>& target = stages[static_cast<std::size_t>(j - 1)];
    if (down.dims() != target.dims())
      throw ShapeError("gff: downsampled stage " + std::to_string(j - 1) + " has dims " + shape_string(down.dims()) +
                       " but stage " + std::to_string(j) + " has " + shape_string(target.dims()));
    auto aff = AffParams<T>::bind(store, gff_prefix("aff", j), config.reduction);
    fused = aff_fuse(down, target, aff, mode);
  }
  return fused;
}

template <typename T>
ForwardTrace<T> forward_trace(Model<T>& model, const Var<T>& features, BnMode mode) {
  const auto& cfg = model.config;
  auto& store = model.params;
  require_rank(features.dims(), 4, "forward features");
  if (features.dim(1) != 1)
    throw ShapeError("forward: expected 1 input channel, got " + shape_string(features.dims()));
  if (features.dim(2) != cfg.feat_dim)
    throw ShapeError("forward: frequency mismatch, expected " + std::to_string(cfg.feat_dim) + " bins, got " +
                     shape_string(features.dims()));
  if (features.dim(3) < 8)
    throw ContractError("forward: need at least 8 frames, got " + std::to_string(features.dim(3)));

  Var<T> x = features;
  if (features.dim(3) % 8 != 0) x = Var<T>::constant(pad_time_to_multiple(features.value()));

  auto stem_bn = bind_batch_norm(store, "stem/bn");
  x = activation(batch_norm(conv2d(x, store.var("stem/conv"), {1, 1}, {1, 1}), stem_bn, mode), Activation::kRelu);

  ForwardTrace<T> trace;
  for (int s = 0; s < 4; ++s) {
    for (int i = 0; i < cfg.stage_depths[s]; ++i) x = block_forward(x, cfg.block_config(s, i), store, stage_prefix(s, i), mode);
    trace.stages[static_cast<std::size_t>(s)] = x;
  }
  trace.head_input = cfg.use_gff() ? gff_forward(trace.stages, cfg, store, mode) : trace.stages[3];
  trace.pooled = stats_pool(trace.head_input);
  trace.embedding = linear(trace.pooled, store.var("embedding/weight"));
  return trace;
}

template <typename T>
Var<T> forward(Model<T>& model, const Var<T>& features, BnMode mode) {
  return forward_trace(model, features, mode).embedding;
}

template <typename T>
ParamCounts count_param_regions(const ParamStore<T>& store) {
  ParamCounts counts;
  for (const auto& e : store.entries()) {
    if (!e.learnable()) continue;
    const std::int64_t n = e.value().size();
    if (e.name.rfind("head/", 0) == 0) {
      counts.head += n;
    } else if (e.name.rfind("embedding/", 0) == 0) {
      counts.embedding += n;
    } else {
      counts.frame_level += n;
    }
  }
  return counts;
}

template <typename T>
std::int64_t count_params(const ParamStore<T>& store, bool include_head) {
  return count_param_regions(store).total(include_head);
}

template <typename T>
void save_weights(const ParamStore<T>& store, const std::string& path) {
  std::vector<NamedTensor> tensors;
  tensors.reserve(store.count());
  for (const auto& e : store.entries()) tensors.emplace_back(e.name, e.value().template cast<float>());
  write_tensor_file(path, tensors);
}

ParamStore<float> load_weights(const std::string& path) {
  ParamStore<float> store;
  for (auto& [name, tensor] : read_tensor_file(path)) {
    const ParamKind kind = kind_from_name(name);
    store.add(name, std::move(tensor), kind);
  }
  return store;
}

template <typename T>
void assign_weights(ParamStore<T>& target, const ParamStore<float>& loaded) {
  for (const auto& e : target.entries()) {
    if (!loaded.contains(e.name)) throw FormatError("weight file is missing tensor '" + e.name + "'");
    const auto& src = loaded.value(e.name);
    if (src.dims() != e.value().dims())
      throw FormatError("tensor '" + e.name + "' has dims " + shape_string(src.dims()) + ", model expects " +
                        shape_string(e.value().dims()));
  }
  for (const auto& e : loaded.entries())
    if (!target.contains(e.name)) throw FormatError("weight file has unexpected tensor '" + e.name + "'");
  for (const auto& e : target.entries()) {
    const auto& src = loaded.value(e.name);
    auto& dst = target.value(e.name);
    for (std::int64_t i = 0; i < src.size(); ++i) dst[i] = static_cast<T>(src[i]);
  }
}

#define ERES2NET_INSTANTIATE(T)                                                                                 \
  template void init_gff<T>(ParamStore<T>&, const ModelConfig&, std::uint64_t);                                 \
  template Model<T> build_model<T>(const ModelConfig&, std::uint64_t);                                          \
  template Tensor<T> pad_time_to_multiple<T>(const Tensor<T>&, int);                                            \
  template Var<T> gff_forward<T>(const std::array<Var<T>, 4>&, const ModelConfig&, ParamStore<T>&, BnMode);     \
  template ForwardTrace<T> forward_trace<T>(Model<T>&, const Var<T>&, BnMode);                                  \
  template Var<T> forward<T>(Model<T>&, const Var<T>&, BnMode);                                                 \
  template ParamCounts count_param_regions<T>(const ParamStore<T>&);                                            \
  template std::int64_t count_params<T>(const ParamStore<T>&, bool);                                            \
  template void save_weights<T>(const ParamStore<T>&, const std::string&);                                      \
  template void assign_weights<T>(ParamStore<T>&, const ParamStore<float>&);

ERES2NET_INSTANTIATE(float)
ERES2NET_INSTANTIATE(double)

#undef ERES2NET_INSTANTIATE

}  // namespace eres2net
