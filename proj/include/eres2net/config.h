// Copyright 2026 The eres2net-cpp Authors
// Licensed under the Apache License, Version 2.0

#ifndef ERES2NET_CONFIG_H_
#define ERES2NET_CONFIG_H_

#include <cstdint>
#include <string>
#include <vector>

#include "eres2net/training.h"

namespace eres2net {

/// Everything a run needs, merged from a preset and key=value overrides.
struct RunConfig {
  std::string preset = "standard";
  TrainConfig train;
  SynthConfig synth;
  int threads = 0;  // 0 keeps the OpenMP default
};

/// The two recipes: "standard" (m=0.3, 3 s crops, warmup to 0.2 then cosine
/// to 0) and "lmt" (m=0.5, 6 s crops, 1e-4 cosine down to 2.5e-5).
RunConfig preset_config(const std::string& name);

/// UTF-8 "key = value" lines, '#' starts a comment. A "preset" key is applied
/// first regardless of position; every other key overrides it. Unknown or
/// repeated keys and unparsable values are ConfigErrors carrying the line.
RunConfig parse_config_text(const std::string& text, const std::string& origin = "<memory>");
RunConfig load_config(const std::string& path);

/// Every accepted key, in documentation order.
const std::vector<std::string>& config_keys();

/// Round-trippable text form of `config`.
std::string format_config(const RunConfig& config);

}  // namespace eres2net

#endif  // ERES2NET_CONFIG_H_
