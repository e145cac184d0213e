// Copyright 2026 The eres2net-cpp Authors
// Licensed under the Apache License, Version 2.0

#include "eres2net/config.h"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string_view>

namespace eres2net {

RunConfig preset_config(const std::string& name) {
  RunConfig c;
  c.preset = name;
  if (name == "standard") {
    c.train.aam.margin = 0.3;
    c.train.crop_seconds = 3.0;
    c.train.optim.peak_lr = 0.2;
    c.train.optim.final_lr = 0.0;
    c.train.optim.warmup_epochs = 5;
  } else if (name == "lmt") {
    c.train.aam.margin = 0.5;
    c.train.crop_seconds = 6.0;
    c.train.optim.peak_lr = 1e-4;
    c.train.optim.final_lr = 2.5e-5;
    c.train.optim.warmup_epochs = 0;
  } else {
    throw ConfigError("unknown preset '" + name + "' (expected standard or lmt)");
  }
  c.train.aam.scale = 32.0;
  c.train.optim.momentum = 0.9;
  c.train.optim.weight_decay = 1e-4;
  return c;
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_number(const std::string& v) {
  T out{};
  const char* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ConfigError("invalid number '" + v + "'");
  return out;
}

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("invalid boolean '" + v + "' (expected true or false)");
}

std::string show(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

struct Key {
  const char* name;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define ERES2NET_INT_KEY(key, field)                                                \
  Key {                                                                             \
    key, [](RunConfig& c, const std::string& v) { c.field = parse_number<int>(v); }, \
        [](const RunConfig& c) { return std::to_string(c.field); }                  \
  }
#define ERES2NET_REAL_KEY(key, field)                                                  \
  Key {                                                                                \
    key, [](RunConfig& c, const std::string& v) { c.field = parse_number<double>(v); }, \
        [](const RunConfig& c) { return show(c.field); }                               \
  }
#define ERES2NET_SEED_KEY(key, field)                                                         \
  Key {                                                                                       \
    key, [](RunConfig& c, const std::string& v) { c.field = parse_number<std::uint64_t>(v); }, \
        [](const RunConfig& c) { return std::to_string(c.field); }                            \
  }

const std::vector<Key>& keys() {
  static const std::vector<Key> table = {
      Key{"variant", [](RunConfig& c, const std::string& v) { c.train.model.variant = parse_variant(v); },
          [](const RunConfig& c) { return std::string(variant_name(c.train.model.variant)); }},
      ERES2NET_REAL_KEY("width_multiplier", train.model.width_multiplier),
      Key{"gff_cascade", [](RunConfig& c, const std::string& v) { c.train.model.gff_cascade = parse_bool(v); },
          [](const RunConfig& c) { return std::string(c.train.model.gff_cascade ? "true" : "false"); }},
      ERES2NET_INT_KEY("embedding_dim", train.model.embedding_dim),
      ERES2NET_INT_KEY("scale_s", train.model.scale),
      ERES2NET_INT_KEY("reduction", train.model.reduction),
      ERES2NET_REAL_KEY("margin", train.aam.margin),
      ERES2NET_REAL_KEY("aam_scale", train.aam.scale),
      ERES2NET_INT_KEY("num_classes", train.aam.num_classes),
      ERES2NET_REAL_KEY("peak_lr", train.optim.peak_lr),
      ERES2NET_REAL_KEY("final_lr", train.optim.final_lr),
      ERES2NET_REAL_KEY("momentum", train.optim.momentum),
      ERES2NET_REAL_KEY("weight_decay", train.optim.weight_decay),
      ERES2NET_REAL_KEY("warmup_epochs", train.optim.warmup_epochs),
      ERES2NET_INT_KEY("total_epochs", train.optim.total_epochs),
      ERES2NET_INT_KEY("steps_per_epoch", train.optim.steps_per_epoch),
      ERES2NET_INT_KEY("batch_size", train.batch_size),
      ERES2NET_REAL_KEY("crop_seconds", train.crop_seconds),
      ERES2NET_SEED_KEY("seed", train.seed),
      ERES2NET_INT_KEY("threads", threads),
      ERES2NET_INT_KEY("synth_speakers", synth.num_speakers),
      ERES2NET_INT_KEY("synth_utts_per_speaker", synth.utts_per_speaker),
      ERES2NET_INT_KEY("synth_heldout_utts_per_speaker", synth.heldout_utts_per_speaker),
      ERES2NET_REAL_KEY("synth_utt_seconds", synth.utt_seconds),
      ERES2NET_INT_KEY("synth_phones_per_speaker", synth.phones_per_speaker),
      ERES2NET_REAL_KEY("synth_segment_seconds", synth.segment_seconds),
      ERES2NET_REAL_KEY("synth_jitter", synth.jitter),
      ERES2NET_SEED_KEY("synth_seed", synth.seed),
  };
  return table;
}

#undef ERES2NET_INT_KEY
#undef ERES2NET_REAL_KEY
#undef ERES2NET_SEED_KEY

void validate(const RunConfig& c) {
  c.train.model.validate();
  c.train.optim.validate();
  c.synth.validate();
  if (c.train.aam.num_classes != 0 && c.train.aam.num_classes != c.synth.num_speakers)
    throw ConfigError("num_classes must match synth_speakers (or be 0 to follow it)");
  AamConfig aam = c.train.aam;
  aam.num_classes = c.synth.num_speakers;
  aam.validate();
  if (c.train.batch_size < 1) throw ConfigError("batch_size must be positive");
  if (!(c.train.crop_seconds > 0)) throw ConfigError("crop_seconds must be positive");
  if (c.threads < 0) throw ConfigError("threads must be >= 0");
}

}  // namespace

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out{"preset"};
    for (const auto& k : keys()) out.emplace_back(k.name);
    return out;
  }();
  return names;
}

RunConfig parse_config_text(const std::string& text, const std::string& origin) {
  struct Line {
    int number;
    std::string key, value;
  };
  std::vector<Line> lines;
  std::map<std::string, int> seen;
  std::istringstream in(text);
  std::string raw;
  for (int number = 1; std::getline(in, raw); ++number) {
    const auto hash = raw.find('#');
    const std::string line = trim(std::string_view(raw).substr(0, hash));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    auto fail = [&](const std::string& msg) { throw ConfigError(origin + ":" + std::to_string(number) + ": " + msg); };
    if (eq == std::string::npos) fail("expected key=value, got '" + line + "'");
    Line l{number, trim(std::string_view(line).substr(0, eq)), trim(std::string_view(line).substr(eq + 1))};
    if (l.key.empty()) fail("empty key");
    if (l.value.empty()) fail("empty value for '" + l.key + "'");
    if (auto [it, fresh] = seen.emplace(l.key, number); !fresh)
      fail("key '" + l.key + "' repeated (first set on line " + std::to_string(it->second) + ")");
    lines.push_back(std::move(l));
  }

  RunConfig config = preset_config("standard");
  for (const auto& l : lines) {
    if (l.key != "preset") continue;
    try {
      config = preset_config(l.value);
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(l.number) + ": " + e.what());
    }
  }
  for (const auto& l : lines) {
    if (l.key == "preset") continue;
    const Key* key = nullptr;
    for (const auto& k : keys())
      if (l.key == k.name) key = &k;
    if (!key) throw ConfigError(origin + ":" + std::to_string(l.number) + ": unknown key '" + l.key + "'");
    try {
      key->set(config, l.value);
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(l.number) + ": " + l.key + ": " + e.what());
    }
  }
  validate(config);
  return config;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path);
}

std::string format_config(const RunConfig& config) {
  std::string out = "preset = " + config.preset + "\n";
  for (const auto& k : keys()) out += std::string(k.name) + " = " + k.get(config) + "\n";
  return out;
}

}  // namespace eres2net
