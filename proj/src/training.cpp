// Copyright 2026 The eres2net-cpp Authors
// Licensed under the Apache License, Version 2.0

#include "eres2net/training.h"

#include <fftw3.h>
#include <malloc.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <mutex>
#include <numbers>
#include <random>

#include "eres2net/init.h"

namespace eres2net {

void AamConfig::validate() const {
  if (!(margin >= 0) || !(margin < std::numbers::pi / 2))
    throw ConfigError("AAM margin must be in [0, pi/2), got " + std::to_string(margin));
  if (!(scale > 0)) throw ConfigError("AAM scale must be positive");
  if (num_classes < 1) throw ConfigError("AAM needs at least one class");
}

void OptimConfig::validate() const {
  if (!(peak_lr >= 0) || !(final_lr >= 0)) throw ConfigError("learning rates must be non-negative");
  if (!(momentum >= 0) || !(momentum < 1)) throw ConfigError("momentum must be in [0, 1)");
  if (!(weight_decay >= 0)) throw ConfigError("weight decay must be non-negative");
  if (steps_per_epoch < 1 || total_epochs < 1) throw ConfigError("steps_per_epoch and total_epochs must be >= 1");
  if (!(warmup_epochs >= 0) || !(warmup_epochs < total_epochs))
    throw ConfigError("warmup_epochs must be in [0, total_epochs), got " + std::to_string(warmup_epochs));
}

double lr_schedule(std::int64_t step, const OptimConfig& c) {
  const double warmup = c.warmup_epochs * c.steps_per_epoch;
  const double s = static_cast<double>(std::max<std::int64_t>(step, 0));
  if (s < warmup) return c.peak_lr * s / warmup;
  const double span = c.total_steps() - warmup;
  const double progress = span > 0 ? std::min((s - warmup) / span, 1.0) : 1.0;
  return c.final_lr + (c.peak_lr - c.final_lr) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

template <typename T>
Var<T> aam_softmax_loss(const Var<T>& embeddings, std::span<const int> labels, const Var<T>& head,
                        const AamConfig& config) {
  require_rank(embeddings.dims(), 2, "aam_softmax_loss embeddings");
  require_rank(head.dims(), 2, "aam_softmax_loss head");
  if (head.dim(1) != embeddings.dim(1))
    throw ShapeError("aam_softmax_loss: head rows have " + std::to_string(head.dim(1)) + " dims, embeddings have " +
                     std::to_string(embeddings.dim(1)));
  if (static_cast<int>(labels.size()) != embeddings.dim(0))
    throw ContractError("aam_softmax_loss: " + std::to_string(labels.size()) + " labels for batch of " +
                        std::to_string(embeddings.dim(0)));
  Var<T> cosine = linear(l2_normalize_rows(embeddings), l2_normalize_rows(head));
  Var<T> logits = angular_margin_logits(cosine, labels, static_cast<T>(config.margin), static_cast<T>(config.scale));
  return softmax_cross_entropy(logits, labels);
}

template <typename T>
void sgd_step(ParamStore<T>& store, SgdState<T>& state, double lr, double momentum, double weight_decay) {
  for (const auto& e : store.entries()) {
    if (!e.learnable()) continue;
    if (e.node->grad.empty()) throw ContractError("sgd_step: parameter '" + e.name + "' has no gradient");
  }
  for (const auto& e : store.entries()) {
    if (!e.learnable()) continue;
    auto& p = e.node->value;
    const auto& g = e.node->grad;
    auto [it, fresh] = state.velocity.try_emplace(e.name, p.dims());
    auto& v = it->second;
    const T mu = static_cast<T>(momentum);
    const T wd = e.kind == ParamKind::kNorm ? T(0) : static_cast<T>(weight_decay);
    const T rate = static_cast<T>(lr);
    for (std::int64_t i = 0; i < p.size(); ++i) {
      v[i] = mu * v[i] + g[i] + wd * p[i];
      p[i] -= rate * v[i];
    }
  }
}

void SynthConfig::validate() const {
  if (num_speakers < 2) throw ConfigError("synthetic dataset needs at least 2 speakers");
  if (utts_per_speaker < 1 || heldout_utts_per_speaker < 1)
    throw ConfigError("synthetic dataset needs at least one utterance per speaker");
  if (sample_rate <= 0) throw ConfigError("synthetic sample rate must be positive");
  if (!(utt_seconds > 0.05)) throw ConfigError("synthetic utterances must be longer than 50 ms");
  if (phones_per_speaker < 1) throw ConfigError("phones_per_speaker must be >= 1");
  if (!(segment_seconds > 0)) throw ConfigError("segment_seconds must be positive");
  if (!(jitter >= 0)) throw ConfigError("jitter must be non-negative");
}

namespace {

constexpr int kSynthFft = 512;
constexpr int kSynthHop = kSynthFft / 2;
constexpr int kEnvelopePoints = 32;

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9E3779B97F4A7C15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Log-magnitude templates sampled on a uniform mel grid: a few formant-like
// bumps per phone.
std::vector<std::vector<double>> speaker_templates(const SynthConfig& c, int speaker) {
  std::mt19937_64 rng(mix(c.seed, name_hash("speaker/" + std::to_string(speaker))));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<std::vector<double>> phones;
  for (int p = 0; p < c.phones_per_speaker; ++p) {
    std::vector<double> env(kEnvelopePoints, 0.0);
    const int bumps = 3 + static_cast<int>(unit(rng) * 3);
    for (int b = 0; b < bumps; ++b) {
      const double center = unit(rng);
      const double width = 0.03 + 0.09 * unit(rng);
      const double height = 1.0 + 2.0 * unit(rng);
      for (int i = 0; i < kEnvelopePoints; ++i) {
        const double u = static_cast<double>(i) / (kEnvelopePoints - 1);
        env[static_cast<std::size_t>(i)] += height * std::exp(-0.5 * std::pow((u - center) / width, 2));
      }
    }
    phones.push_back(std::move(env));
  }
  return phones;
}

double sample_envelope(const std::vector<double>& env, double u) {
  const double x = std::clamp(u, 0.0, 1.0) * (kEnvelopePoints - 1);
  const int i = std::min(static_cast<int>(x), kEnvelopePoints - 2);
  const double frac = x - i;
  return env[static_cast<std::size_t>(i)] * (1 - frac) + env[static_cast<std::size_t>(i + 1)] * frac;
}

std::mutex& synth_planner_mutex() {
  static std::mutex m;
  return m;
}

}  // namespace

Waveform synth_waveform(const SynthConfig& c, int speaker, std::uint64_t utterance_seed) {
  c.validate();
  const auto phones = speaker_templates(c, speaker);
  std::mt19937_64 rng(mix(mix(c.seed, static_cast<std::uint64_t>(speaker)), utterance_seed));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  const int n = static_cast<int>(std::lround(c.utt_seconds * c.sample_rate));
  const int segment = std::max(1, static_cast<int>(std::lround(c.segment_seconds * c.sample_rate)));
  const int segments = (n + segment - 1) / segment;
  std::vector<std::vector<double>> seg_env;
  for (int s = 0; s < segments; ++s) {
    auto env = phones[static_cast<std::size_t>(rng() % phones.size())];
    for (double& v : env) v += c.jitter * normal(rng);
    seg_env.push_back(std::move(env));
  }

  const int bins = kSynthFft / 2 + 1;
  const double mel_lo = hz_to_mel(20.0);
  const double mel_hi = hz_to_mel(c.sample_rate / 2.0);
  std::vector<double> bin_u(static_cast<std::size_t>(bins));
  for (int k = 0; k < bins; ++k)
    bin_u[static_cast<std::size_t>(k)] =
        (hz_to_mel(static_cast<double>(k) * c.sample_rate / kSynthFft) - mel_lo) / (mel_hi - mel_lo);

  fftw_complex* spec = fftw_alloc_complex(static_cast<std::size_t>(bins));
  double* frame = fftw_alloc_real(kSynthFft);
  fftw_plan plan;
  {
    std::lock_guard<std::mutex> lock(synth_planner_mutex());
    plan = fftw_plan_dft_c2r_1d(kSynthFft, spec, frame, FFTW_ESTIMATE);
  }
  std::vector<double> out(static_cast<std::size_t>(n + kSynthFft), 0.0);
  for (int start = -kSynthHop; start < n; start += kSynthHop) {
    const int centre = std::clamp(start + kSynthFft / 2, 0, n - 1);
    const auto& env = seg_env[static_cast<std::size_t>(centre / segment)];
    for (int k = 0; k < bins; ++k) {
      const double mag = std::exp(sample_envelope(env, bin_u[static_cast<std::size_t>(k)]));
      const double phase = 2.0 * std::numbers::pi * unit(rng);
      spec[k][0] = mag * std::cos(phase);
      spec[k][1] = (k == 0 || k == bins - 1) ? 0.0 : mag * std::sin(phase);
    }
    fftw_execute(plan);
    for (int i = 0; i < kSynthFft; ++i) {
      const int at = start + i;
      if (at < 0 || at >= n) continue;
      const double hann = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / kSynthFft);
      out[static_cast<std::size_t>(at)] += hann * frame[i];
    }
  }
  {
    std::lock_guard<std::mutex> lock(synth_planner_mutex());
    fftw_destroy_plan(plan);
  }
  fftw_free(spec);
  fftw_free(frame);

  double peak = 0.0;
  for (int i = 0; i < n; ++i) peak = std::max(peak, std::abs(out[static_cast<std::size_t>(i)]));
  Waveform wave;
  wave.sample_rate = c.sample_rate;
  wave.samples.resize(static_cast<std::size_t>(n));
  const double gain = peak > 0 ? 0.5 / peak : 0.0;
  for (int i = 0; i < n; ++i) wave.samples[static_cast<std::size_t>(i)] = static_cast<float>(out[static_cast<std::size_t>(i)] * gain);
  return wave;
}

SynthDataset make_synth_dataset(const SynthConfig& config, bool heldout, const FbankConfig& fbank_config) {
  config.validate();
  SynthDataset ds{config, {}};
  const int per = heldout ? config.heldout_utts_per_speaker : config.utts_per_speaker;
  ds.utterances.resize(static_cast<std::size_t>(config.num_speakers * per));
  // Held-out utterances draw from a disjoint seed range.
  const std::uint64_t base = heldout ? (1ULL << 32) : 0;
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < config.num_speakers * per; ++i) {
    const int spk = i / per;
    const int u = i % per;
    auto& utt = ds.utterances[static_cast<std::size_t>(i)];
    char id[64];
    std::snprintf(id, sizeof id, "spk%03d-%s%03d", spk, heldout ? "h" : "u", u);
    utt.id = id;
    utt.speaker = spk;
    utt.features = fbank(synth_waveform(config, spk, base + static_cast<std::uint64_t>(u)), fbank_config);
  }
  return ds;
}

int crop_frames(double crop_seconds, int sample_rate, const FbankConfig& fbank_config) {
  if (!(crop_seconds > 0)) throw ContractError("crop length must be positive, got " + std::to_string(crop_seconds));
  const int samples = static_cast<int>(std::lround(crop_seconds * sample_rate));
  const int frames = num_frames(samples, fbank_config.window_samples(sample_rate), fbank_config.shift_samples(sample_rate));
  if (frames < 2) throw ContractError("crop of " + std::to_string(crop_seconds) + " s yields fewer than 2 frames");
  return frames;
}

Batch crop_batch(const SynthDataset& dataset, double crop_seconds, int batch_size, std::uint64_t seed) {
  if (dataset.utterances.empty()) throw ContractError("crop_batch: dataset is empty");
  if (batch_size < 1) throw ContractError("crop_batch: batch size must be positive");
  const int frames = crop_frames(crop_seconds, dataset.config.sample_rate);
  const int bins = dataset.utterances.front().features.dim(1);
  std::mt19937_64 rng(seed);
  Batch batch{Tensor<float>::feature_map(batch_size, 1, bins, frames), {}};
  Tensor<float> crop({frames, bins});
  for (int b = 0; b < batch_size; ++b) {
    const auto& utt = dataset.utterances[static_cast<std::size_t>(rng() % dataset.utterances.size())];
    const int len = utt.features.dim(0);
    const int start = len > frames ? static_cast<int>(rng() % static_cast<std::uint64_t>(len - frames + 1)) : 0;
    for (int t = 0; t < frames; ++t) {
      const int src = (start + t) % len;
      std::copy_n(&utt.features[static_cast<std::int64_t>(src) * bins], bins, &crop[static_cast<std::int64_t>(t) * bins]);
    }
    const Tensor<float> normed = instance_norm(crop);
    for (int t = 0; t < frames; ++t)
      for (int f = 0; f < bins; ++f) batch.features.at(b, 0, f, t) = normed[static_cast<std::int64_t>(t) * bins + f];
    batch.labels.push_back(utt.speaker);
  }
  return batch;
}

namespace {

// Training allocates and frees the same large activations every step; keep
// them on the heap instead of round-tripping through mmap.
void tune_allocator_for_training() {
  mallopt(M_MMAP_THRESHOLD, 32 << 20);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
}

}  // namespace

TrainResult train(const TrainConfig& config, const SynthDataset& dataset, std::int64_t steps,
                  const std::function<void(const TrainStep&)>& on_step) {
  AamConfig aam = config.aam;
  if (aam.num_classes == 0) aam.num_classes = dataset.config.num_speakers;
  aam.validate();
  config.optim.validate();
  if (aam.num_classes != dataset.config.num_speakers)
    throw ConfigError("num_classes " + std::to_string(aam.num_classes) + " does not match " +
                      std::to_string(dataset.config.num_speakers) + " dataset speakers");
  if (config.batch_size < 1) throw ConfigError("batch_size must be positive");
  if (!dataset.utterances.empty() && dataset.utterances.front().features.dim(1) != config.model.feat_dim)
    throw ConfigError("dataset features have " + std::to_string(dataset.utterances.front().features.dim(1)) +
                      " bins, model expects " + std::to_string(config.model.feat_dim));
  tune_allocator_for_training();

  TrainResult result{build_model<float>(config.model, config.seed), {}};
  auto& store = result.model.params;
  add_linear(store, "head/weight", aam.num_classes, config.model.embedding_dim, config.seed);
  SgdState<float> sgd;
  const std::int64_t total = steps > 0 ? steps : config.optim.total_steps();
  for (std::int64_t step = 0; step < total; ++step) {
    const double lr = lr_schedule(step, config.optim);
    const Batch batch = crop_batch(dataset, config.crop_seconds, config.batch_size, mix(config.seed, static_cast<std::uint64_t>(step)));
    Var<float> loss;
    {
      auto embeddings = forward(result.model, Var<float>::constant(batch.features), BnMode::kTrain);
      loss = aam_softmax_loss(embeddings, batch.labels, store.var("head/weight"), aam);
    }
    const double value = loss.value()[0];
    if (!std::isfinite(value))
      throw NumericalError("training diverged at step " + std::to_string(step) + ": loss is " + std::to_string(value));
    backward(loss, store);
    for (const auto& e : store.entries())
      if (e.learnable() && !e.node->grad.all_finite())
        throw NumericalError("training diverged at step " + std::to_string(step) + ": non-finite gradient for '" +
                             e.name + "'");
    sgd_step(store, sgd, lr, config.optim.momentum, config.optim.weight_decay);
    result.trace.push_back({step, lr, value});
    if (on_step) on_step(result.trace.back());
  }
  return result;
}

void write_loss_csv(const std::string& path, const std::vector<TrainStep>& trace) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << "step,lr,loss\n";
  char line[96];
  for (const auto& s : trace) {
    std::snprintf(line, sizeof line, "%lld,%.9g,%.9g\n", static_cast<long long>(s.step), s.lr, s.loss);
    out << line;
  }
  if (!out) throw IoError("write to '" + path + "' failed");
}

#define ERES2NET_INSTANTIATE(T)                                                                              \
  template Var<T> aam_softmax_loss<T>(const Var<T>&, std::span<const int>, const Var<T>&, const AamConfig&); \
  template void sgd_step<T>(ParamStore<T>&, SgdState<T>&, double, double, double);

ERES2NET_INSTANTIATE(float)
ERES2NET_INSTANTIATE(double)

#undef ERES2NET_INSTANTIATE

}  // namespace eres2net
