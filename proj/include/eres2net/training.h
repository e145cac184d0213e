// Copyright 2026 The eres2net-cpp Authors
// Licensed under the Apache License, Version 2.0

#ifndef ERES2NET_TRAINING_H_
#define ERES2NET_TRAINING_H_

#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "eres2net/features.h"
#include "eres2net/network.h"

namespace eres2net {

struct AamConfig {
  double margin = 0.3;
  double scale = 32.0;
  int num_classes = 0;

  void validate() const;
};

struct OptimConfig {
  double peak_lr = 0.2;
  double final_lr = 0.0;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double warmup_epochs = 5;
  int total_epochs = 20;
  int steps_per_epoch = 10;

  int total_steps() const { return total_epochs * steps_per_epoch; }
  void validate() const;
};

/// Linear 0 -> peak over the warmup steps, then half-cosine peak -> final.
/// Held at final_lr past the last step.
double lr_schedule(std::int64_t step, const OptimConfig& config);

/// Mean AAM-softmax cross-entropy over the batch. `head` is [classes, dim];
/// embeddings and head rows are L2-normalized before the cosine.
template <typename T>
Var<T> aam_softmax_loss(const Var<T>& embeddings, std::span<const int> labels, const Var<T>& head,
                        const AamConfig& config);

/// Momentum buffers keyed by parameter name.
template <typename T>
struct SgdState {
  std::unordered_map<std::string, Tensor<T>> velocity;
};

/// v = momentum * v + g + wd * p (wd skipped for norm scales/shifts);
/// p -= lr * v. Buffers are untouched. Throws ContractError when a learnable
/// entry has no gradient.
template <typename T>
void sgd_step(ParamStore<T>& store, SgdState<T>& state, double lr, double momentum, double weight_decay);

struct SynthConfig {
  int num_speakers = 16;
  int utts_per_speaker = 8;
  int heldout_utts_per_speaker = 4;
  double utt_seconds = 4.0;
  int sample_rate = 16000;
  /// Spectral templates per speaker; utterances hop between them.
  int phones_per_speaker = 4;
  double segment_seconds = 0.2;
  /// Std of per-segment log-envelope perturbation.
  double jitter = 0.3;
  std::uint64_t seed = 7;

  void validate() const;
};

struct Utterance {
  std::string id;
  int speaker = 0;
  Tensor<float> features;  // [T, bins] log mel, not normalized
};

struct SynthDataset {
  SynthConfig config;
  std::vector<Utterance> utterances;
};

/// Colored-noise speaker: random-phase overlap-add whose magnitude follows
/// one of the speaker's mel-envelope templates per segment.
Waveform synth_waveform(const SynthConfig& config, int speaker, std::uint64_t utterance_seed);

/// `heldout` selects the disjoint utterance stream reserved for trials.
SynthDataset make_synth_dataset(const SynthConfig& config, bool heldout = false,
                                const FbankConfig& fbank_config = {});

struct Batch {
  Tensor<float> features;  // [B, 1, bins, frames], instance-normalized per crop
  std::vector<int> labels;
};

/// Frames in a crop of the given length at 25 ms / 10 ms framing.
int crop_frames(double crop_seconds, int sample_rate, const FbankConfig& fbank_config = {});

/// Uniform random utterance and crop offset per slot; short utterances are
/// wrap-padded. Deterministic in `seed`.
Batch crop_batch(const SynthDataset& dataset, double crop_seconds, int batch_size, std::uint64_t seed);

struct TrainConfig {
  ModelConfig model;
  OptimConfig optim;
  AamConfig aam;
  double crop_seconds = 3.0;
  int batch_size = 16;
  std::uint64_t seed = 1;
};

struct TrainStep {
  std::int64_t step = 0;
  double lr = 0.0;
  double loss = 0.0;
};

struct TrainResult {
  Model<float> model;  // includes "head/weight"
  std::vector<TrainStep> trace;
};

/// Runs total_steps() SGD steps (or `steps` when positive). The classifier
/// lives in the store as "head/weight". Throws NumericalError naming the step
/// when the loss or a gradient stops being finite.
TrainResult train(const TrainConfig& config, const SynthDataset& dataset, std::int64_t steps = 0,
                  const std::function<void(const TrainStep&)>& on_step = {});

void write_loss_csv(const std::string& path, const std::vector<TrainStep>& trace);

}  // namespace eres2net

#endif  // ERES2NET_TRAINING_H_
