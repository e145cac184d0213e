// Copyright 2026 The eres2net-cpp Authors
// Licensed under the Apache License, Version 2.0

#ifndef ERES2NET_FEATURES_H_
#define ERES2NET_FEATURES_H_

#include <string>
#include <vector>

#include "eres2net/tensor.h"

namespace eres2net {

struct Waveform {
  std::vector<float> samples;  // in [-1, 1]
  int sample_rate = 16000;
};

struct FbankConfig {
  int num_bins = 80;
  double window_ms = 25.0;
  double shift_ms = 10.0;
  int fft_size = 512;
  double low_freq = 20.0;
  double high_freq = 0.0;  // <= 0 means sample_rate / 2
  double floor = 1e-10;

  int window_samples(int sample_rate) const;
  int shift_samples(int sample_rate) const;
  void validate(int sample_rate) const;
};

/// Frames produced without edge padding: 1 + (n - window) / shift, or 0 when
/// the signal is shorter than one window.
int num_frames(int num_samples, int window, int shift);

double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// Triangular HTK-mel filters over the fft_size/2 + 1 power bins, [bins][fft/2+1].
std::vector<std::vector<double>> mel_filterbank(const FbankConfig& config, int sample_rate);

/// Log mel energies [frames, num_bins]: per frame remove DC, Hamming window,
/// |FFT|^2, mel filters, log(max(energy, floor)). No pre-emphasis or dither.
Tensor<float> fbank(const Waveform& wave, const FbankConfig& config = {});

/// Per-bin (x - mean) / (std + eps) over time for a [T, bins] matrix.
Tensor<float> instance_norm(const Tensor<float>& features, float eps = 1e-5f);

/// 16-bit PCM mono WAV. Throws IoError on open failure and FormatError for
/// anything else (multichannel, other encodings, truncated chunks).
Waveform read_wav(const std::string& path);
void write_wav(const std::string& path, const Waveform& wave);

/// Headerless little-endian float32 samples.
Waveform read_raw_float32(const std::string& path, int sample_rate = 16000);

}  // namespace eres2net

#endif  // ERES2NET_FEATURES_H_
