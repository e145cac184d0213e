// Copyright 2026 The eres2net-cpp Authors
// Licensed under the Apache License, Version 2.0

#include "eres2net/features.h"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <memory>
#include <mutex>
#include <numbers>

#include "eres2net/autodiff.h"

namespace eres2net {

int FbankConfig::window_samples(int sample_rate) const {
  return static_cast<int>(std::lround(sample_rate * window_ms / 1000.0));
}

int FbankConfig::shift_samples(int sample_rate) const {
  return static_cast<int>(std::lround(sample_rate * shift_ms / 1000.0));
}

void FbankConfig::validate(int sample_rate) const {
  if (sample_rate <= 0) throw ConfigError("sample rate must be positive, got " + std::to_string(sample_rate));
  if (!(shift_ms > 0) || !(window_ms > shift_ms))
    throw ConfigError("fbank needs window_ms > shift_ms > 0");
  if (num_bins < 1 || num_bins >= fft_size / 2)
    throw ConfigError("fbank num_bins must be in [1, fft_size/2), got " + std::to_string(num_bins));
  if (window_samples(sample_rate) > fft_size)
    throw ConfigError("fbank window of " + std::to_string(window_samples(sample_rate)) +
                      " samples exceeds fft_size " + std::to_string(fft_size));
  const double high = high_freq > 0 ? high_freq : sample_rate / 2.0;
  if (!(low_freq >= 0) || !(high > low_freq) || high > sample_rate / 2.0)
    throw ConfigError("fbank frequency range must satisfy 0 <= low < high <= sample_rate/2");
  if (!(floor > 0)) throw ConfigError("fbank floor must be positive");
}

int num_frames(int num_samples, int window, int shift) {
  if (num_samples < window) return 0;
  return 1 + (num_samples - window) / shift;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

std::vector<std::vector<double>> mel_filterbank(const FbankConfig& config, int sample_rate) {
  config.validate(sample_rate);
  const int bins = config.fft_size / 2 + 1;
  const double high = config.high_freq > 0 ? config.high_freq : sample_rate / 2.0;
  const double mel_low = hz_to_mel(config.low_freq);
  const double mel_step = (hz_to_mel(high) - mel_low) / (config.num_bins + 1);
  std::vector<std::vector<double>> filters(static_cast<std::size_t>(config.num_bins), std::vector<double>(bins, 0.0));
  for (int m = 0; m < config.num_bins; ++m) {
    const double left = mel_low + m * mel_step;
    const double center = left + mel_step;
    const double right = center + mel_step;
    for (int k = 0; k < bins; ++k) {
      const double mel = hz_to_mel(static_cast<double>(k) * sample_rate / config.fft_size);
      double w = 0.0;
      if (mel > left && mel <= center) {
        w = (mel - left) / (center - left);
      } else if (mel > center && mel < right) {
        w = (right - mel) / (right - center);
      }
      filters[static_cast<std::size_t>(m)][static_cast<std::size_t>(k)] = w;
    }
  }
  return filters;
}

namespace {

// The FFTW planner is not thread-safe; execution on a private plan is.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

struct RealFft {
  explicit RealFft(int n) : size(n) {
    in = fftw_alloc_real(static_cast<std::size_t>(n));
    out = fftw_alloc_complex(static_cast<std::size_t>(n / 2 + 1));
    std::lock_guard<std::mutex> lock(planner_mutex());
    plan = fftw_plan_dft_r2c_1d(n, in, out, FFTW_ESTIMATE);
  }
  ~RealFft() {
    {
      std::lock_guard<std::mutex> lock(planner_mutex());
      fftw_destroy_plan(plan);
    }
    fftw_free(in);
    fftw_free(out);
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  int size;
  double* in;
  fftw_complex* out;
  fftw_plan plan;
};

}  // namespace

Tensor<float> fbank(const Waveform& wave, const FbankConfig& config) {
  config.validate(wave.sample_rate);
  const int window = config.window_samples(wave.sample_rate);
  const int shift = config.shift_samples(wave.sample_rate);
  const int n = static_cast<int>(wave.samples.size());
  const int frames = num_frames(n, window, shift);
  if (frames < 1)
    throw ContractError("fbank: waveform has " + std::to_string(n) + " samples, need at least " +
                        std::to_string(window) + " for one frame");

  const auto filters = mel_filterbank(config, wave.sample_rate);
  std::vector<double> hamming(static_cast<std::size_t>(window));
  for (int i = 0; i < window; ++i)
    hamming[static_cast<std::size_t>(i)] = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * i / (window - 1));

  RealFft fft(config.fft_size);
  const int bins = config.fft_size / 2 + 1;
  std::vector<double> power(static_cast<std::size_t>(bins));
  const double log_floor = std::log(config.floor);
  Tensor<float> out({frames, config.num_bins});
  for (int f = 0; f < frames; ++f) {
    const float* frame = wave.samples.data() + static_cast<std::ptrdiff_t>(f) * shift;
    double mean = 0.0;
    for (int i = 0; i < window; ++i) mean += frame[i];
    mean /= window;
    for (int i = 0; i < window; ++i) fft.in[i] = (frame[i] - mean) * hamming[static_cast<std::size_t>(i)];
    std::fill(fft.in + window, fft.in + config.fft_size, 0.0);
    fftw_execute(fft.plan);
    for (int k = 0; k < bins; ++k) power[static_cast<std::size_t>(k)] = fft.out[k][0] * fft.out[k][0] + fft.out[k][1] * fft.out[k][1];
    for (int m = 0; m < config.num_bins; ++m) {
      const auto& w = filters[static_cast<std::size_t>(m)];
      double e = 0.0;
      for (int k = 0; k < bins; ++k) e += w[static_cast<std::size_t>(k)] * power[static_cast<std::size_t>(k)];
      out[static_cast<std::int64_t>(f) * config.num_bins + m] =
          static_cast<float>(e > config.floor ? std::log(e) : log_floor);
    }
  }
  return out;
}

Tensor<float> instance_norm(const Tensor<float>& features, float eps) {
  NoGradGuard no_grad;
  return instance_norm(Var<float>::constant(features), eps).value();
}

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

std::uint32_t le32(const std::string& b, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(b[at + i])) << (8 * i);
  return v;
}

std::uint16_t le16(const std::string& b, std::size_t at) {
  return static_cast<std::uint16_t>(static_cast<unsigned char>(b[at]) | (static_cast<unsigned char>(b[at + 1]) << 8));
}

void put(std::string& out, std::uint32_t v, int width) {
  for (int i = 0; i < width; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

}  // namespace

Waveform read_wav(const std::string& path) {
  const std::string b = slurp(path);
  auto fail = [&](const std::string& msg) -> void { throw FormatError(path + ": " + msg); };
  if (b.size() < 12 || b.compare(0, 4, "RIFF") != 0 || b.compare(8, 4, "WAVE") != 0) fail("not a RIFF/WAVE file");
  std::size_t pos = 12;
  bool have_fmt = false;
  Waveform wave;
  while (pos + 8 <= b.size()) {
    const std::string id = b.substr(pos, 4);
    const std::size_t len = le32(b, pos + 4);
    const std::size_t body = pos + 8;
    if (len > b.size() - body) fail("truncated '" + id + "' chunk");
    if (id == "fmt ") {
      if (len < 16) fail("fmt chunk too short");
      const int format = le16(b, body);
      const int channels = le16(b, body + 2);
      const int bits = le16(b, body + 14);
      if (format != 1) fail("unsupported encoding " + std::to_string(format) + " (need PCM)");
      if (channels != 1) fail("expected mono, got " + std::to_string(channels) + " channels");
      if (bits != 16) fail("expected 16-bit samples, got " + std::to_string(bits));
      wave.sample_rate = static_cast<int>(le32(b, body + 4));
      if (wave.sample_rate <= 0) fail("invalid sample rate");
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) fail("data chunk before fmt chunk");
      const std::size_t count = len / 2;
      wave.samples.resize(count);
      for (std::size_t i = 0; i < count; ++i)
        wave.samples[i] = static_cast<float>(static_cast<std::int16_t>(le16(b, body + 2 * i))) / 32768.0f;
      return wave;
    }
    pos = body + len + (len & 1);
  }
  fail(have_fmt ? "missing data chunk" : "missing fmt chunk");
  return wave;
}

void write_wav(const std::string& path, const Waveform& wave) {
  const auto data_bytes = static_cast<std::uint32_t>(wave.samples.size() * 2);
  std::string out = "RIFF";
  put(out, 36 + data_bytes, 4);
  out += "WAVEfmt ";
  put(out, 16, 4);
  put(out, 1, 2);  // PCM
  put(out, 1, 2);  // mono
  put(out, static_cast<std::uint32_t>(wave.sample_rate), 4);
  put(out, static_cast<std::uint32_t>(wave.sample_rate) * 2, 4);
  put(out, 2, 2);
  put(out, 16, 2);
  out += "data";
  put(out, data_bytes, 4);
  for (float s : wave.samples) {
    const float clamped = std::clamp(s, -1.0f, 1.0f);
    const auto q = static_cast<std::int16_t>(std::lround(std::min(clamped * 32768.0f, 32767.0f)));
    put(out, static_cast<std::uint16_t>(q), 2);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("write to '" + path + "' failed");
}

Waveform read_raw_float32(const std::string& path, int sample_rate) {
  const std::string b = slurp(path);
  if (b.size() % 4 != 0)
    throw FormatError(path + ": raw float32 stream length " + std::to_string(b.size()) + " is not a multiple of 4");
  Waveform wave;
  wave.sample_rate = sample_rate;
  wave.samples.resize(b.size() / 4);
  for (std::size_t i = 0; i < wave.samples.size(); ++i) {
    const std::uint32_t bits = le32(b, 4 * i);
    std::memcpy(&wave.samples[i], &bits, 4);
  }
  return wave;
}

}  // namespace eres2net
