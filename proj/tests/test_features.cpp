// Copyright 2026 The eres2net-cpp Authors
// Licensed under the Apache License, Version 2.0

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

#include "eres2net/features.h"

using namespace eres2net;

namespace {

constexpr double kPi = std::numbers::pi;

double mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }

// Log mel energies of one frame by a direct O(N^2) DFT and explicit triangles.
std::vector<double> reference_frame(const float* x, int window, int fft, int sr, int bins, double low, double high) {
  double mean = 0;
  for (int i = 0; i < window; ++i) mean += x[i];
  mean /= window;
  std::vector<double> frame(static_cast<std::size_t>(fft), 0.0);
  for (int i = 0; i < window; ++i)
    frame[static_cast<std::size_t>(i)] = (x[i] - mean) * (0.54 - 0.46 * std::cos(2 * kPi * i / (window - 1)));
  std::vector<double> power(static_cast<std::size_t>(fft / 2 + 1));
  for (int k = 0; k <= fft / 2; ++k) {
    double re = 0, im = 0;
    for (int n = 0; n < fft; ++n) {
      re += frame[static_cast<std::size_t>(n)] * std::cos(2 * kPi * k * n / fft);
      im -= frame[static_cast<std::size_t>(n)] * std::sin(2 * kPi * k * n / fft);
    }
    power[static_cast<std::size_t>(k)] = re * re + im * im;
  }
  std::vector<double> out(static_cast<std::size_t>(bins));
  const double step = (mel(high) - mel(low)) / (bins + 1);
  for (int m = 0; m < bins; ++m) {
    const double l = mel(low) + m * step, c = l + step, r = c + step;
    double e = 0;
    for (int k = 0; k <= fft / 2; ++k) {
      const double v = mel(static_cast<double>(k) * sr / fft);
      const double w = v > l && v <= c ? (v - l) / (c - l) : (v > c && v < r ? (r - v) / (r - c) : 0.0);
      e += w * power[static_cast<std::size_t>(k)];
    }
    out[static_cast<std::size_t>(m)] = std::log(std::max(e, 1e-10));
  }
  return out;
}

Waveform tone(double hz, double seconds, int sr = 16000, double amp = 0.5) {
  Waveform w;
  w.sample_rate = sr;
  w.samples.resize(static_cast<std::size_t>(seconds * sr));
  for (std::size_t i = 0; i < w.samples.size(); ++i)
    w.samples[i] = static_cast<float>(amp * std::sin(2 * kPi * hz * static_cast<double>(i) / sr));
  return w;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("eres2net_test_" + name)).string();
}

}  // namespace

TEST_CASE("framing: 25 ms windows every 10 ms without edge padding") {
  const FbankConfig c;
  CHECK(c.window_samples(16000) == 400);
  CHECK(c.shift_samples(16000) == 160);
  CHECK(num_frames(48000, 400, 160) == 298);
  CHECK(num_frames(16000, 400, 160) == 98);
  CHECK(num_frames(400, 400, 160) == 1);
  CHECK(num_frames(399, 400, 160) == 0);
  CHECK(fbank(tone(440, 3.0)).dims() == Shape{298, 80});
  Waveform short_wave;
  short_wave.samples.assign(100, 0.1f);
  CHECK_THROWS_AS(fbank(short_wave), ContractError);
}

TEST_CASE("HTK mel scale and its inverse") {
  CHECK(hz_to_mel(0.0) == 0.0);
  CHECK(hz_to_mel(700.0) == doctest::Approx(2595.0 * std::log10(2.0)));
  CHECK(hz_to_mel(1000.0) == doctest::Approx(1000.0).epsilon(1e-3));
  for (double hz : {20.0, 440.0, 3999.0, 8000.0}) CHECK(mel_to_hz(hz_to_mel(hz)) == doctest::Approx(hz));
}

TEST_CASE("mel filters are unit-peak triangles with increasing centers") {
  const FbankConfig c;
  const auto f = mel_filterbank(c, 16000);
  REQUIRE(f.size() == 80);
  REQUIRE(f[0].size() == 257);
  int previous_peak = -1;
  for (const auto& filter : f) {
    double peak = 0;
    int arg = 0;
    for (int k = 0; k < 257; ++k) {
      CHECK(filter[static_cast<std::size_t>(k)] >= 0.0);
      if (filter[static_cast<std::size_t>(k)] > peak) peak = filter[static_cast<std::size_t>(k)], arg = k;
    }
    CHECK(peak <= 1.0);
    CHECK(peak > 0.0);
    CHECK(arg >= previous_peak);
    previous_peak = arg;
  }
  FbankConfig bad;
  bad.num_bins = 0;
  CHECK_THROWS_AS(bad.validate(16000), ConfigError);
  bad = FbankConfig{};
  bad.low_freq = 9000;
  CHECK_THROWS_AS(bad.validate(16000), ConfigError);
}

TEST_CASE("fbank matches a direct DFT and explicit triangular filters") {
  std::mt19937_64 rng(1);
  std::normal_distribution<float> normal(0.f, 0.1f);
  Waveform w;
  w.samples.resize(2000);
  for (std::size_t i = 0; i < w.samples.size(); ++i)
    w.samples[i] = normal(rng) + 0.3f * static_cast<float>(std::sin(0.05 * static_cast<double>(i)));
  const Tensor<float> out = fbank(w);
  REQUIRE(out.dim(0) == num_frames(2000, 400, 160));
  for (int f : {0, 5, out.dim(0) - 1}) {
    const auto ref = reference_frame(w.samples.data() + f * 160, 400, 512, 16000, 80, 20.0, 8000.0);
    for (int m = 0; m < 80; ++m) CHECK(out[f * 80 + m] == doctest::Approx(ref[static_cast<std::size_t>(m)]).epsilon(1e-5));
  }
}

TEST_CASE("a 1 kHz tone peaks in the filter centered nearest 1 kHz") {
  const Tensor<float> out = fbank(tone(1000.0, 0.5));
  const auto filters = mel_filterbank(FbankConfig{}, 16000);
  int expected = 0;
  double best = 1e9;
  for (int m = 0; m < 80; ++m) {
    // Center bin = the unit peak of the triangle.
    int arg = 0;
    for (int k = 0; k < 257; ++k)
      if (filters[static_cast<std::size_t>(m)][static_cast<std::size_t>(k)] >
          filters[static_cast<std::size_t>(m)][static_cast<std::size_t>(arg)])
        arg = k;
    const double d = std::abs(arg * 16000.0 / 512 - 1000.0);
    if (d < best) best = d, expected = m;
  }
  for (int f = 0; f < out.dim(0); ++f) {
    int arg = 0;
    for (int m = 1; m < 80; ++m)
      if (out[f * 80 + m] > out[f * 80 + arg]) arg = m;
    CHECK(std::abs(arg - expected) <= 1);
  }
}

TEST_CASE("silence hits the log floor") {
  Waveform w;
  w.samples.assign(800, 0.25f);  // constant: removed as DC
  const Tensor<float> out = fbank(w);
  for (float v : out.data()) CHECK(v == doctest::Approx(std::log(1e-10)));
}

TEST_CASE("instance normalization gives zero-mean unit-std columns") {
  std::mt19937_64 rng(2);
  std::normal_distribution<float> normal(3.f, 2.f);
  Tensor<float> x({50, 4});
  for (auto& v : x.data()) v = normal(rng);
  const Tensor<float> y = instance_norm(x);
  for (int c = 0; c < 4; ++c) {
    double s = 0, q = 0;
    for (int t = 0; t < 50; ++t) s += y[t * 4 + c], q += double(y[t * 4 + c]) * y[t * 4 + c];
    CHECK(std::abs(s / 50) < 1e-5);
    CHECK(std::sqrt(q / 50) == doctest::Approx(1.0).epsilon(1e-4));
  }
}

TEST_CASE("wav files round-trip through 16-bit PCM and bad files are rejected") {
  const Waveform w = tone(300.0, 0.1, 8000, 0.7);
  const std::string path = temp_path("tone.wav");
  write_wav(path, w);
  const Waveform r = read_wav(path);
  CHECK(r.sample_rate == 8000);
  REQUIRE(r.samples.size() == w.samples.size());
  for (std::size_t i = 0; i < w.samples.size(); ++i) CHECK(std::abs(r.samples[i] - w.samples[i]) <= 1.0 / 32767);

  CHECK_THROWS_AS(read_wav(temp_path("missing.wav")), IoError);
  std::string bytes;
  {
    std::ifstream in(path, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  auto write_bytes = [&](const std::string& b) {
    std::ofstream out(path, std::ios::binary);
    out << b;
  };
  std::string bad = bytes;
  bad[0] = 'X';
  write_bytes(bad);
  CHECK_THROWS_AS(read_wav(path), FormatError);
  write_bytes(bytes.substr(0, 30));
  CHECK_THROWS_AS(read_wav(path), FormatError);
  bad = bytes;
  bad[22] = 2;  // two channels
  write_bytes(bad);
  CHECK_THROWS_AS(read_wav(path), FormatError);
  std::filesystem::remove(path);
}

TEST_CASE("raw float32 input") {
  const std::string path = temp_path("raw.f32");
  const float samples[3] = {0.5f, -0.25f, 1.0f};
  {
    std::ofstream out(path, std::ios::binary);
    out.write(reinterpret_cast<const char*>(samples), sizeof samples);
  }
  const Waveform w = read_raw_float32(path, 8000);
  CHECK(w.sample_rate == 8000);
  CHECK(w.samples == std::vector<float>{0.5f, -0.25f, 1.0f});
  {
    std::ofstream out(path, std::ios::binary | std::ios::app);
    out.put('x');
  }
  CHECK_THROWS_AS(read_raw_float32(path), FormatError);
  std::filesystem::remove(path);
}
