// Copyright 2026 The eres2net-cpp Authors
// Licensed under the Apache License, Version 2.0

#ifndef ERES2NET_TESTS_ORACLES_H_
#define ERES2NET_TESTS_ORACLES_H_

// Scalar reference implementations written directly from the defining
// formulas. They touch only Tensor storage and never call library ops, so
// agreement with the library is evidence rather than tautology.

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "eres2net/param_store.h"
#include "eres2net/tensor.h"

namespace oracle {

using eres2net::ParamStore;
using eres2net::Shape;
using Map = eres2net::Tensor<double>;

inline Map random_map(const Shape& dims, std::mt19937_64& rng, double stddev = 1.0) {
  std::normal_distribution<double> normal(0.0, stddev);
  Map t(dims);
  for (auto& v : t.data()) v = normal(rng);
  return t;
}

// Moves BN scales and shifts off 1/0 so tests see a generic point.
inline void perturb_norms(ParamStore<double>& store, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  for (const auto& e : store.entries()) {
    if (e.kind != eres2net::ParamKind::kNorm) continue;
    const bool gamma = e.name.ends_with("gamma");
    for (auto& v : store.value(e.name).data()) v = gamma ? 1.0 + 0.3 * normal(rng) : 0.2 * normal(rng);
  }
}

inline double max_abs_diff(const Map& a, const Map& b) {
  if (a.dims() != b.dims()) return INFINITY;
  double m = 0;
  for (std::int64_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Cross-correlation with zero padding, weight [Cout,Cin,kh,kw].
inline Map conv(const Map& x, const Map& w, int stride, int pad) {
  const int n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const int oh = (h + 2 * pad - kh) / stride + 1, ow = (wd + 2 * pad - kw) / stride + 1;
  Map y = Map::feature_map(n, cout, oh, ow);
  for (int b = 0; b < n; ++b)
    for (int co = 0; co < cout; ++co)
      for (int i = 0; i < oh; ++i)
        for (int j = 0; j < ow; ++j) {
          double acc = 0;
          for (int ci = 0; ci < cin; ++ci)
            for (int u = 0; u < kh; ++u)
              for (int v = 0; v < kw; ++v) {
                const int r = i * stride - pad + u, c = j * stride - pad + v;
                if (r < 0 || r >= h || c < 0 || c >= wd) continue;
                acc += x.at(b, ci, r, c) * w.at(co, ci, u, v);
              }
          y.at(b, co, i, j) = acc;
        }
  return y;
}

// Training-mode BN: per-channel batch mean and biased variance.
inline Map bn_train(const Map& x, const Map& gamma, const Map& beta, double eps = 1e-5) {
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Map y(x.dims());
  for (int ch = 0; ch < c; ++ch) {
    double sum = 0, count = double(n) * h * w;
    for (int b = 0; b < n; ++b)
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) sum += x.at(b, ch, i, j);
    const double mean = sum / count;
    double ss = 0;
    for (int b = 0; b < n; ++b)
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) ss += (x.at(b, ch, i, j) - mean) * (x.at(b, ch, i, j) - mean);
    const double inv = 1.0 / std::sqrt(ss / count + eps);
    for (int b = 0; b < n; ++b)
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) y.at(b, ch, i, j) = gamma[ch] * (x.at(b, ch, i, j) - mean) * inv + beta[ch];
  }
  return y;
}

inline Map bn_eval(const Map& x, const Map& gamma, const Map& beta, const Map& mean, const Map& var,
                   double eps = 1e-5) {
  Map y(x.dims());
  for (int b = 0; b < x.dim(0); ++b)
    for (int ch = 0; ch < x.dim(1); ++ch)
      for (int i = 0; i < x.dim(2); ++i)
        for (int j = 0; j < x.dim(3); ++j)
          y.at(b, ch, i, j) = gamma[ch] * (x.at(b, ch, i, j) - mean[ch]) / std::sqrt(var[ch] + eps) + beta[ch];
  return y;
}

template <typename F>
Map map(const Map& x, F f) {
  Map y(x.dims());
  for (std::int64_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  return y;
}
inline Map relu(const Map& x) { return map(x, [](double v) { return v > 0 ? v : 0.0; }); }
inline Map silu(const Map& x) { return map(x, [](double v) { return v / (1 + std::exp(-v)); }); }
inline Map tanh(const Map& x) { return map(x, [](double v) { return std::tanh(v); }); }

inline Map add(const Map& a, const Map& b) {
  Map y(a.dims());
  for (std::int64_t i = 0; i < a.size(); ++i) y[i] = a[i] + b[i];
  return y;
}

// Channels [from, from + count).
inline Map channels(const Map& x, int from, int count) {
  Map y = Map::feature_map(x.dim(0), count, x.dim(2), x.dim(3));
  for (int b = 0; b < x.dim(0); ++b)
    for (int c = 0; c < count; ++c)
      for (int i = 0; i < x.dim(2); ++i)
        for (int j = 0; j < x.dim(3); ++j) y.at(b, c, i, j) = x.at(b, from + c, i, j);
  return y;
}

inline Map concat(const std::vector<Map>& parts) {
  int total = 0;
  for (const auto& p : parts) total += p.dim(1);
  const Map& f = parts.front();
  Map y = Map::feature_map(f.dim(0), total, f.dim(2), f.dim(3));
  int off = 0;
  for (const auto& p : parts) {
    for (int b = 0; b < p.dim(0); ++b)
      for (int c = 0; c < p.dim(1); ++c)
        for (int i = 0; i < p.dim(2); ++i)
          for (int j = 0; j < p.dim(3); ++j) y.at(b, off + c, i, j) = p.at(b, c, i, j);
    off += p.dim(1);
  }
  return y;
}

// Conv -> train-mode BN, reading "<prefix>/conv" and "<prefix>/bn/*".
inline Map conv_bn(const Map& x, ParamStore<double>& s, const std::string& prefix, int stride, int pad) {
  return bn_train(conv(x, s.value(prefix + "/conv"), stride, pad), s.value(prefix + "/bn/gamma"),
                  s.value(prefix + "/bn/beta"));
}

// Attentional fusion: U = tanh(BN(W2 SiLU(BN(W1 [a;b])))), (1+U)a + (1-U)b.
inline Map aff_weights(const Map& a, const Map& b, ParamStore<double>& s, const std::string& p) {
  Map h = bn_train(conv(concat({a, b}), s.value(p + "/w1"), 1, 0), s.value(p + "/bn1/gamma"),
                   s.value(p + "/bn1/beta"));
  h = bn_train(conv(silu(h), s.value(p + "/w2"), 1, 0), s.value(p + "/bn2/gamma"), s.value(p + "/bn2/beta"));
  return tanh(h);
}

inline Map aff(const Map& a, const Map& b, ParamStore<double>& s, const std::string& p) {
  const Map u = aff_weights(a, b, s, p);
  Map y(a.dims());
  for (std::int64_t i = 0; i < a.size(); ++i) y[i] = (1 + u[i]) * a[i] + (1 - u[i]) * b[i];
  return y;
}

// Hierarchical residual block. `lff` selects attentional merging of adjacent
// branches (y1 = K1(x1), yi = Ki(AFF(xi, y(i-1)))) over the additive form
// (y1 = x1, y2 = K2(x2), yi = Ki(xi + y(i-1))).
inline Map block(const Map& x, ParamStore<double>& s, const std::string& p, int scale, int stride, bool lff,
                 bool projection) {
  const Map r = relu(conv_bn(x, s, p + "/reduce", stride, 0));
  const int w = r.dim(1) / scale;
  std::vector<Map> ys;
  for (int i = 1; i <= scale; ++i) {
    const Map xi = channels(r, (i - 1) * w, w);
    const std::string k = p + "/k" + std::to_string(i);
    if (!lff) {
      if (i == 1) ys.push_back(xi);
      else if (i == 2) ys.push_back(relu(conv_bn(xi, s, k, 1, 1)));
      else ys.push_back(relu(conv_bn(add(xi, ys.back()), s, k, 1, 1)));
    } else {
      const Map in = i == 1 ? xi : aff(xi, ys.back(), s, p + "/aff" + std::to_string(i));
      ys.push_back(relu(conv_bn(in, s, k, 1, 1)));
    }
  }
  const Map out = conv_bn(concat(ys), s, p + "/expand", 1, 0);
  const Map shortcut = projection ? conv_bn(x, s, p + "/shortcut", stride, 0) : x;
  return relu(add(out, shortcut));
}

// Bottom-up pathway: F1 = S1, Fj = AFF(BN(conv3x3/2(F(j-1))), Sj).
inline Map gff(const std::vector<Map>& stages, ParamStore<double>& s) {
  Map fused = stages[0];
  for (int j = 2; j <= 4; ++j) {
    const Map down = conv_bn(fused, s, "gff/down" + std::to_string(j), 2, 1);
    fused = aff(down, stages[static_cast<std::size_t>(j - 1)], s, "gff/aff" + std::to_string(j));
  }
  return fused;
}

// [B,C,F,T] -> [B, 2CF]: means then population stds over time.
inline Map stats_pool(const Map& x, double eps = 1e-8) {
  const int n = x.dim(0), c = x.dim(1), f = x.dim(2), t = x.dim(3);
  Map y({n, 2 * c * f});
  for (int b = 0; b < n; ++b)
    for (int ch = 0; ch < c; ++ch)
      for (int k = 0; k < f; ++k) {
        double sum = 0;
        for (int j = 0; j < t; ++j) sum += x.at(b, ch, k, j);
        const double mean = sum / t;
        double ss = 0;
        for (int j = 0; j < t; ++j) ss += (x.at(b, ch, k, j) - mean) * (x.at(b, ch, k, j) - mean);
        const int row = ch * f + k;
        y[static_cast<std::int64_t>(b) * 2 * c * f + row] = mean;
        y[static_cast<std::int64_t>(b) * 2 * c * f + c * f + row] = std::sqrt(ss / t + eps);
      }
  return y;
}

}  // namespace oracle

#endif  // ERES2NET_TESTS_ORACLES_H_
