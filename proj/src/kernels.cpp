// Copyright 2026 The eres2net-cpp Authors
// Licensed under the Apache License, Version 2.0

#include "eres2net/kernels.h"

#include <omp.h>

#include <algorithm>
#include <cstring>
#include <vector>

namespace eres2net::kernels {

namespace {

// Register tile: kTileRows rows of C by one 256-byte strip of columns.
constexpr int kTileRows = 4;
template <typename T>
constexpr int kTileCols = 256 / sizeof(T);

template <typename T>
void gemm_tile_full(int n, int k, const T* a, const T* b, T* c, int i0, int j0, bool accumulate) {
  constexpr int kCols = kTileCols<T>;
  T acc[kTileRows][kCols] = {};
  for (int p = 0; p < k; ++p) {
    const T* brow = b + static_cast<std::size_t>(p) * n + j0;
    for (int r = 0; r < kTileRows; ++r) {
      const T av = a[static_cast<std::size_t>(i0 + r) * k + p];
#pragma omp simd
      for (int j = 0; j < kCols; ++j) acc[r][j] += av * brow[j];
    }
  }
  for (int r = 0; r < kTileRows; ++r) {
    T* crow = c + static_cast<std::size_t>(i0 + r) * n + j0;
    if (accumulate) {
      for (int j = 0; j < kCols; ++j) crow[j] += acc[r][j];
    } else {
      for (int j = 0; j < kCols; ++j) crow[j] = acc[r][j];
    }
  }
}

template <typename T>
void gemm_tile_edge(int n, int k, const T* a, const T* b, T* c, int i0, int i1, int j0, int j1,
                    bool accumulate) {
  constexpr int kCols = kTileCols<T>;
  T acc[kCols];
  const int width = j1 - j0;
  for (int i = i0; i < i1; ++i) {
    std::fill(acc, acc + width, T(0));
    for (int p = 0; p < k; ++p) {
      const T av = a[static_cast<std::size_t>(i) * k + p];
      const T* brow = b + static_cast<std::size_t>(p) * n + j0;
#pragma omp simd
      for (int j = 0; j < width; ++j) acc[j] += av * brow[j];
    }
    T* crow = c + static_cast<std::size_t>(i) * n + j0;
    for (int j = 0; j < width; ++j) crow[j] = accumulate ? crow[j] + acc[j] : acc[j];
  }
}

}  // namespace

template <typename T>
void gemm_nn(int m, int n, int k, const T* a, const T* b, T* c, bool accumulate) {
  constexpr int kCols = kTileCols<T>;
  const int row_tiles = (m + kTileRows - 1) / kTileRows;
  const int col_tiles = (n + kCols - 1) / kCols;
  const int tiles = row_tiles * col_tiles;
#pragma omp parallel for schedule(static) if (static_cast<long>(m) * n * k > 32768)
  for (int t = 0; t < tiles; ++t) {
    const int i0 = (t / col_tiles) * kTileRows;
    const int j0 = (t % col_tiles) * kCols;
    const int i1 = std::min(m, i0 + kTileRows);
    const int j1 = std::min(n, j0 + kCols);
    if (i1 - i0 == kTileRows && j1 - j0 == kCols) {
      gemm_tile_full(n, k, a, b, c, i0, j0, accumulate);
    } else {
      gemm_tile_edge(n, k, a, b, c, i0, i1, j0, j1, accumulate);
    }
  }
}

template <typename T>
void gemm_tn(int m, int n, int k, const T* a, const T* b, T* c, bool accumulate) {
  std::vector<T> at(static_cast<std::size_t>(m) * k);
  for (int p = 0; p < k; ++p)
    for (int i = 0; i < m; ++i) at[static_cast<std::size_t>(i) * k + p] = a[static_cast<std::size_t>(p) * m + i];
  gemm_nn(m, n, k, at.data(), b, c, accumulate);
}

template <typename T>
void gemm_nt(int m, int n, int k, const T* a, const T* b, T* c, bool accumulate) {
  constexpr int kBlock = 4;
  const int col_blocks = (n + kBlock - 1) / kBlock;
  const int tasks = m * col_blocks;
#pragma omp parallel for schedule(static) if (static_cast<long>(m) * n * k > 32768)
  for (int t = 0; t < tasks; ++t) {
    const int i = t / col_blocks;
    const int j0 = (t % col_blocks) * kBlock;
    const T* arow = a + static_cast<std::size_t>(i) * k;
    T* crow = c + static_cast<std::size_t>(i) * n;
    if (j0 + kBlock <= n) {
      const T* b0 = b + static_cast<std::size_t>(j0) * k;
      const T* b1 = b0 + k;
      const T* b2 = b1 + k;
      const T* b3 = b2 + k;
      T s0 = 0, s1 = 0, s2 = 0, s3 = 0;
#pragma omp simd reduction(+ : s0, s1, s2, s3)
      for (int p = 0; p < k; ++p) {
        s0 += arow[p] * b0[p];
        s1 += arow[p] * b1[p];
        s2 += arow[p] * b2[p];
        s3 += arow[p] * b3[p];
      }
      const T sums[kBlock] = {s0, s1, s2, s3};
      for (int j = 0; j < kBlock; ++j) crow[j0 + j] = accumulate ? crow[j0 + j] + sums[j] : sums[j];
    } else {
      for (int j = j0; j < n; ++j) {
        const T* brow = b + static_cast<std::size_t>(j) * k;
        T s = 0;
#pragma omp simd reduction(+ : s)
        for (int p = 0; p < k; ++p) s += arow[p] * brow[p];
        crow[j] = accumulate ? crow[j] + s : s;
      }
    }
  }
}

template <typename T>
void im2col(const ConvGeometry& g, const T* image, T* columns) {
  const int oh = g.out_height();
  const int ow = g.out_width();
  const int rows = g.patch_size();
#pragma omp parallel for schedule(static) if (rows * oh * ow > 32768)
  for (int row = 0; row < rows; ++row) {
    const int kw = row % g.kernel_w;
    const int kh = (row / g.kernel_w) % g.kernel_h;
    const int ci = row / (g.kernel_w * g.kernel_h);
    const T* plane = image + static_cast<std::size_t>(ci) * g.in_height * g.in_width;
    T* out = columns + static_cast<std::size_t>(row) * oh * ow;
    for (int y = 0; y < oh; ++y) {
      const int iy = y * g.stride_h - g.pad_h + kh;
      T* orow = out + static_cast<std::size_t>(y) * ow;
      if (iy < 0 || iy >= g.in_height) {
        std::fill(orow, orow + ow, T(0));
        continue;
      }
      const T* irow = plane + static_cast<std::size_t>(iy) * g.in_width;
      for (int x = 0; x < ow; ++x) {
        const int ix = x * g.stride_w - g.pad_w + kw;
        orow[x] = (ix >= 0 && ix < g.in_width) ? irow[ix] : T(0);
      }
    }
  }
}

template <typename T>
void col2im(const ConvGeometry& g, const T* columns, T* image) {
  const int oh = g.out_height();
  const int ow = g.out_width();
  const int kk = g.kernel_h * g.kernel_w;
  // One thread per input channel; the channel's kernel taps are summed in a
  // fixed order.
#pragma omp parallel for schedule(static) if (g.in_channels * kk * oh * ow > 32768)
  for (int ci = 0; ci < g.in_channels; ++ci) {
    T* plane = image + static_cast<std::size_t>(ci) * g.in_height * g.in_width;
    for (int tap = 0; tap < kk; ++tap) {
      const int kh = tap / g.kernel_w;
      const int kw = tap % g.kernel_w;
      const T* col = columns + static_cast<std::size_t>(ci * kk + tap) * oh * ow;
      for (int y = 0; y < oh; ++y) {
        const int iy = y * g.stride_h - g.pad_h + kh;
        if (iy < 0 || iy >= g.in_height) continue;
        T* irow = plane + static_cast<std::size_t>(iy) * g.in_width;
        const T* crow = col + static_cast<std::size_t>(y) * ow;
        for (int x = 0; x < ow; ++x) {
          const int ix = x * g.stride_w - g.pad_w + kw;
          if (ix >= 0 && ix < g.in_width) irow[ix] += crow[x];
        }
      }
    }
  }
}

namespace {

bool is_pointwise(const ConvGeometry& g) {
  return g.kernel_h == 1 && g.kernel_w == 1 && g.stride_h == 1 && g.stride_w == 1 && g.pad_h == 0 &&
         g.pad_w == 0;
}

}  // namespace

template <typename T>
void conv2d_forward(const ConvGeometry& g, const T* input, const T* weight, T* output) {
  const int positions = g.out_height() * g.out_width();
  const int patch = g.patch_size();
  const std::size_t in_stride = static_cast<std::size_t>(g.in_channels) * g.in_height * g.in_width;
  const std::size_t out_stride = static_cast<std::size_t>(g.out_channels) * positions;
  std::vector<T> columns;
  if (!is_pointwise(g)) columns.resize(static_cast<std::size_t>(patch) * positions);
  for (int n = 0; n < g.batch; ++n) {
    const T* x = input + n * in_stride;
    const T* cols = x;
    if (!is_pointwise(g)) {
      im2col(g, x, columns.data());
      cols = columns.data();
    }
    gemm_nn(g.out_channels, positions, patch, weight, cols, output + n * out_stride, false);
  }
}

template <typename T>
void conv2d_backward(const ConvGeometry& g, const T* input, const T* weight, const T* grad_output,
                     T* grad_input, T* grad_weight) {
  const int positions = g.out_height() * g.out_width();
  const int patch = g.patch_size();
  const std::size_t in_stride = static_cast<std::size_t>(g.in_channels) * g.in_height * g.in_width;
  const std::size_t out_stride = static_cast<std::size_t>(g.out_channels) * positions;
  const bool pointwise = is_pointwise(g);
  std::vector<T> columns;
  std::vector<T> grad_columns;
  if (!pointwise) {
    columns.resize(static_cast<std::size_t>(patch) * positions);
    grad_columns.resize(columns.size());
  }
  for (int n = 0; n < g.batch; ++n) {
    const T* x = input + n * in_stride;
    const T* dy = grad_output + n * out_stride;
    if (grad_weight) {
      const T* cols = x;
      if (!pointwise) {
        im2col(g, x, columns.data());
        cols = columns.data();
      }
      gemm_nt(g.out_channels, patch, positions, dy, cols, grad_weight, true);
    }
    if (grad_input) {
      if (pointwise) {
        gemm_tn(patch, positions, g.out_channels, weight, dy, grad_input + n * in_stride, true);
      } else {
        gemm_tn(patch, positions, g.out_channels, weight, dy, grad_columns.data(), false);
        col2im(g, grad_columns.data(), grad_input + n * in_stride);
      }
    }
  }
}

template <typename T>
void channel_moments(int batch, int channels, int spatial, const T* x, double* sum, double* sum_sq) {
#pragma omp parallel for schedule(static) if (static_cast<long>(batch) * channels * spatial > 65536)
  for (int c = 0; c < channels; ++c) {
    double s = 0.0;
    double ss = 0.0;
    for (int n = 0; n < batch; ++n) {
      const T* p = x + (static_cast<std::size_t>(n) * channels + c) * spatial;
      for (int i = 0; i < spatial; ++i) {
        const double v = p[i];
        s += v;
        ss += v * v;
      }
    }
    sum[c] = s;
    sum_sq[c] = ss;
  }
}

namespace serial {

template <typename T>
void gemm_nn(int m, int n, int k, const T* a, const T* b, T* c, bool accumulate) {
  for (int i = 0; i < m; ++i) {
    T* crow = c + static_cast<std::size_t>(i) * n;
    if (!accumulate) std::fill(crow, crow + n, T(0));
    for (int p = 0; p < k; ++p) {
      const T av = a[static_cast<std::size_t>(i) * k + p];
      const T* brow = b + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
void conv2d_forward(const ConvGeometry& g, const T* input, const T* weight, T* output) {
  const int oh = g.out_height();
  const int ow = g.out_width();
  for (int n = 0; n < g.batch; ++n)
    for (int co = 0; co < g.out_channels; ++co)
      for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
          T acc = 0;
          for (int ci = 0; ci < g.in_channels; ++ci)
            for (int kh = 0; kh < g.kernel_h; ++kh) {
              const int iy = y * g.stride_h - g.pad_h + kh;
              if (iy < 0 || iy >= g.in_height) continue;
              for (int kw = 0; kw < g.kernel_w; ++kw) {
                const int ix = x * g.stride_w - g.pad_w + kw;
                if (ix < 0 || ix >= g.in_width) continue;
                acc += weight[((static_cast<std::size_t>(co) * g.in_channels + ci) * g.kernel_h + kh) * g.kernel_w + kw] *
                       input[((static_cast<std::size_t>(n) * g.in_channels + ci) * g.in_height + iy) * g.in_width + ix];
              }
            }
          output[((static_cast<std::size_t>(n) * g.out_channels + co) * oh + y) * ow + x] = acc;
        }
}

template <typename T>
void conv2d_backward(const ConvGeometry& g, const T* input, const T* weight, const T* grad_output,
                     T* grad_input, T* grad_weight) {
  const int oh = g.out_height();
  const int ow = g.out_width();
  for (int n = 0; n < g.batch; ++n)
    for (int co = 0; co < g.out_channels; ++co)
      for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
          const T dy = grad_output[((static_cast<std::size_t>(n) * g.out_channels + co) * oh + y) * ow + x];
          for (int ci = 0; ci < g.in_channels; ++ci)
            for (int kh = 0; kh < g.kernel_h; ++kh) {
              const int iy = y * g.stride_h - g.pad_h + kh;
              if (iy < 0 || iy >= g.in_height) continue;
              for (int kw = 0; kw < g.kernel_w; ++kw) {
                const int ix = x * g.stride_w - g.pad_w + kw;
                if (ix < 0 || ix >= g.in_width) continue;
                const std::size_t wi = ((static_cast<std::size_t>(co) * g.in_channels + ci) * g.kernel_h + kh) * g.kernel_w + kw;
                const std::size_t xi = ((static_cast<std::size_t>(n) * g.in_channels + ci) * g.in_height + iy) * g.in_width + ix;
                if (grad_weight) grad_weight[wi] += dy * input[xi];
                if (grad_input) grad_input[xi] += dy * weight[wi];
              }
            }
        }
}

}  // namespace serial

int set_num_threads(int threads) {
  if (threads > 0) omp_set_num_threads(threads);
  return omp_get_max_threads();
}

#define ERES2NET_INSTANTIATE(T)                                                                    \
  template void gemm_nn<T>(int, int, int, const T*, const T*, T*, bool);                           \
  template void gemm_tn<T>(int, int, int, const T*, const T*, T*, bool);                           \
  template void gemm_nt<T>(int, int, int, const T*, const T*, T*, bool);                           \
  template void im2col<T>(const ConvGeometry&, const T*, T*);                                      \
  template void col2im<T>(const ConvGeometry&, const T*, T*);                                      \
  template void conv2d_forward<T>(const ConvGeometry&, const T*, const T*, T*);                    \
  template void conv2d_backward<T>(const ConvGeometry&, const T*, const T*, const T*, T*, T*);     \
  template void channel_moments<T>(int, int, int, const T*, double*, double*);                     \
  template void serial::gemm_nn<T>(int, int, int, const T*, const T*, T*, bool);                   \
  template void serial::conv2d_forward<T>(const ConvGeometry&, const T*, const T*, T*);            \
  template void serial::conv2d_backward<T>(const ConvGeometry&, const T*, const T*, const T*, T*, T*);

ERES2NET_INSTANTIATE(float)
ERES2NET_INSTANTIATE(double)

#undef ERES2NET_INSTANTIATE

}  // namespace eres2net::kernels
