// Copyright 2026 The eres2net-cpp Authors
// Licensed under the Apache License, Version 2.0

#ifndef ERES2NET_KERNELS_H_
#define ERES2NET_KERNELS_H_

// Dense compute kernels. The top-level functions are OpenMP-parallel; the
// `serial` namespace holds straightforward single-threaded references used by
// the tests and the benchmark. Every parallel kernel assigns each output
// element to exactly one thread and sums in a fixed order, so results do not
// depend on the thread count.

#include <vector>

namespace eres2net::kernels {

struct ConvGeometry {
  int batch = 1;
  int in_channels = 1;
  int in_height = 1;  // frequency
  int in_width = 1;   // time
  int out_channels = 1;
  int kernel_h = 1;
  int kernel_w = 1;
  int stride_h = 1;
  int stride_w = 1;
  int pad_h = 0;
  int pad_w = 0;

  int out_height() const { return (in_height + 2 * pad_h - kernel_h) / stride_h + 1; }
  int out_width() const { return (in_width + 2 * pad_w - kernel_w) / stride_w + 1; }
  int patch_size() const { return in_channels * kernel_h * kernel_w; }
};

/// C[M,N] (+)= A[M,K] * B[K,N]
template <typename T>
void gemm_nn(int m, int n, int k, const T* a, const T* b, T* c, bool accumulate);

/// C[M,N] (+)= A[K,M]^T * B[K,N]
template <typename T>
void gemm_tn(int m, int n, int k, const T* a, const T* b, T* c, bool accumulate);

/// C[M,N] (+)= A[M,K] * B[N,K]^T
template <typename T>
void gemm_nt(int m, int n, int k, const T* a, const T* b, T* c, bool accumulate);

/// Unfolds one (C,H,W) image into a [C*kh*kw, OH*OW] column matrix.
template <typename T>
void im2col(const ConvGeometry& g, const T* image, T* columns);

/// Adjoint of im2col: scatters columns back into an image, accumulating.
template <typename T>
void col2im(const ConvGeometry& g, const T* columns, T* image);

/// Cross-correlation, no bias. input [N,Cin,H,W], weight [Cout,Cin,kh,kw].
template <typename T>
void conv2d_forward(const ConvGeometry& g, const T* input, const T* weight, T* output);

/// Gradients of conv2d_forward. `grad_input` / `grad_weight` may be null and
/// are accumulated into when given.
template <typename T>
void conv2d_backward(const ConvGeometry& g, const T* input, const T* weight, const T* grad_output,
                     T* grad_input, T* grad_weight);

/// Per-channel sum and sum of squares over (batch, spatial) of an NCHW map.
template <typename T>
void channel_moments(int batch, int channels, int spatial, const T* x, double* sum, double* sum_sq);

namespace serial {

template <typename T>
void gemm_nn(int m, int n, int k, const T* a, const T* b, T* c, bool accumulate);

/// Direct nested-loop convolution, same contract as kernels::conv2d_forward.
template <typename T>
void conv2d_forward(const ConvGeometry& g, const T* input, const T* weight, T* output);

template <typename T>
void conv2d_backward(const ConvGeometry& g, const T* input, const T* weight, const T* grad_output,
                     T* grad_input, T* grad_weight);

}  // namespace serial

/// Sets the OpenMP thread count; 0 keeps the runtime default. Returns the
/// count in effect.
int set_num_threads(int threads);

}  // namespace eres2net::kernels

#endif  // ERES2NET_KERNELS_H_
