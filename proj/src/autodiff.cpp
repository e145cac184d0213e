// Copyright 2026 The eres2net-cpp Authors
// Licensed under the Apache License, Version 2.0

#include "eres2net/autodiff.h"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <unordered_set>

#include "eres2net/kernels.h"

namespace eres2net {

namespace {

thread_local bool g_grad_enabled = true;
thread_local KinkLog* g_kink_log = nullptr;

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

template <typename T>
Var<T> make_result(OpKind op, Tensor<T> value, std::vector<NodePtr<T>> inputs,
                   std::function<void(Node<T>&)> backward_fn) {
  auto node = std::make_shared<Node<T>>();
  node->op = op;
  node->value = std::move(value);
  const bool needs = g_grad_enabled &&
                     std::any_of(inputs.begin(), inputs.end(), [](const NodePtr<T>& n) { return n->requires_grad; });
  if (needs) {
    node->requires_grad = true;
    node->inputs = std::move(inputs);
    node->backward = std::move(backward_fn);
  }
  return Var<T>(std::move(node));
}

// Gradient slot of input i, or null when that input does not want one.
template <typename T>
T* input_grad(Node<T>& self, std::size_t i) {
  Node<T>& in = *self.inputs[i];
  return in.requires_grad ? in.grad_buffer().data().data() : nullptr;
}

template <typename T>
const Tensor<T>& input_value(const Node<T>& self, std::size_t i) {
  return self.inputs[i]->value;
}

void require_map(const Shape& dims, const std::string& what) { require_rank(dims, 4, what); }

}  // namespace

template <typename T>
Tensor<T>& Node<T>::grad_buffer() {
  if (grad.empty()) grad = Tensor<T>(value.dims());
  return grad;
}

template <typename T>
Var<T> Var<T>::constant(Tensor<T> value) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  return Var(std::move(node));
}

template <typename T>
Var<T> Var<T>::variable(Tensor<T> value) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->requires_grad = true;
  return Var(std::move(node));
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

KinkLog::KinkLog() : previous_(g_kink_log) { g_kink_log = this; }
KinkLog::~KinkLog() { g_kink_log = previous_; }
void KinkLog::record(std::uint8_t branch) {
  if (g_kink_log) g_kink_log->branches_.push_back(branch);
}
bool KinkLog::active() { return g_kink_log != nullptr; }

template <typename T>
void backward(const Var<T>& root) {
  if (!root.valid() || root.value().size() != 1)
    throw ContractError("backward: root must be a scalar, got dims " +
                        (root.valid() ? shape_string(root.dims()) : std::string("(null)")));
  if (!root.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{root.node(), 0}};
  visited.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node<T>* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->grad_buffer().fill(T(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }
  // Interior gradients are only scratch space; leaves keep theirs.
  for (Node<T>* node : order)
    if (!node->inputs.empty()) node->grad = Tensor<T>();
}

// ---------------------------------------------------------------------------

template <typename T>
Var<T> conv2d(const Var<T>& input, const Var<T>& kernel, Pair stride, Pair padding) {
  require_map(input.dims(), "conv2d input");
  require_map(kernel.dims(), "conv2d kernel");
  if (stride.h < 1 || stride.w < 1) throw ContractError("conv2d: stride must be >= 1");
  if (padding.h < 0 || padding.w < 0) throw ContractError("conv2d: padding must be >= 0");
  if (kernel.dim(1) != input.dim(1))
    throw ShapeError("conv2d: channel mismatch, kernel expects " + std::to_string(kernel.dim(1)) +
                     " input channels but input " + shape_string(input.dims()) + " has " +
                     std::to_string(input.dim(1)));
  kernels::ConvGeometry g{input.dim(0), input.dim(1),  input.dim(2), input.dim(3), kernel.dim(0), kernel.dim(2),
                          kernel.dim(3), stride.h,      stride.w,     padding.h,    padding.w};
  if (g.in_height + 2 * g.pad_h < g.kernel_h)
    throw ShapeError("conv2d: frequency axis " + std::to_string(g.in_height) + " smaller than kernel");
  if (g.in_width + 2 * g.pad_w < g.kernel_w)
    throw ShapeError("conv2d: time axis " + std::to_string(g.in_width) + " smaller than kernel");

  auto out = Tensor<T>::feature_map(g.batch, g.out_channels, g.out_height(), g.out_width());
  kernels::conv2d_forward(g, input.value().data().data(), kernel.value().data().data(), out.data().data());
  return make_result<T>(OpKind::kConv2d, std::move(out), {input.shared(), kernel.shared()}, [g](Node<T>& self) {
    kernels::conv2d_backward(g, input_value(self, 0).data().data(), input_value(self, 1).data().data(),
                             self.grad.data().data(), input_grad(self, 0), input_grad(self, 1));
  });
}

template <typename T>
Var<T> batch_norm(const Var<T>& input, BatchNormState<T>& state, BnMode mode) {
  require_map(input.dims(), "batch_norm input");
  const int n = input.dim(0), c = input.dim(1);
  const int spatial = input.dim(2) * input.dim(3);
  if (state.gamma.value().size() != c || state.beta.value().size() != c)
    throw ShapeError("batch_norm: channel mismatch, input has " + std::to_string(c) + " channels, state has " +
                     std::to_string(state.gamma.value().size()));
  if (!(state.eps > 0)) throw ContractError("batch_norm: eps must be positive");

  std::vector<T> mean(c), inv_std(c);
  if (mode == BnMode::kTrain) {
    std::vector<double> sum(c), sum_sq(c);
    kernels::channel_moments(n, c, spatial, input.value().data().data(), sum.data(), sum_sq.data());
    const double count = static_cast<double>(n) * spatial;
    for (int ch = 0; ch < c; ++ch) {
      const double mu = sum[ch] / count;
      const double var = std::max(0.0, sum_sq[ch] / count - mu * mu);
      mean[ch] = static_cast<T>(mu);
      inv_std[ch] = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(state.eps)));
      if (state.running_mean && state.running_var) {
        const double unbiased = count > 1 ? var * count / (count - 1) : var;
        T& rm = (*state.running_mean)[ch];
        T& rv = (*state.running_var)[ch];
        rm = static_cast<T>((1 - state.momentum) * rm + state.momentum * mu);
        rv = static_cast<T>((1 - state.momentum) * rv + state.momentum * unbiased);
      }
    }
  } else {
    if (!state.running_mean || !state.running_var)
      throw ContractError("batch_norm: eval mode requires running statistics");
    for (int ch = 0; ch < c; ++ch) {
      mean[ch] = (*state.running_mean)[ch];
      inv_std[ch] = T(1) / std::sqrt((*state.running_var)[ch] + state.eps);
    }
  }

  const T* x = input.value().data().data();
  const T* gamma = state.gamma.value().data().data();
  const T* beta = state.beta.value().data().data();
  Tensor<T> out(input.dims());
  out.set_axes(input.value().axes());
  T* y = out.data().data();
#pragma omp parallel for collapse(2) schedule(static) if (static_cast<long>(n) * c * spatial > 65536)
  for (int b = 0; b < n; ++b)
    for (int ch = 0; ch < c; ++ch) {
      const std::size_t base = (static_cast<std::size_t>(b) * c + ch) * spatial;
      const T scale = gamma[ch] * inv_std[ch];
      const T shift = beta[ch] - mean[ch] * scale;
      for (int i = 0; i < spatial; ++i) y[base + i] = x[base + i] * scale + shift;
    }

  const bool train = mode == BnMode::kTrain;
  return make_result<T>(
      OpKind::kBatchNorm, std::move(out), {input.shared(), state.gamma.shared(), state.beta.shared()},
      [n, c, spatial, train, mean = std::move(mean), inv_std = std::move(inv_std)](Node<T>& self) {
        const T* xv = input_value(self, 0).data().data();
        const T* gv = input_value(self, 1).data().data();
        const T* dy = self.grad.data().data();
        T* dx = input_grad(self, 0);
        T* dgamma = input_grad(self, 1);
        T* dbeta = input_grad(self, 2);
        const double count = static_cast<double>(n) * spatial;
#pragma omp parallel for schedule(static) if (static_cast<long>(n) * c * spatial > 65536)
        for (int ch = 0; ch < c; ++ch) {
          double sum_dy = 0, sum_dy_xhat = 0;
          for (int b = 0; b < n; ++b) {
            const std::size_t base = (static_cast<std::size_t>(b) * c + ch) * spatial;
            for (int i = 0; i < spatial; ++i) {
              const double xhat = (static_cast<double>(xv[base + i]) - mean[ch]) * inv_std[ch];
              sum_dy += dy[base + i];
              sum_dy_xhat += dy[base + i] * xhat;
            }
          }
          if (dgamma) dgamma[ch] += static_cast<T>(sum_dy_xhat);
          if (dbeta) dbeta[ch] += static_cast<T>(sum_dy);
          if (!dx) continue;
          const double k = static_cast<double>(gv[ch]) * inv_std[ch];
          for (int b = 0; b < n; ++b) {
            const std::size_t base = (static_cast<std::size_t>(b) * c + ch) * spatial;
            for (int i = 0; i < spatial; ++i) {
              if (train) {
                const double xhat = (static_cast<double>(xv[base + i]) - mean[ch]) * inv_std[ch];
                dx[base + i] += static_cast<T>(k * (dy[base + i] - sum_dy / count - xhat * sum_dy_xhat / count));
              } else {
                dx[base + i] += static_cast<T>(k * dy[base + i]);
              }
            }
          }
        }
      });
}

template <typename T>
Var<T> activation(const Var<T>& input, Activation kind) {
  const auto& xin = input.value();
  Tensor<T> out(xin.dims());
  out.set_axes(xin.axes());
  const std::int64_t size = xin.size();
  const T* x = xin.data().data();
  T* y = out.data().data();
  switch (kind) {
    case Activation::kRelu:
      for (std::int64_t i = 0; i < size; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
      if (KinkLog::active())
        for (std::int64_t i = 0; i < size; ++i) KinkLog::record(x[i] > T(0));
      break;
    case Activation::kSilu:
      for (std::int64_t i = 0; i < size; ++i) y[i] = x[i] / (T(1) + std::exp(-x[i]));
      break;
    case Activation::kTanh: {
      // Keep the range open even where tanh rounds to +-1.
      const T bound = std::nextafter(T(1), T(0));
      for (std::int64_t i = 0; i < size; ++i) y[i] = std::clamp(std::tanh(x[i]), -bound, bound);
      break;
    }
  }
  return make_result<T>(OpKind::kActivation, std::move(out), {input.shared()}, [kind, size](Node<T>& self) {
    T* dx = input_grad(self, 0);
    if (!dx) return;
    const T* x = input_value(self, 0).data().data();
    const T* y = self.value.data().data();
    const T* dy = self.grad.data().data();
    switch (kind) {
      case Activation::kRelu:
        for (std::int64_t i = 0; i < size; ++i) dx[i] += x[i] > T(0) ? dy[i] : T(0);
        break;
      case Activation::kSilu:
        for (std::int64_t i = 0; i < size; ++i) {
          const T s = T(1) / (T(1) + std::exp(-x[i]));
          dx[i] += dy[i] * s * (T(1) + x[i] * (T(1) - s));
        }
        break;
      case Activation::kTanh:
        for (std::int64_t i = 0; i < size; ++i) dx[i] += dy[i] * (T(1) - y[i] * y[i]);
        break;
    }
  });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_dims(a.dims(), b.dims(), "add");
  Tensor<T> out(a.dims());
  out.set_axes(a.value().axes());
  const std::int64_t size = out.size();
  for (std::int64_t i = 0; i < size; ++i) out[i] = a.value()[i] + b.value()[i];
  return make_result<T>(OpKind::kAdd, std::move(out), {a.shared(), b.shared()}, [size](Node<T>& self) {
    const T* dy = self.grad.data().data();
    for (std::size_t k = 0; k < 2; ++k)
      if (T* d = input_grad(self, k))
        for (std::int64_t i = 0; i < size; ++i) d[i] += dy[i];
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same_dims(a.dims(), b.dims(), "mul");
  Tensor<T> out(a.dims());
  out.set_axes(a.value().axes());
  const std::int64_t size = out.size();
  for (std::int64_t i = 0; i < size; ++i) out[i] = a.value()[i] * b.value()[i];
  return make_result<T>(OpKind::kMul, std::move(out), {a.shared(), b.shared()}, [size](Node<T>& self) {
    const T* dy = self.grad.data().data();
    const T* av = input_value(self, 0).data().data();
    const T* bv = input_value(self, 1).data().data();
    if (T* da = input_grad(self, 0))
      for (std::int64_t i = 0; i < size; ++i) da[i] += dy[i] * bv[i];
    if (T* db = input_grad(self, 1))
      for (std::int64_t i = 0; i < size; ++i) db[i] += dy[i] * av[i];
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T factor) {
  Tensor<T> out(a.dims());
  out.set_axes(a.value().axes());
  const std::int64_t size = out.size();
  for (std::int64_t i = 0; i < size; ++i) out[i] = a.value()[i] * factor;
  return make_result<T>(OpKind::kScale, std::move(out), {a.shared()}, [size, factor](Node<T>& self) {
    const T* dy = self.grad.data().data();
    if (T* da = input_grad(self, 0))
      for (std::int64_t i = 0; i < size; ++i) da[i] += dy[i] * factor;
  });
}

template <typename T>
Var<T> attention_merge(const Var<T>& u, const Var<T>& a, const Var<T>& b) {
  require_same_dims(a.dims(), b.dims(), "attention_merge inputs");
  require_same_dims(u.dims(), a.dims(), "attention_merge weights");
  Tensor<T> out(a.dims());
  out.set_axes(a.value().axes());
  const std::int64_t size = out.size();
  const T* uv = u.value().data().data();
  const T* av = a.value().data().data();
  const T* bv = b.value().data().data();
  T* y = out.data().data();
  for (std::int64_t i = 0; i < size; ++i) y[i] = (uv[i] + T(1)) * av[i] + (T(1) - uv[i]) * bv[i];
  return make_result<T>(OpKind::kAttentionMerge, std::move(out), {u.shared(), a.shared(), b.shared()},
                        [size](Node<T>& self) {
                          const T* dy = self.grad.data().data();
                          const T* uv = input_value(self, 0).data().data();
                          const T* av = input_value(self, 1).data().data();
                          const T* bv = input_value(self, 2).data().data();
                          if (T* du = input_grad(self, 0))
                            for (std::int64_t i = 0; i < size; ++i) du[i] += dy[i] * (av[i] - bv[i]);
                          if (T* da = input_grad(self, 1))
                            for (std::int64_t i = 0; i < size; ++i) da[i] += dy[i] * (uv[i] + T(1));
                          if (T* db = input_grad(self, 2))
                            for (std::int64_t i = 0; i < size; ++i) db[i] += dy[i] * (T(1) - uv[i]);
                        });
}

template <typename T>
std::vector<Var<T>> channel_split(const Var<T>& input, int parts) {
  require_map(input.dims(), "channel_split input");
  if (parts < 1) throw ConfigError("channel_split: parts must be >= 1");
  const int n = input.dim(0), c = input.dim(1);
  if (c % parts != 0)
    throw ConfigError("channel_split: " + std::to_string(c) + " channels not divisible into " +
                      std::to_string(parts) + " parts");
  if (parts == 1) return {input};
  const int part_c = c / parts;
  const std::size_t plane = static_cast<std::size_t>(input.dim(2)) * input.dim(3);
  const std::size_t chunk = part_c * plane;
  std::vector<Var<T>> result;
  result.reserve(parts);
  for (int p = 0; p < parts; ++p) {
    auto out = Tensor<T>::feature_map(n, part_c, input.dim(2), input.dim(3));
    for (int b = 0; b < n; ++b) {
      const T* src = input.value().data().data() + (static_cast<std::size_t>(b) * c + p * part_c) * plane;
      std::copy(src, src + chunk, out.data().data() + b * chunk);
    }
    result.push_back(make_result<T>(OpKind::kSplit, std::move(out), {input.shared()},
                                    [n, c, p, part_c, plane, chunk](Node<T>& self) {
                                      T* dx = input_grad(self, 0);
                                      if (!dx) return;
                                      const T* dy = self.grad.data().data();
                                      for (int b = 0; b < n; ++b) {
                                        T* dst = dx + (static_cast<std::size_t>(b) * c + p * part_c) * plane;
                                        const T* src = dy + b * chunk;
                                        for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
                                      }
                                    }));
  }
  return result;
}

template <typename T>
Var<T> channel_concat(std::span<const Var<T>> parts) {
  if (parts.empty()) throw ContractError("channel_concat: no inputs");
  require_map(parts[0].dims(), "channel_concat input");
  const int n = parts[0].dim(0), f = parts[0].dim(2), t = parts[0].dim(3);
  int total = 0;
  std::vector<int> channels;
  std::vector<NodePtr<T>> inputs;
  for (const auto& part : parts) {
    require_map(part.dims(), "channel_concat input");
    if (part.dim(0) != n || part.dim(2) != f || part.dim(3) != t)
      throw ShapeError("channel_concat: spatial mismatch " + shape_string(parts[0].dims()) + " vs " +
                       shape_string(part.dims()));
    channels.push_back(part.dim(1));
    total += part.dim(1);
    inputs.push_back(part.shared());
  }
  const std::size_t plane = static_cast<std::size_t>(f) * t;
  auto out = Tensor<T>::feature_map(n, total, f, t);
  for (int b = 0; b < n; ++b) {
    int offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      const T* src = parts[k].value().data().data() + static_cast<std::size_t>(b) * channels[k] * plane;
      std::copy(src, src + channels[k] * plane, out.data().data() + (static_cast<std::size_t>(b) * total + offset) * plane);
      offset += channels[k];
    }
  }
  return make_result<T>(OpKind::kConcat, std::move(out), std::move(inputs),
                        [n, total, plane, channels = std::move(channels)](Node<T>& self) {
                          const T* dy = self.grad.data().data();
                          int offset = 0;
                          for (std::size_t k = 0; k < channels.size(); ++k) {
                            if (T* dx = input_grad(self, k)) {
                              const std::size_t chunk = channels[k] * plane;
                              for (int b = 0; b < n; ++b) {
                                const T* src = dy + (static_cast<std::size_t>(b) * total + offset) * plane;
                                T* dst = dx + b * chunk;
                                for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
                              }
                            }
                            offset += channels[k];
                          }
                        });
}

template <typename T>
Var<T> stats_pool(const Var<T>& input, T eps) {
  require_map(input.dims(), "stats_pool input");
  const int n = input.dim(0);
  const int units = input.dim(1) * input.dim(2);
  const int frames = input.dim(3);
  if (frames < 2) throw ContractError("stats_pool: need at least 2 frames, got " + std::to_string(frames));
  Tensor<T> out({n, 2 * units});
  std::vector<T> means(static_cast<std::size_t>(n) * units), stds(means.size());
  const T* x = input.value().data().data();
  for (int b = 0; b < n; ++b)
    for (int u = 0; u < units; ++u) {
      const T* row = x + (static_cast<std::size_t>(b) * units + u) * frames;
      double s = 0;
      for (int t = 0; t < frames; ++t) s += row[t];
      const double mu = s / frames;
      double ss = 0;
      for (int t = 0; t < frames; ++t) ss += (row[t] - mu) * (row[t] - mu);
      const double sd = std::sqrt(ss / frames + static_cast<double>(eps));
      const std::size_t k = static_cast<std::size_t>(b) * units + u;
      means[k] = static_cast<T>(mu);
      stds[k] = static_cast<T>(sd);
      out[static_cast<std::int64_t>(b) * 2 * units + u] = static_cast<T>(mu);
      out[static_cast<std::int64_t>(b) * 2 * units + units + u] = static_cast<T>(sd);
    }
  return make_result<T>(OpKind::kStatsPool, std::move(out), {input.shared()},
                        [n, units, frames, means = std::move(means), stds = std::move(stds)](Node<T>& self) {
                          T* dx = input_grad(self, 0);
                          if (!dx) return;
                          const T* xv = input_value(self, 0).data().data();
                          const T* dy = self.grad.data().data();
                          for (int b = 0; b < n; ++b)
                            for (int u = 0; u < units; ++u) {
                              const std::size_t k = static_cast<std::size_t>(b) * units + u;
                              const T gm = dy[static_cast<std::size_t>(b) * 2 * units + u] / frames;
                              const T gs = dy[static_cast<std::size_t>(b) * 2 * units + units + u] / (frames * stds[k]);
                              const T* row = xv + k * frames;
                              T* drow = dx + k * frames;
                              for (int t = 0; t < frames; ++t) drow[t] += gm + gs * (row[t] - means[k]);
                            }
                        });
}

template <typename T>
Var<T> linear(const Var<T>& input, const Var<T>& weight) {
  require_rank(input.dims(), 2, "linear input");
  require_rank(weight.dims(), 2, "linear weight");
  const int batch = input.dim(0), in = input.dim(1), outd = weight.dim(0);
  if (weight.dim(1) != in)
    throw ShapeError("linear: weight expects " + std::to_string(weight.dim(1)) + " inputs, got " +
                     std::to_string(in));
  Tensor<T> out({batch, outd});
  kernels::gemm_nt(batch, outd, in, input.value().data().data(), weight.value().data().data(), out.data().data(),
                   false);
  return make_result<T>(OpKind::kLinear, std::move(out), {input.shared(), weight.shared()},
                        [batch, in, outd](Node<T>& self) {
                          const T* dy = self.grad.data().data();
                          if (T* dx = input_grad(self, 0))
                            kernels::gemm_nn(batch, in, outd, dy, input_value(self, 1).data().data(), dx, true);
                          if (T* dw = input_grad(self, 1))
                            kernels::gemm_tn(outd, in, batch, dy, input_value(self, 0).data().data(), dw, true);
                        });
}

template <typename T>
Var<T> instance_norm(const Var<T>& input, T eps) {
  require_rank(input.dims(), 2, "instance_norm input");
  const int frames = input.dim(0), bins = input.dim(1);
  if (frames < 2) throw ContractError("instance_norm: need at least 2 frames, got " + std::to_string(frames));
  const T* x = input.value().data().data();
  std::vector<T> mean(bins), sd(bins);
  for (int f = 0; f < bins; ++f) {
    double s = 0;
    for (int t = 0; t < frames; ++t) s += x[static_cast<std::size_t>(t) * bins + f];
    const double mu = s / frames;
    double ss = 0;
    for (int t = 0; t < frames; ++t) {
      const double d = x[static_cast<std::size_t>(t) * bins + f] - mu;
      ss += d * d;
    }
    mean[f] = static_cast<T>(mu);
    sd[f] = static_cast<T>(std::sqrt(ss / frames));
  }
  Tensor<T> out(input.dims());
  for (int t = 0; t < frames; ++t)
    for (int f = 0; f < bins; ++f) {
      const std::size_t i = static_cast<std::size_t>(t) * bins + f;
      out[static_cast<std::int64_t>(i)] = (x[i] - mean[f]) / (sd[f] + eps);
    }
  return make_result<T>(
      OpKind::kInstanceNorm, std::move(out), {input.shared()},
      [frames, bins, eps, mean = std::move(mean), sd = std::move(sd)](Node<T>& self) {
        T* dx = input_grad(self, 0);
        if (!dx) return;
        const T* xv = input_value(self, 0).data().data();
        const T* dy = self.grad.data().data();
        for (int f = 0; f < bins; ++f) {
          const double denom = static_cast<double>(sd[f]) + eps;
          double sum_g = 0, sum_gc = 0;
          for (int t = 0; t < frames; ++t) {
            const std::size_t i = static_cast<std::size_t>(t) * bins + f;
            sum_g += dy[i];
            sum_gc += dy[i] * (xv[i] - static_cast<double>(mean[f]));
          }
          const double std_term = sd[f] > 0 ? sum_gc / (denom * denom * frames * sd[f]) : 0.0;
          for (int t = 0; t < frames; ++t) {
            const std::size_t i = static_cast<std::size_t>(t) * bins + f;
            const double centered = xv[i] - static_cast<double>(mean[f]);
            dx[i] += static_cast<T>(dy[i] / denom - sum_g / (frames * denom) - std_term * centered);
          }
        }
      });
}

template <typename T>
Var<T> l2_normalize_rows(const Var<T>& input) {
  require_rank(input.dims(), 2, "l2_normalize_rows input");
  const int rows = input.dim(0), cols = input.dim(1);
  Tensor<T> out(input.dims());
  std::vector<T> norms(rows);
  const T* x = input.value().data().data();
  for (int r = 0; r < rows; ++r) {
    double ss = 0;
    for (int c = 0; c < cols; ++c) ss += static_cast<double>(x[r * cols + c]) * x[r * cols + c];
    norms[r] = static_cast<T>(std::max(std::sqrt(ss), 1e-12));
    for (int c = 0; c < cols; ++c) out[r * cols + c] = x[r * cols + c] / norms[r];
  }
  return make_result<T>(OpKind::kL2Normalize, std::move(out), {input.shared()},
                        [rows, cols, norms = std::move(norms)](Node<T>& self) {
                          T* dx = input_grad(self, 0);
                          if (!dx) return;
                          const T* y = self.value.data().data();
                          const T* dy = self.grad.data().data();
                          for (int r = 0; r < rows; ++r) {
                            double dot = 0;
                            for (int c = 0; c < cols; ++c) dot += static_cast<double>(y[r * cols + c]) * dy[r * cols + c];
                            for (int c = 0; c < cols; ++c)
                              dx[r * cols + c] += static_cast<T>((dy[r * cols + c] - y[r * cols + c] * dot) / norms[r]);
                          }
                        });
}

template <typename T>
Var<T> angular_margin_logits(const Var<T>& cosine, std::span<const int> labels, T margin, T scale_factor) {
  require_rank(cosine.dims(), 2, "angular_margin_logits input");
  const int rows = cosine.dim(0), classes = cosine.dim(1);
  if (static_cast<int>(labels.size()) != rows)
    throw ContractError("angular_margin_logits: " + std::to_string(labels.size()) + " labels for " +
                        std::to_string(rows) + " rows");
  for (int r = 0; r < rows; ++r)
    if (labels[r] < 0 || labels[r] >= classes)
      throw ContractError("angular_margin_logits: label " + std::to_string(labels[r]) + " at row " +
                          std::to_string(r) + " outside [0, " + std::to_string(classes) + ")");
  const double cos_m = std::cos(static_cast<double>(margin));
  const double sin_m = std::sin(static_cast<double>(margin));
  const double threshold = std::cos(std::numbers::pi - static_cast<double>(margin));
  const double lo = -1.0 + 1e-7, hi = 1.0 - 1e-7;

  Tensor<T> out(cosine.dims());
  std::vector<T> target_slope(rows);
  const T* cv = cosine.value().data().data();
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = scale_factor * cv[i];
  for (int r = 0; r < rows; ++r) {
    const double raw = cv[r * classes + labels[r]];
    const double c = std::clamp(raw, lo, hi);
    const bool clamped = raw < lo || raw > hi;
    double phi, slope;
    std::uint8_t branch;
    if (c > threshold) {
      const double s = std::sqrt(1.0 - c * c);
      phi = c * cos_m - s * sin_m;
      slope = cos_m + sin_m * c / s;
      branch = 0;
    } else {
      phi = c - margin * sin_m;
      slope = 1.0;
      branch = 1;
    }
    if (clamped) {
      slope = 0.0;
      branch = raw < lo ? 2 : 3;
    }
    KinkLog::record(branch);
    out[r * classes + labels[r]] = static_cast<T>(scale_factor * phi);
    target_slope[r] = static_cast<T>(scale_factor * slope);
  }
  std::vector<int> label_copy(labels.begin(), labels.end());
  return make_result<T>(OpKind::kAngularMargin, std::move(out), {cosine.shared()},
                        [rows, classes, scale_factor, target_slope = std::move(target_slope),
                         label_copy = std::move(label_copy)](Node<T>& self) {
                          T* dx = input_grad(self, 0);
                          if (!dx) return;
                          const T* dy = self.grad.data().data();
                          for (int r = 0; r < rows; ++r)
                            for (int c = 0; c < classes; ++c) {
                              const T slope = c == label_copy[r] ? target_slope[r] : scale_factor;
                              dx[r * classes + c] += dy[r * classes + c] * slope;
                            }
                        });
}

template <typename T>
Var<T> softmax_cross_entropy(const Var<T>& logits, std::span<const int> labels) {
  require_rank(logits.dims(), 2, "softmax_cross_entropy input");
  const int rows = logits.dim(0), classes = logits.dim(1);
  if (static_cast<int>(labels.size()) != rows)
    throw ContractError("softmax_cross_entropy: label count does not match batch");
  const T* z = logits.value().data().data();
  Tensor<T> probs(logits.dims());
  double total = 0;
  for (int r = 0; r < rows; ++r) {
    if (labels[r] < 0 || labels[r] >= classes)
      throw ContractError("softmax_cross_entropy: label " + std::to_string(labels[r]) + " out of range");
    const T* row = z + r * classes;
    const double mx = *std::max_element(row, row + classes);
    double se = 0;
    for (int c = 0; c < classes; ++c) se += std::exp(row[c] - mx);
    const double lse = mx + std::log(se);
    total += lse - row[labels[r]];
    for (int c = 0; c < classes; ++c) probs[r * classes + c] = static_cast<T>(std::exp(row[c] - lse));
  }
  Tensor<T> out({1}, static_cast<T>(total / rows));
  std::vector<int> label_copy(labels.begin(), labels.end());
  return make_result<T>(OpKind::kCrossEntropy, std::move(out), {logits.shared()},
                        [rows, classes, probs = std::move(probs), label_copy = std::move(label_copy)](Node<T>& self) {
                          T* dx = input_grad(self, 0);
                          if (!dx) return;
                          const T g = self.grad[0] / rows;
                          for (int r = 0; r < rows; ++r)
                            for (int c = 0; c < classes; ++c) {
                              const T target = c == label_copy[r] ? T(1) : T(0);
                              dx[r * classes + c] += g * (probs[r * classes + c] - target);
                            }
                        });
}

template <typename T>
Var<T> sum(const Var<T>& input) {
  double s = 0;
  for (T v : input.value().data()) s += v;
  const std::int64_t size = input.value().size();
  return make_result<T>(OpKind::kSum, Tensor<T>({1}, static_cast<T>(s)), {input.shared()}, [size](Node<T>& self) {
    if (T* dx = input_grad(self, 0))
      for (std::int64_t i = 0; i < size; ++i) dx[i] += self.grad[0];
  });
}

template <typename T>
Var<T> weighted_sum(const Var<T>& input, const Tensor<T>& weights) {
  require_same_dims(input.dims(), weights.dims(), "weighted_sum");
  double s = 0;
  for (std::int64_t i = 0; i < weights.size(); ++i) s += static_cast<double>(input.value()[i]) * weights[i];
  return make_result<T>(OpKind::kSum, Tensor<T>({1}, static_cast<T>(s)), {input.shared()}, [weights](Node<T>& self) {
    if (T* dx = input_grad(self, 0))
      for (std::int64_t i = 0; i < weights.size(); ++i) dx[i] += self.grad[0] * weights[i];
  });
}

#define ERES2NET_INSTANTIATE(T)                                                                       \
  template struct Node<T>;                                                                            \
  template class Var<T>;                                                                              \
  template void backward<T>(const Var<T>&);                                                           \
  template Var<T> conv2d<T>(const Var<T>&, const Var<T>&, Pair, Pair);                                \
  template Var<T> batch_norm<T>(const Var<T>&, BatchNormState<T>&, BnMode);                           \
  template Var<T> activation<T>(const Var<T>&, Activation);                                           \
  template Var<T> add<T>(const Var<T>&, const Var<T>&);                                               \
  template Var<T> mul<T>(const Var<T>&, const Var<T>&);                                               \
  template Var<T> scale<T>(const Var<T>&, T);                                                         \
  template Var<T> attention_merge<T>(const Var<T>&, const Var<T>&, const Var<T>&);                    \
  template std::vector<Var<T>> channel_split<T>(const Var<T>&, int);                                  \
  template Var<T> channel_concat<T>(std::span<const Var<T>>);                                         \
  template Var<T> stats_pool<T>(const Var<T>&, T);                                                    \
  template Var<T> linear<T>(const Var<T>&, const Var<T>&);                                            \
  template Var<T> instance_norm<T>(const Var<T>&, T);                                                 \
  template Var<T> l2_normalize_rows<T>(const Var<T>&);                                                \
  template Var<T> angular_margin_logits<T>(const Var<T>&, std::span<const int>, T, T);                \
  template Var<T> softmax_cross_entropy<T>(const Var<T>&, std::span<const int>);                      \
  template Var<T> sum<T>(const Var<T>&);                                                              \
  template Var<T> weighted_sum<T>(const Var<T>&, const Tensor<T>&);

ERES2NET_INSTANTIATE(float)
ERES2NET_INSTANTIATE(double)

#undef ERES2NET_INSTANTIATE

}  // namespace eres2net
