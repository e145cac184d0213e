// Copyright 2026 The eres2net-cpp Authors
// Licensed under the Apache License, Version 2.0

#ifndef ERES2NET_AUTODIFF_H_
#define ERES2NET_AUTODIFF_H_

// Reverse-mode differentiation over a dynamically built graph. A Var is a
// shared handle to a Node; nodes keep their inputs alive only while gradients
// are being recorded, so inference under NoGradGuard frees intermediates as
// soon as they go out of scope.

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "eres2net/tensor.h"

namespace eres2net {

enum class OpKind : std::uint8_t {
  kLeaf,
  kConv2d,
  kBatchNorm,
  kActivation,
  kAdd,
  kMul,
  kScale,
  kAttentionMerge,
  kSplit,
  kConcat,
  kStatsPool,
  kLinear,
  kInstanceNorm,
  kL2Normalize,
  kAngularMargin,
  kCrossEntropy,
  kSum,
};

template <typename T>
struct Node {
  OpKind op = OpKind::kLeaf;
  Tensor<T> value;
  Tensor<T> grad;  // empty until something flows into it
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;  // pushes `grad` into inputs
  bool requires_grad = false;

  /// Gradient buffer, zero-initialized on first use.
  Tensor<T>& grad_buffer();
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  /// Leaf that does not receive gradients.
  static Var constant(Tensor<T> value);
  /// Leaf that receives gradients.
  static Var variable(Tensor<T> value);

  const Tensor<T>& value() const { return node_->value; }
  const Shape& dims() const { return node_->value.dims(); }
  int dim(int i) const { return node_->value.dim(i); }
  const Tensor<T>& grad() const { return node_->grad; }
  bool requires_grad() const { return node_->requires_grad; }
  OpKind op() const { return node_->op; }
  bool valid() const { return static_cast<bool>(node_); }
  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& shared() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Thread-local switch for graph recording.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// While alive, every piecewise op (ReLU, margin clamps) appends the branch it
/// took per element. Finite-difference checks compare two logs to detect a
/// perturbation that crossed a kink.
class KinkLog {
 public:
  KinkLog();
  ~KinkLog();
  KinkLog(const KinkLog&) = delete;
  KinkLog& operator=(const KinkLog&) = delete;

  const std::vector<std::uint8_t>& branches() const { return branches_; }
  static void record(std::uint8_t branch);
  static bool active();

 private:
  std::vector<std::uint8_t> branches_;
  KinkLog* previous_;
};

/// Runs reverse accumulation from a scalar root. Gradients land in the grad
/// slots of every reachable node that requires them.
template <typename T>
void backward(const Var<T>& root);

// ---------------------------------------------------------------------------
// Operations

struct Pair {
  int h = 1;
  int w = 1;
};

template <typename T>
Var<T> conv2d(const Var<T>& input, const Var<T>& kernel, Pair stride = {1, 1}, Pair padding = {0, 0});

enum class BnMode : std::uint8_t { kTrain, kEval };

/// Learnable affine parameters plus running statistics of one BN layer.
template <typename T>
struct BatchNormState {
  Var<T> gamma;
  Var<T> beta;
  Tensor<T>* running_mean = nullptr;
  Tensor<T>* running_var = nullptr;
  T eps = T(1e-5);
  T momentum = T(0.1);
};

template <typename T>
Var<T> batch_norm(const Var<T>& input, BatchNormState<T>& state, BnMode mode);

enum class Activation : std::uint8_t { kRelu, kSilu, kTanh };

template <typename T>
Var<T> activation(const Var<T>& input, Activation kind);

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> scale(const Var<T>& a, T factor);

/// (u + 1) * a + (1 - u) * b, elementwise.
template <typename T>
Var<T> attention_merge(const Var<T>& u, const Var<T>& a, const Var<T>& b);

template <typename T>
std::vector<Var<T>> channel_split(const Var<T>& input, int parts);

template <typename T>
Var<T> channel_concat(std::span<const Var<T>> parts);

/// [B,C,F,T] -> [B, 2*C*F]: per-(channel, frequency) mean over time followed
/// by sqrt(population variance + eps).
template <typename T>
Var<T> stats_pool(const Var<T>& input, T eps = T(1e-8));

/// x [B,In] times weight [Out,In]^T -> [B,Out]. No bias.
template <typename T>
Var<T> linear(const Var<T>& input, const Var<T>& weight);

/// [T,F] -> per-column (x - mean) / (std + eps), statistics over rows.
template <typename T>
Var<T> instance_norm(const Var<T>& input, T eps = T(1e-5));

/// Row-wise x / max(||x||, 1e-12) on a rank-2 tensor.
template <typename T>
Var<T> l2_normalize_rows(const Var<T>& input);

/// Additive angular margin on cosine logits [B,C]: target column becomes
/// scale*cos(theta+m) (with the linear fallback past pi-m), others scale*cos.
template <typename T>
Var<T> angular_margin_logits(const Var<T>& cosine, std::span<const int> labels, T margin, T scale);

/// Mean softmax cross-entropy over rows of logits [B,C].
template <typename T>
Var<T> softmax_cross_entropy(const Var<T>& logits, std::span<const int> labels);

template <typename T>
Var<T> sum(const Var<T>& input);

/// sum(input * weights) with constant weights of identical dims.
template <typename T>
Var<T> weighted_sum(const Var<T>& input, const Tensor<T>& weights);

}  // namespace eres2net

#endif  // ERES2NET_AUTODIFF_H_
