// Copyright 2026 The eres2net-cpp Authors
// Licensed under the Apache License, Version 2.0

#ifndef ERES2NET_GRAD_CHECK_H_
#define ERES2NET_GRAD_CHECK_H_

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "eres2net/param_store.h"

namespace eres2net {

struct GradCheckOptions {
  double tolerance = 1e-4;
  double step = 1e-4;
  /// Coordinates sampled per learnable tensor; 0 checks every element.
  int max_elements_per_param = 0;
  std::uint64_t seed = 0;
  /// Combines steps h and h/2 as (4 D(h/2) - D(h)) / 3, cancelling the h^2
  /// truncation term of the central difference.
  bool richardson = true;
  /// Test hook applied to the analytic gradients before comparison.
  std::function<void(ParamStore<double>&)> corrupt_gradient;
};

struct ParamCheck {
  std::string name;
  double max_rel_error = 0.0;
  int checked = 0;
  int refined = 0;  // checked with a reduced step after a kink crossing
  int skipped = 0;  // every step tried crossed a ReLU/clamp kink
};

struct GradCheckReport {
  std::vector<ParamCheck> params;
  double tolerance = 0.0;
  double max_rel_error = 0.0;
  bool passed = true;
  std::optional<std::string> first_failure;

  std::string summary() const;
};

/// Compares reverse-mode gradients of the scalar returned by `forward` with
/// central differences, per learnable entry of `store`. Relative error is
/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8). When the +-step
/// evaluations (or the extra h/2 probes) take different branches of a
/// piecewise op the difference is meaningless; the coordinate is retried at
/// step/10, ..., step/10^4, then skipped and replaced by the next one.
GradCheckReport grad_check(ParamStore<double>& store, const std::function<Var<double>()>& forward,
                           const GradCheckOptions& options = {});

}  // namespace eres2net

#endif  // ERES2NET_GRAD_CHECK_H_
