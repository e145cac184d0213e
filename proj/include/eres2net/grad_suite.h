// Copyright 2026 The eres2net-cpp Authors
// Licensed under the Apache License, Version 2.0

#ifndef ERES2NET_GRAD_SUITE_H_
#define ERES2NET_GRAD_SUITE_H_

#include <cstdint>
#include <string>
#include <vector>

#include "eres2net/grad_check.h"

namespace eres2net {

// Finite-difference checks over every differentiable unit of the model, built
// at width 0.125 with small spatial extents so a seed takes well under a
// second. Inputs are registered as store entries and checked as well.
//
// Blocks and the standalone AFF use the stage-3 branch width (8 channels,
// AFF hidden width 2). At hidden width 1 the BN after W2 makes the loss
// invariant to each W2 entry's scale, the gradient collapses to the eps
// term, and the relative error measures truncation noise instead.

struct GradSuiteOptions {
  double tolerance = 1e-4;
  double step = 1e-4;
  std::uint64_t seed = 1;
  /// Coordinates sampled per tensor (0 = all).
  int samples_per_param = 6;
  /// Adds the whole network (stem to embedding, eval-mode BN with settled
  /// running statistics) as a component.
  bool include_network = false;
  /// Test hook: shifts one analytic gradient element per component by
  /// 1e-2 * max(1, |g|).
  bool inject_fault = false;
};

struct GradSuiteEntry {
  std::string component;
  GradCheckReport report;
};

struct GradSuiteResult {
  std::vector<GradSuiteEntry> entries;
  bool passed = true;
};

/// Component names: aff, res2net_block, eres2net_block, gff, stats_pool,
/// instance_norm, aam_softmax, and network when requested.
std::vector<std::string> grad_suite_components(bool include_network);

GradCheckReport grad_check_component(const std::string& component, const GradSuiteOptions& options);
GradSuiteResult run_grad_suite(const GradSuiteOptions& options);

}  // namespace eres2net

#endif  // ERES2NET_GRAD_SUITE_H_
