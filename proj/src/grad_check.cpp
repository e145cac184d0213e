// Copyright 2026 The eres2net-cpp Authors
// Licensed under the Apache License, Version 2.0

#include "eres2net/grad_check.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace eres2net {

namespace {

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

// Steps tried at a kink crossing: h, h/10, ..., h/10^4.
constexpr int kKinkRetries = 5;

struct Probe {
  double value;
  std::vector<std::uint8_t> branches;
};

Probe evaluate(const std::function<Var<double>()>& forward) {
  NoGradGuard no_grad;
  KinkLog log;
  Var<double> out = forward();
  if (out.value().size() != 1) throw ContractError("grad_check: forward must return a scalar");
  return {out.value()[0], log.branches()};
}

}  // namespace

std::string GradCheckReport::summary() const {
  std::ostringstream os;
  os << (passed ? "PASS" : "FAIL") << " max_rel_error=" << max_rel_error << " tolerance=" << tolerance
     << " params=" << params.size();
  if (first_failure) os << " first_failure=" << *first_failure;
  return os.str();
}

GradCheckReport grad_check(ParamStore<double>& store, const std::function<Var<double>()>& forward,
                           const GradCheckOptions& options) {
  Var<double> root = forward();
  backward(root, store);
  root = Var<double>();
  std::vector<Tensor<double>> clean;
  if (options.corrupt_gradient) {
    for (const auto& entry : store.entries())
      clean.push_back(entry.learnable() ? store.grad(entry.name) : Tensor<double>());
    options.corrupt_gradient(store);
  }

  GradCheckReport report;
  report.tolerance = options.tolerance;
  const double h = options.step;

  for (std::size_t e = 0; e < store.entries().size(); ++e) {
    const auto& entry = store.entries()[e];
    if (!entry.learnable()) continue;
    Tensor<double>& param = store.value(entry.name);
    const Tensor<double> analytic = store.grad(entry.name);
    const std::int64_t size = param.size();

    std::vector<std::int64_t> order(static_cast<std::size_t>(size));
    std::iota(order.begin(), order.end(), 0);
    std::int64_t wanted = size;
    if (options.max_elements_per_param > 0 && options.max_elements_per_param < size) {
      std::mt19937_64 rng(options.seed ^ fnv1a(entry.name));
      std::shuffle(order.begin(), order.end(), rng);
      wanted = options.max_elements_per_param;
    }
    // Coordinates touched by the corruption hook are always examined.
    if (!clean.empty())
      std::stable_partition(order.begin(), order.end(),
                            [&](std::int64_t i) { return clean[e][i] != analytic[i]; });

    ParamCheck check{entry.name};
    for (std::int64_t idx : order) {
      if (check.checked >= wanted) break;
      const double saved = param[idx];
      double numeric = 0.0;
      bool smooth = false;
      for (int shrink = 0; shrink < kKinkRetries && !smooth; ++shrink) {
        const double step = h * std::pow(0.1, shrink);
        auto central = [&](double s, std::vector<std::uint8_t>& branches) {
          param[idx] = saved + s;
          Probe plus = evaluate(forward);
          param[idx] = saved - s;
          Probe minus = evaluate(forward);
          param[idx] = saved;
          smooth = smooth && plus.branches == minus.branches &&
                   (branches.empty() || branches == plus.branches);
          branches = std::move(plus.branches);
          return (plus.value - minus.value) / (2 * s);
        };
        smooth = true;
        std::vector<std::uint8_t> branches;
        const double coarse = central(step, branches);
        numeric = options.richardson ? (4 * central(step / 2, branches) - coarse) / 3 : coarse;
        if (smooth && shrink > 0) ++check.refined;
      }
      if (!smooth) {
        ++check.skipped;
        continue;
      }
      const double a = analytic[idx];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
      check.max_rel_error = std::max(check.max_rel_error, rel);
      ++check.checked;
    }

    const bool ok = check.checked > 0 && check.max_rel_error <= options.tolerance;
    if (!ok && report.passed) {
      report.passed = false;
      std::ostringstream os;
      os << entry.name;
      if (check.checked == 0) {
        os << " (no differentiable coordinate)";
      } else {
        os << " (rel error " << check.max_rel_error << ")";
      }
      report.first_failure = os.str();
    }
    report.max_rel_error = std::max(report.max_rel_error, check.max_rel_error);
    report.params.push_back(std::move(check));
  }
  return report;
}

}  // namespace eres2net
