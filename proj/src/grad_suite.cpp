// Copyright 2026 The eres2net-cpp Authors
// Licensed under the Apache License, Version 2.0

#include "eres2net/grad_suite.h"

#include <algorithm>
#include <cmath>
#include <random>

#include "eres2net/init.h"
#include "eres2net/network.h"
#include "eres2net/training.h"

namespace eres2net {

namespace {

using Store = ParamStore<double>;

// Network input length. The network downsamples time by 8 and the pooled
// std over the last frames needs enough of them to stay away from its
// sqrt(eps) kink; 64 frames leave 8.
constexpr int kNetFrames = 64;

Tensor<double> random_tensor(const Shape& dims, std::mt19937_64& rng, double stddev = 1.0) {
  std::normal_distribution<double> normal(0.0, stddev);
  Tensor<double> t(dims);
  for (auto& v : t.data()) v = normal(rng);
  return t;
}

// Moves BN scales/shifts off their 1/0 initialization so the checks see a
// generic point.
void perturb_norms(Store& store, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  for (const auto& e : store.entries()) {
    if (e.kind != ParamKind::kNorm) continue;
    const bool is_gamma = e.name.size() >= 5 && e.name.compare(e.name.size() - 5, 5, "gamma") == 0;
    for (auto& v : store.value(e.name).data()) v = is_gamma ? 1.0 + 0.2 * normal(rng) : 0.1 * normal(rng);
  }
}

ModelConfig desk_config() {
  ModelConfig c;
  c.width_multiplier = 0.125;
  return c;
}

GradCheckReport check(Store& store, const std::function<Var<double>()>& fn, const GradSuiteOptions& o) {
  GradCheckOptions g;
  g.tolerance = o.tolerance;
  g.step = o.step;
  g.max_elements_per_param = o.samples_per_param;
  g.seed = o.seed;
  if (o.inject_fault)
    g.corrupt_gradient = [](Store& s) {
      for (const auto& e : s.entries())
        if (e.learnable()) {
          double& g = s.grad(e.name)[0];
          g += 1e-2 * std::max(1.0, std::abs(g));
          return;
        }
    };
  return grad_check(store, fn, g);
}

}  // namespace

std::vector<std::string> grad_suite_components(bool include_network) {
  std::vector<std::string> names{"aff",  "res2net_block", "eres2net_block", "gff", "stats_pool", "instance_norm",
                                 "aam_softmax"};
  if (include_network) names.emplace_back("network");
  return names;
}

GradCheckReport grad_check_component(const std::string& component, const GradSuiteOptions& o) {
  std::mt19937_64 rng(o.seed * 0x9E3779B97F4A7C15ULL + name_hash(component));
  const ModelConfig cfg = desk_config();
  Store store;
  const std::uint64_t init_seed = o.seed;

  if (component == "aff") {
    const int c = cfg.block_config(2, 0).branch_channels();
    store.add("input/a", random_tensor({2, c, 6, 6}, rng), ParamKind::kWeight);
    store.add("input/b", random_tensor({2, c, 6, 6}, rng), ParamKind::kWeight);
    init_aff(store, "aff", c, cfg.reduction, init_seed);
    perturb_norms(store, rng);
    const Tensor<double> w = random_tensor({2, c, 6, 6}, rng);
    return check(store, [&] {
      auto p = AffParams<double>::bind(store, "aff", cfg.reduction);
      return weighted_sum(aff_fuse(store.var("input/a"), store.var("input/b"), p, BnMode::kTrain), w);
    }, o);
  }

  if (component == "res2net_block" || component == "eres2net_block") {
    BlockConfig bc = cfg.block_config(2, 0);  // stride 2 with projection
    bc.use_lff = component == "eres2net_block";
    store.add("input/x", random_tensor({2, bc.in_channels, 8, 8}, rng), ParamKind::kWeight);
    init_block(store, "block", bc, init_seed);
    perturb_norms(store, rng);
    const Tensor<double> w = random_tensor({2, bc.out_channels, 4, 4}, rng);
    return check(store, [&] {
      return weighted_sum(block_forward(store.var("input/x"), bc, store, "block", BnMode::kTrain), w);
    }, o);
  }

  if (component == "gff") {
    const int sizes[4] = {16, 8, 4, 2};
    for (int s = 0; s < 4; ++s)
      store.add("input/s" + std::to_string(s + 1),
                random_tensor({2, cfg.stage_width(s), sizes[s], sizes[s]}, rng), ParamKind::kWeight);
    init_gff(store, cfg, init_seed);
    perturb_norms(store, rng);
    const Tensor<double> w = random_tensor({2, cfg.stage_width(3), 2, 2}, rng);
    return check(store, [&] {
      std::array<Var<double>, 4> stages;
      for (int s = 0; s < 4; ++s) stages[static_cast<std::size_t>(s)] = store.var("input/s" + std::to_string(s + 1));
      return weighted_sum(gff_forward(stages, cfg, store, BnMode::kTrain), w);
    }, o);
  }

  if (component == "stats_pool") {
    store.add("input/x", random_tensor({2, 4, 3, 7}, rng), ParamKind::kWeight);
    const Tensor<double> w = random_tensor({2, 2 * 4 * 3}, rng);
    return check(store, [&] { return weighted_sum(stats_pool(store.var("input/x")), w); }, o);
  }

  if (component == "instance_norm") {
    store.add("input/x", random_tensor({9, 6}, rng), ParamKind::kWeight);
    const Tensor<double> w = random_tensor({9, 6}, rng);
    return check(store, [&] { return weighted_sum(instance_norm(store.var("input/x")), w); }, o);
  }

  if (component == "aam_softmax") {
    const int dim = cfg.embedding_dim;
    store.add("input/embeddings", random_tensor({4, dim}, rng), ParamKind::kWeight);
    store.add("head/weight", random_tensor({8, dim}, rng), ParamKind::kWeight);
    std::vector<int> labels(4);
    for (auto& l : labels) l = static_cast<int>(rng() % 8);
    AamConfig aam{0.3, 32.0, 8};
    return check(store, [&, labels] {
      return aam_softmax_loss(store.var("input/embeddings"), labels, store.var("head/weight"), aam);
    }, o);
  }

  if (component == "network") {
    ModelConfig net = cfg;
    net.feat_dim = 16;
    Model<double> model = build_model<double>(net, init_seed);
    perturb_norms(model.params, rng);
    model.params.add("input/features", random_tensor({2, 1, 16, kNetFrames}, rng), ParamKind::kWeight);
    auto& ps = model.params;
    // Inference-mode point: running statistics settled on the input itself,
    // as after training. Train-mode BN is covered by the components above.
    {
      NoGradGuard no_grad;
      for (int k = 0; k < 80; ++k) forward(model, ps.var("input/features"), BnMode::kTrain);
    }
    const Tensor<double> w = random_tensor({2, net.embedding_dim}, rng);
    return check(ps, [&] { return weighted_sum(forward(model, ps.var("input/features"), BnMode::kEval), w); }, o);
  }

  throw ConfigError("unknown gradient-check component '" + component + "'");
}

GradSuiteResult run_grad_suite(const GradSuiteOptions& options) {
  GradSuiteResult result;
  for (const auto& name : grad_suite_components(options.include_network)) {
    GradSuiteEntry e{name, grad_check_component(name, options)};
    result.passed = result.passed && e.report.passed;
    result.entries.push_back(std::move(e));
  }
  return result;
}

}  // namespace eres2net
