// Copyright 2026 The eres2net-cpp Authors
// Licensed under the Apache License, Version 2.0

// One PASS/FAIL line per acceptance criterion. Exit status is nonzero when
// any criterion fails.

#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>

#include "eres2net/cli.h"
#include "eres2net/config.h"
#include "eres2net/grad_suite.h"
#include "eres2net/init.h"
#include "eres2net/network.h"
#include "eres2net/tensor_io.h"
#include "eres2net/training.h"
#include "metric_oracles.h"
#include "oracles.h"

using namespace eres2net;
namespace fs = std::filesystem;
using oracle::Map;

namespace {

struct Outcome {
  bool passed;
  std::string detail;
};

std::string fmt(const char* format, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, format, args...);
  return buf;
}

std::string file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

struct Scratch {
  fs::path path = fs::temp_directory_path() / "eres2net_acceptance";
  Scratch() {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~Scratch() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

int cli(const std::vector<std::string>& args, std::string* out = nullptr) {
  std::ostringstream o, e;
  const int code = run_cli(args, o, e);
  if (out) *out = o.str();
  if (code != kExitOk) std::cerr << "  eres2net";
  if (code != kExitOk)
    for (const auto& a : args) std::cerr << " " << a;
  if (code != kExitOk) std::cerr << " -> " << code << ": " << e.str();
  return code;
}

// Full-width model, 192-d embedding, 16-class head.
Outcome ac1() {
  Model<float> m = build_model<float>(ModelConfig{}, 1);
  add_linear(m.params, "head/weight", 16, 192, 1);
  const ParamCounts n = count_param_regions(m.params);
  const double target = 4.64e6;
  const double frame = static_cast<double>(n.frame_level) / target - 1;
  const double with_emb = static_cast<double>(n.total(false)) / target - 1;
  const bool ok = std::abs(frame) <= 0.03 || std::abs(with_emb) <= 0.03;
  return {ok, fmt("head excluded: frame-level %lld (%+.2f%%), with embedding layer %lld (%+.2f%%); "
                  "head included %lld; target 4.64M +-3%%",
                  static_cast<long long>(n.frame_level), 100 * frame, static_cast<long long>(n.total(false)),
                  100 * with_emb, static_cast<long long>(n.total(true)))};
}

Outcome ac2() {
  Model<float> m = build_model<float>(ModelConfig{}, 1);
  std::mt19937_64 rng(2);
  bool ok = true;
  std::string detail;
  for (int t : {96, 200, 304}) {
    const auto x = Var<float>::constant(oracle::random_map({1, 1, 80, t}, rng).cast<float>());
    NoGradGuard guard;
    const ForwardTrace<float> tr = forward_trace(m, x, BnMode::kEval);
    const std::array<Shape, 4> want{Shape{1, 64, 80, t}, Shape{1, 128, 40, t / 2}, Shape{1, 256, 20, t / 4},
                                    Shape{1, 512, 10, t / 8}};
    for (int s = 0; s < 4; ++s)
      if (tr.stages[static_cast<std::size_t>(s)].value().dims() != want[static_cast<std::size_t>(s)]) {
        ok = false;
        detail += fmt(" T=%d stage%d got %s;", t, s + 1,
                      shape_string(tr.stages[static_cast<std::size_t>(s)].value().dims()).c_str());
      }
    ok = ok && tr.pooled.value().dims() == Shape{1, 10240} && tr.embedding.value().dims() == Shape{1, 192};
  }
  return {ok, "T in {96, 200, 304}: stages 64x80xT, 128x40xT/2, 256x20xT/4, 512x10xT/8; pooled 10240; "
              "embedding 192" + detail};
}

Outcome ac3() {
  double worst = 0;
  int checks = 0;
  std::string failure;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    GradSuiteOptions o;  // step 1e-4, tolerance 1e-4, width 0.125
    o.seed = seed;
    for (const auto& e : run_grad_suite(o).entries) {
      ++checks;
      worst = std::max(worst, e.report.max_rel_error);
      if (!e.report.passed && failure.empty())
        failure = fmt(" first failure seed %llu %s", static_cast<unsigned long long>(seed), e.component.c_str());
    }
  }
  GradSuiteOptions faulty;
  faulty.inject_fault = true;
  const bool detects = !run_grad_suite(faulty).passed;
  return {failure.empty() && checks == 140 && detects,
          fmt("7 components x 20 seeds, float64, step 1e-4: worst relative error %.2e (limit 1e-4); injected "
              "fault %s",
              worst, detects ? "detected" : "NOT detected") +
              failure};
}

Outcome ac4() {
  // (a) attentional block with W2 = 0 against the sum-fusion reference.
  double a_err = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    std::mt19937_64 rng(seed);
    BlockConfig c;
    c.in_channels = 16, c.mid_channels = 16, c.out_channels = 32, c.scale = 4, c.stride = 2, c.use_lff = true;
    ParamStore<double> s;
    init_block(s, "b", c, seed);
    oracle::perturb_norms(s, rng);
    for (int i = 2; i <= c.scale; ++i) {
      s.value("b/aff" + std::to_string(i) + "/w2").fill(0.0);
      s.value("b/aff" + std::to_string(i) + "/bn2/beta").fill(0.0);
    }
    const Map x = oracle::random_map({2, 16, 8, 8}, rng);
    const Map y = eres2net_block(Var<double>::constant(x), c, s, "b", BnMode::kTrain).value();
    const Map r = oracle::relu(oracle::conv_bn(x, s, "b/reduce", 2, 0));
    std::vector<Map> ys;
    for (int i = 1; i <= c.scale; ++i) {
      Map xi = oracle::channels(r, (i - 1) * c.branch_channels(), c.branch_channels());
      if (i > 1) xi = oracle::add(xi, ys.back());
      ys.push_back(oracle::relu(oracle::conv_bn(xi, s, "b/k" + std::to_string(i), 1, 1)));
    }
    const Map ref = oracle::relu(oracle::add(oracle::conv_bn(oracle::concat(ys), s, "b/expand", 1, 0),
                                             oracle::conv_bn(x, s, "b/shortcut", 2, 0)));
    a_err = std::max(a_err, oracle::max_abs_diff(y, ref));
  }

  // (b) bottom-up pathway with zeroed attention against plain addition.
  double b_err = 0;
  ModelConfig desk;
  desk.width_multiplier = 0.125;
  desk.feat_dim = 16;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    std::mt19937_64 rng(seed);
    ParamStore<double> s;
    init_gff(s, desk, seed);
    oracle::perturb_norms(s, rng);
    for (int j = 2; j <= 4; ++j) {
      s.value("gff/aff" + std::to_string(j) + "/w2").fill(0.0);
      s.value("gff/aff" + std::to_string(j) + "/bn2/beta").fill(0.0);
    }
    const int sizes[4] = {16, 8, 4, 2};
    std::vector<Map> maps;
    std::array<Var<double>, 4> vars;
    for (int j = 0; j < 4; ++j) {
      maps.push_back(oracle::random_map({2, desk.stage_width(j), sizes[j], sizes[j]}, rng));
      vars[static_cast<std::size_t>(j)] = Var<double>::constant(maps.back());
    }
    const Map y = gff_forward(vars, desk, s, BnMode::kTrain).value();
    Map ref = maps[0];
    for (int j = 2; j <= 4; ++j)
      ref = oracle::add(oracle::conv_bn(ref, s, "gff/down" + std::to_string(j), 2, 1),
                        maps[static_cast<std::size_t>(j - 1)]);
    b_err = std::max(b_err, oracle::max_abs_diff(y, ref));
  }

  // (c) eres2net without its fusion pathway is res2net+lff, bitwise.
  bool c_ok = true;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    ModelConfig full = desk, lff = desk;
    full.variant = Variant::kERes2Net;
    lff.variant = Variant::kRes2NetLff;
    Model<float> a = build_model<float>(full, seed), b = build_model<float>(lff, seed);
    ParamStore<float> stripped;
    for (const auto& e : a.params.entries())
      if (e.name.rfind("gff/", 0) != 0) stripped.add(e.name, e.value(), e.kind);
    c_ok = c_ok && stripped.identical(b.params);
    std::mt19937_64 rng(seed);
    const auto x = Var<float>::constant(oracle::random_map({2, 1, 16, 24}, rng).cast<float>());
    NoGradGuard guard;
    const ForwardTrace<float> ta = forward_trace(a, x, BnMode::kTrain);
    const auto bypass = linear(stats_pool(ta.stages[3]), a.params.var("embedding/weight"));
    c_ok = c_ok && bypass.value() == forward(b, x, BnMode::kTrain).value();
  }
  return {a_err <= 1e-6 && b_err <= 1e-6 && c_ok,
          fmt("(a) W2=0 block vs sum fusion max |diff| %.1e; (b) zeroed GFF vs additive %.1e (limit 1e-6); "
              "(c) eres2net minus GFF == res2net+lff bitwise: %s",
              a_err, b_err, c_ok ? "yes" : "no")};
}

Outcome ac5() {
  std::mt19937_64 rng(2026);
  double worst = 0;
  int largest = 0;
  for (int set = 0; set < 100; ++set) {
    const int total = set < 5 ? 10000 : 2 + static_cast<int>(rng() % 3000);
    largest = std::max(largest, total);
    const int targets = 1 + static_cast<int>(rng() % static_cast<unsigned>(total - 1));
    const double separation = std::uniform_real_distribution<double>(-0.5, 3.0)(rng);
    const bool ties = set % 2 == 0;
    std::normal_distribution<double> normal;
    auto draw = [&](double shift) {
      const double v = normal(rng) + shift;
      return ties ? std::round(v * 10) / 10 : v;
    };
    std::vector<double> tar, non;
    for (int i = 0; i < targets; ++i) tar.push_back(draw(separation));
    for (int i = targets; i < total; ++i) non.push_back(draw(0.0));
    worst = std::max(worst, std::abs(compute_eer(tar, non).value - oracle::eer(tar, non)));
    worst = std::max(worst, std::abs(compute_mindcf(tar, non).value - oracle::mindcf(tar, non, 0.01, 1, 1)));
  }
  const std::vector<double> tar{2.0, 3.0, 2.5}, non{-1.0, 0.0, 1.0, 1.9};
  const std::vector<double> same_t(5, 0.7), same_n(9, 0.7);
  const bool degenerate = compute_eer(tar, non).value == 0.0 && compute_mindcf(tar, non).value == 0.0 &&
                          compute_eer(same_t, same_n).value == 0.5 && compute_mindcf(same_t, same_n).value == 1.0;
  return {worst <= 1e-9 && degenerate,
          fmt("100 trial sets (up to %d trials, half with ties) vs exhaustive sweep: max |diff| %.1e (limit 1e-9); "
              "perfect separation 0/0 and constant scores 0.5/1.0: %s",
              largest, worst, degenerate ? "yes" : "no")};
}

constexpr const char* kDeskConfig =
    "preset = standard\nvariant = eres2net\nwidth_multiplier = 0.125\nbatch_size = 16\n"
    "steps_per_epoch = 10\ntotal_epochs = 20\nsynth_speakers = 16\nseed = 1\n";

Outcome ac6(const Scratch& dir) {
  const std::string conf = dir.file("desk.conf"), weights = dir.file("desk.ersw"), csv = dir.file("loss.csv");
  std::ofstream(conf) << kDeskConfig;
  const RunConfig rc = load_config(conf);
  const bool recipe = rc.train.aam.margin == 0.3 && rc.train.aam.scale == 32.0 && rc.train.optim.momentum == 0.9 &&
                      rc.train.optim.weight_decay == 1e-4 && rc.train.optim.peak_lr == 0.2 &&
                      rc.train.optim.total_steps() == 200 && rc.synth.num_speakers == 16;
  if (cli({"train", "--config", conf, "--out", weights, "--loss-csv", csv}) != kExitOk) return {false, "train failed"};
  const std::string emb = dir.file("desk.emb"), trials = dir.file("trials.txt"), scores = dir.file("scores.txt");
  if (cli({"extract", "--config", conf, "--weights", weights, "--synth", "--out", emb, "--trials-out", trials}) !=
          kExitOk ||
      cli({"score", "--embeddings", emb, "--trials", trials, "--out", scores}) != kExitOk)
    return {false, "extract/score failed"};
  std::string metrics;
  if (cli({"eval", "--scores", scores, "--trials", trials}, &metrics) != kExitOk) return {false, "eval failed"};

  std::ifstream in(csv);
  std::string line;
  std::getline(in, line);
  std::vector<double> losses;
  while (std::getline(in, line)) losses.push_back(std::stod(line.substr(line.rfind(',') + 1)));
  if (losses.size() != 200) return {false, fmt("expected 200 loss rows, got %zu", losses.size())};
  double first = 0, last = 0;
  for (int i = 0; i < 10; ++i) first += losses[static_cast<std::size_t>(i)] / 10;
  for (int i = 150; i < 200; ++i) last += losses[static_cast<std::size_t>(i)] / 50;
  TrialSet t = parse_trials(trials);
  attach_scores(t, parse_scores(scores));
  const Metrics m = evaluate(t);
  const bool ok = recipe && last < 0.5 * first && m.eer.value <= 0.05;
  return {ok, fmt("16 speakers, width 0.125, 200 steps, standard recipe%s: loss first-10 mean %.3f, last-50 mean "
                  "%.3f (ratio %.3f, limit 0.5); held-out EER %.2f%% over %d trials (limit 5%%), MinDCF %.4f",
                  recipe ? "" : " (RECIPE MISMATCH)", first, last, last / first, 100 * m.eer.value,
                  m.targets + m.nontargets, m.mindcf.value)};
}

constexpr const char* kTinyConfig =
    "width_multiplier = 0.125\nsynth_speakers = 3\nsynth_utts_per_speaker = 2\n"
    "synth_heldout_utts_per_speaker = 2\nsynth_utt_seconds = 0.6\ncrop_seconds = 0.5\n"
    "batch_size = 3\nsteps_per_epoch = 2\ntotal_epochs = 3\nwarmup_epochs = 1\n";

Outcome ac7(const Scratch& dir) {
  const std::string conf = dir.file("tiny.conf");
  std::ofstream(conf) << kTinyConfig;
  for (const char* k : {"1", "2"}) {
    if (cli({"train", "--config", conf, "--out", dir.file(std::string("w") + k)}) != kExitOk ||
        cli({"extract", "--config", conf, "--weights", dir.file(std::string("w") + k), "--synth", "--out",
             dir.file(std::string("e") + k)}) != kExitOk)
      return {false, "train/extract failed"};
  }
  const bool same_ckpt = file_bytes(dir.file("w1")) == file_bytes(dir.file("w2"));
  const bool same_emb = file_bytes(dir.file("e1")) == file_bytes(dir.file("e2"));

  const ParamStore<float> loaded = load_weights(dir.file("w1"));
  save_weights(loaded, dir.file("w3"));
  const bool round_trip = file_bytes(dir.file("w3")) == file_bytes(dir.file("w1")) &&
                          load_weights(dir.file("w3")).identical(loaded);

  const std::string good = file_bytes(dir.file("w1"));
  int rejected = 0, cases = 0;
  auto expect_format_error = [&](const std::string& bytes) {
    ++cases;
    try {
      decode_tensor_file(bytes);
    } catch (const FormatError&) {
      ++rejected;
    }
  };
  std::string bad = good;
  bad[0] ^= 0x5a;
  expect_format_error(bad);
  bad = good;
  bad[4] = 99;  // version
  expect_format_error(bad);
  expect_format_error(good.substr(0, good.size() / 2));
  expect_format_error(good.substr(0, good.size() - 1));
  expect_format_error(good + std::string(1, '\0'));  // trailing byte
  ++cases;
  try {
    load_weights(dir.file("absent.ersw"));
  } catch (const IoError&) {
    ++rejected;
  }
  const bool ok = same_ckpt && same_emb && round_trip && rejected == cases;
  return {ok, fmt("same seed twice: checkpoints bitwise equal %s, embeddings bitwise equal %s; save/load round "
                  "trip bitwise %s; corrupted/missing files rejected %d/%d",
                  same_ckpt ? "yes" : "no", same_emb ? "yes" : "no", round_trip ? "yes" : "no", rejected, cases)};
}

Outcome ac8() {
  const RunConfig standard = preset_config("standard"), lmt = preset_config("lmt");
  const OptimConfig& o = standard.train.optim;
  const auto warmup_end = static_cast<std::int64_t>(o.warmup_epochs * o.steps_per_epoch);
  const double lr_peak = lr_schedule(warmup_end, o);

  // AAM at m = 0 against softmax cross-entropy over s * cos, computed here.
  std::mt19937_64 rng(8);
  const Map emb = oracle::random_map({6, 192}, rng), head = oracle::random_map({16, 192}, rng);
  std::vector<int> labels(6);
  for (auto& l : labels) l = static_cast<int>(rng() % 16);
  const double s = standard.train.aam.scale;
  double reference = 0;
  for (int r = 0; r < 6; ++r) {
    std::vector<double> z(16);
    double er = 0;
    for (int i = 0; i < 192; ++i) er += emb[r * 192 + i] * emb[r * 192 + i];
    for (int k = 0; k < 16; ++k) {
      double dot = 0, hk = 0;
      for (int i = 0; i < 192; ++i) dot += emb[r * 192 + i] * head[k * 192 + i], hk += head[k * 192 + i] * head[k * 192 + i];
      z[static_cast<std::size_t>(k)] = s * dot / std::sqrt(er * hk);
    }
    double mx = z[0], sum = 0;
    for (double v : z) mx = std::max(mx, v);
    for (double v : z) sum += std::exp(v - mx);
    reference += (mx + std::log(sum) - z[static_cast<std::size_t>(labels[static_cast<std::size_t>(r)])]) / 6;
  }
  const double aam = aam_softmax_loss(Var<double>::constant(emb), labels, Var<double>::constant(head),
                                      AamConfig{0.0, s, 16})
                         .value()[0];
  const double aam_err = std::abs(aam - reference);

  const bool presets = standard.train.aam.margin == 0.3 && lmt.train.aam.margin == 0.5 &&
                       standard.train.crop_seconds == 3.0 && lmt.train.crop_seconds == 6.0 &&
                       crop_frames(standard.train.crop_seconds, 16000) == 298 &&
                       crop_frames(lmt.train.crop_seconds, 16000) == 598;
  const bool ok = std::abs(lr_peak - 0.2) <= 1e-12 && aam_err <= 1e-12 && presets;
  return {ok, fmt("lr at warmup end (step %lld) = %.12g (want 0.2); AAM m=0 vs scaled-cosine softmax |diff| %.1e; "
                  "presets standard m=0.3 3 s (298 frames), lmt m=0.5 6 s (598 frames): %s",
                  static_cast<long long>(warmup_end), lr_peak, aam_err, presets ? "yes" : "no")};
}

}  // namespace

int main() {
  Scratch scratch;
  struct Criterion {
    const char* id;
    const char* title;
    double budget_seconds;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {"AC1", "parameter count", 1, ac1},
      {"AC2", "shape conformance", 10, ac2},
      {"AC3", "gradient suite", 300, ac3},
      {"AC4", "reduction equivalences", 60, ac4},
      {"AC5", "metric oracles", 30, ac5},
      {"AC6", "desk-scale end to end", 600, [&] { return ac6(scratch); }},
      {"AC7", "determinism and serialization", 120, [&] { return ac7(scratch); }},
      {"AC8", "schedule and loss constants", 10, ac8},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_budget = seconds <= c.budget_seconds;
    const bool passed = o.passed && in_budget;
    failures += !passed;
    std::cout << c.id << " " << (passed ? "PASS" : "FAIL") << " " << c.title << ": " << o.detail
              << fmt(" [%.1f s, budget %.0f s%s]", seconds, c.budget_seconds, in_budget ? "" : ", EXCEEDED")
              << std::endl;
  }
  std::cout << (failures == 0 ? "ALL PASS" : fmt("%d FAILED", failures)) << std::endl;
  return failures == 0 ? 0 : 1;
}
