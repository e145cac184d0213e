// Copyright 2026 The eres2net-cpp Authors
// Licensed under the Apache License, Version 2.0

#include "eres2net/eval.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <utility>

#include "eres2net/errors.h"
#include "eres2net/tensor_io.h"

namespace eres2net {

void DcfConfig::validate() const {
  if (!(p_target > 0 && p_target < 1)) throw ConfigError("p_target must be in (0, 1)");
  if (!(c_miss > 0 && c_fa > 0)) throw ConfigError("detection costs must be positive");
}

double cosine_score(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size())
    throw ShapeError("cosine_score: lengths " + std::to_string(a.size()) + " and " + std::to_string(b.size()));
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw ContractError("cosine_score: zero vector");
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

namespace {

// Sorted (score, is_target) pairs and per-threshold error counts: at the k-th
// distinct score, everything strictly below it is rejected.
struct Sweep {
  std::vector<double> thresholds;   // ascending distinct scores
  std::vector<int> misses;          // targets rejected
  std::vector<int> false_accepts;   // nontargets accepted
  int targets = 0;
  int nontargets = 0;
};

Sweep sweep(std::span<const double> tar, std::span<const double> non) {
  if (tar.empty() || non.empty())
    throw ContractError("metrics need at least one target and one nontarget trial (got " +
                        std::to_string(tar.size()) + " targets, " + std::to_string(non.size()) + " nontargets)");
  std::vector<std::pair<double, bool>> all;
  all.reserve(tar.size() + non.size());
  for (double s : tar) all.emplace_back(s, true);
  for (double s : non) all.emplace_back(s, false);
  for (const auto& [s, t] : all)
    if (!std::isfinite(s)) throw NumericalError("non-finite trial score");
  std::sort(all.begin(), all.end());
  Sweep sw;
  sw.targets = static_cast<int>(tar.size());
  sw.nontargets = static_cast<int>(non.size());
  int rejected_tar = 0, rejected_non = 0;
  for (std::size_t i = 0; i < all.size();) {
    const double s = all[i].first;
    sw.thresholds.push_back(s);
    sw.misses.push_back(rejected_tar);
    sw.false_accepts.push_back(sw.nontargets - rejected_non);
    for (; i < all.size() && all[i].first == s; ++i) (all[i].second ? rejected_tar : rejected_non)++;
  }
  return sw;
}

void split(const TrialSet& trials, std::vector<double>& tar, std::vector<double>& non) {
  for (const auto& t : trials) {
    if (!t.score) throw ContractError("trial " + t.enroll + " " + t.test + " has no score");
    (t.target ? tar : non).push_back(*t.score);
  }
}

}  // namespace

OperatingPoint compute_eer(std::span<const double> tar, std::span<const double> non) {
  Sweep sw = sweep(tar, non);
  sw.thresholds.push_back(std::numeric_limits<double>::infinity());
  sw.misses.push_back(sw.targets);
  sw.false_accepts.push_back(0);
  double prev_frr = 0, prev_d = 0;
  for (std::size_t j = 0; j < sw.thresholds.size(); ++j) {
    const double far = static_cast<double>(sw.false_accepts[j]) / sw.nontargets;
    const double frr = static_cast<double>(sw.misses[j]) / sw.targets;
    const double d = far - frr;
    if (d <= 0) {
      if (d == 0 || j == 0) return {frr, sw.thresholds[j]};
      const double alpha = prev_d / (prev_d - d);
      const double lo = sw.thresholds[j - 1], hi = sw.thresholds[j];
      const double thr = std::isfinite(hi) ? lo + alpha * (hi - lo) : lo;
      return {prev_frr + alpha * (frr - prev_frr), thr};
    }
    prev_frr = frr;
    prev_d = d;
  }
  return {0.5, sw.thresholds.back()};  // unreachable: the +inf threshold has d = -1
}

OperatingPoint compute_mindcf(std::span<const double> tar, std::span<const double> non, const DcfConfig& c) {
  c.validate();
  Sweep sw = sweep(tar, non);
  sw.thresholds.insert(sw.thresholds.begin(), -std::numeric_limits<double>::infinity());
  sw.misses.insert(sw.misses.begin(), 0);
  sw.false_accepts.insert(sw.false_accepts.begin(), sw.nontargets);
  sw.thresholds.push_back(std::numeric_limits<double>::infinity());
  sw.misses.push_back(sw.targets);
  sw.false_accepts.push_back(0);
  const double norm = std::min(c.c_miss * c.p_target, c.c_fa * (1 - c.p_target));
  OperatingPoint best{std::numeric_limits<double>::infinity(), 0};
  for (std::size_t j = 0; j < sw.thresholds.size(); ++j) {
    const double p_miss = static_cast<double>(sw.misses[j]) / sw.targets;
    const double p_fa = static_cast<double>(sw.false_accepts[j]) / sw.nontargets;
    const double cost = (c.c_miss * p_miss * c.p_target + c.c_fa * p_fa * (1 - c.p_target)) / norm;
    if (cost < best.value) best = {cost, sw.thresholds[j]};
  }
  return best;
}

OperatingPoint compute_eer(const TrialSet& trials) {
  std::vector<double> tar, non;
  split(trials, tar, non);
  return compute_eer(tar, non);
}

OperatingPoint compute_mindcf(const TrialSet& trials, const DcfConfig& config) {
  std::vector<double> tar, non;
  split(trials, tar, non);
  return compute_mindcf(tar, non, config);
}

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw IoError("write to '" + path + "' failed");
}

// Whitespace-separated fields of each non-blank line, with line numbers.
template <typename Fn>
void for_each_line(const std::string& text, Fn&& fn) {
  std::istringstream in(text);
  std::string line;
  for (int number = 1; std::getline(in, line); ++number) {
    std::istringstream fields(line);
    std::vector<std::string> parts;
    for (std::string f; fields >> f;) parts.push_back(f);
    if (!parts.empty()) fn(number, parts);
  }
}

std::string where(const std::string& origin, int line) { return origin + ":" + std::to_string(line) + ": "; }

std::string pair_key(const std::string& a, const std::string& b) { return a + '\n' + b; }

}  // namespace

TrialSet parse_trials_text(const std::string& text, const std::string& origin) {
  TrialSet trials;
  for_each_line(text, [&](int line, const std::vector<std::string>& f) {
    if (f.size() != 3)
      throw FormatError(where(origin, line) + "expected '<0|1> <enroll-id> <test-id>', got " +
                        std::to_string(f.size()) + " fields");
    if (f[0] != "0" && f[0] != "1")
      throw FormatError(where(origin, line) + "label must be 0 or 1, got '" + f[0] + "'");
    trials.push_back({f[0] == "1", f[1], f[2], std::nullopt});
  });
  return trials;
}

TrialSet parse_trials(const std::string& path) { return parse_trials_text(slurp(path), path); }

void write_trials(const std::string& path, const TrialSet& trials) {
  std::string out;
  for (const auto& t : trials) out += (t.target ? "1 " : "0 ") + t.enroll + ' ' + t.test + '\n';
  spit(path, out);
}

void write_scores(const std::string& path, const TrialSet& trials) {
  std::string out;
  char buf[64];
  for (const auto& t : trials) {
    if (!t.score) throw ContractError("write_scores: trial " + t.enroll + " " + t.test + " has no score");
    std::snprintf(buf, sizeof buf, " %.6f\n", *t.score);
    out += t.enroll + ' ' + t.test + buf;
  }
  spit(path, out);
}

TrialSet parse_scores(const std::string& path) {
  TrialSet scored;
  for_each_line(slurp(path), [&](int line, const std::vector<std::string>& f) {
    if (f.size() != 3)
      throw FormatError(where(path, line) + "expected '<enroll-id> <test-id> <score>', got " +
                        std::to_string(f.size()) + " fields");
    std::size_t used = 0;
    double s = 0;
    try {
      s = std::stod(f[2], &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != f[2].size() || !std::isfinite(s))
      throw FormatError(where(path, line) + "invalid score '" + f[2] + "'");
    scored.push_back({false, f[0], f[1], s});
  });
  return scored;
}

void attach_scores(TrialSet& trials, const TrialSet& scored) {
  std::map<std::string, double> by_pair;
  for (const auto& s : scored) by_pair[pair_key(s.enroll, s.test)] = *s.score;
  for (auto& t : trials) {
    auto it = by_pair.find(pair_key(t.enroll, t.test));
    if (it == by_pair.end()) throw FormatError("no score for trial '" + t.enroll + " " + t.test + "'");
    t.score = it->second;
  }
}

void write_embeddings(const std::string& path, const EmbeddingTable& table) {
  std::vector<NamedTensor> tensors;
  tensors.reserve(table.size());
  for (const auto& [id, v] : table) tensors.emplace_back(id, Tensor<float>({static_cast<int>(v.size())}, v));
  write_tensor_file(path, tensors);
}

EmbeddingTable read_embeddings(const std::string& path) {
  EmbeddingTable table;
  for (auto& [id, t] : read_tensor_file(path)) {
    if (t.rank() != 1) throw FormatError(path + ": embedding '" + id + "' must be rank 1, got " + shape_string(t.dims()));
    table.emplace(id, std::move(t.storage()));
  }
  return table;
}

void score_trials(TrialSet& trials, const EmbeddingTable& table) {
  auto lookup = [&](const std::string& id) -> const std::vector<float>& {
    auto it = table.find(id);
    if (it == table.end()) throw FormatError("unknown id '" + id + "' (not in the embeddings file)");
    return it->second;
  };
  for (auto& t : trials) t.score = cosine_score(lookup(t.enroll), lookup(t.test));
}

Metrics evaluate(const TrialSet& trials, const DcfConfig& config) {
  Metrics m;
  m.eer = compute_eer(trials);
  m.mindcf = compute_mindcf(trials, config);
  for (const auto& t : trials) (t.target ? m.targets : m.nontargets)++;
  return m;
}

std::string format_metrics(const Metrics& m) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "eer=%.4f mindcf=%.4f", m.eer.value, m.mindcf.value);
  return buf;
}

void write_metrics_csv(const std::string& path, const Metrics& m) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "eer,eer_threshold,mindcf,mindcf_threshold,targets,nontargets\n%.6f,%.6f,%.6f,%.6f,%d,%d\n",
                m.eer.value, m.eer.threshold, m.mindcf.value, m.mindcf.threshold, m.targets, m.nontargets);
  spit(path, buf);
}

}  // namespace eres2net
