// Copyright 2026 The eres2net-cpp Authors
// Licensed under the Apache License, Version 2.0

#ifndef ERES2NET_EVAL_H_
#define ERES2NET_EVAL_H_

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace eres2net {

struct Trial {
  bool target = false;
  std::string enroll;
  std::string test;
  std::optional<double> score;
};

using TrialSet = std::vector<Trial>;

struct DcfConfig {
  double p_target = 0.01;
  double c_miss = 1.0;
  double c_fa = 1.0;

  void validate() const;
};

struct OperatingPoint {
  double value = 0.0;
  double threshold = 0.0;
};

/// Inner product of the L2-normalized vectors. Throws ContractError on a
/// zero vector and ShapeError on a length mismatch.
double cosine_score(std::span<const float> a, std::span<const float> b);

/// A trial is accepted when score >= threshold. Sweeps every distinct score
/// plus +inf and interpolates linearly on the ROC segment where FAR - FRR
/// changes sign. Throws ContractError unless both classes are present.
OperatingPoint compute_eer(std::span<const double> target_scores, std::span<const double> nontarget_scores);
OperatingPoint compute_eer(const TrialSet& trials);

/// Minimum over thresholds {distinct scores, -inf, +inf} of
/// c_miss*P_miss*p_target + c_fa*P_fa*(1-p_target), normalized by
/// min(c_miss*p_target, c_fa*(1-p_target)).
OperatingPoint compute_mindcf(std::span<const double> target_scores, std::span<const double> nontarget_scores,
                              const DcfConfig& config = {});
OperatingPoint compute_mindcf(const TrialSet& trials, const DcfConfig& config = {});

/// Lines "<0|1> <enroll-id> <test-id>". Errors carry the 1-based line number.
TrialSet parse_trials_text(const std::string& text, const std::string& origin = "<memory>");
TrialSet parse_trials(const std::string& path);
void write_trials(const std::string& path, const TrialSet& trials);

/// Lines "<enroll-id> <test-id> <score>", score printed with %.6f.
void write_scores(const std::string& path, const TrialSet& trials);
TrialSet parse_scores(const std::string& path);

/// Copies scores onto `trials` by (enroll, test); throws FormatError naming
/// the first pair without a score.
void attach_scores(TrialSet& trials, const TrialSet& scored);

using EmbeddingTable = std::map<std::string, std::vector<float>>;

/// Embedding files use the tensor container: one rank-1 tensor per id.
void write_embeddings(const std::string& path, const EmbeddingTable& table);
EmbeddingTable read_embeddings(const std::string& path);

/// Scores every trial by cosine similarity; throws FormatError naming an
/// id missing from the table.
void score_trials(TrialSet& trials, const EmbeddingTable& table);

struct Metrics {
  OperatingPoint eer;
  OperatingPoint mindcf;
  int targets = 0;
  int nontargets = 0;
};

Metrics evaluate(const TrialSet& trials, const DcfConfig& config = {});
/// "eer=<%.4f> mindcf=<%.4f>"
std::string format_metrics(const Metrics& m);
void write_metrics_csv(const std::string& path, const Metrics& m);

}  // namespace eres2net

#endif  // ERES2NET_EVAL_H_
