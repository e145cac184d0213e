// Copyright 2026 The eres2net-cpp Authors
// Licensed under the Apache License, Version 2.0

#ifndef ERES2NET_CLI_H_
#define ERES2NET_CLI_H_

#include <iosfwd>
#include <string>
#include <vector>

#include "eres2net/eval.h"
#include "eres2net/training.h"

namespace eres2net {

// Exit codes shared by every subcommand.
inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitNumerical = 2;
inline constexpr int kExitIo = 3;

/// Entry point of the `eres2net` tool; args exclude the program name.
/// Subcommands: param-count, gradcheck, train, extract, score, eval,
/// show-config. Errors go to `err` and map to the exit codes above.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Utterances from `<dir>/<speaker>/<utt>.wav`; speakers are numbered in
/// sorted directory order and ids are "<speaker>/<utt>".
SynthDataset load_wav_dataset(const std::string& dir, const FbankConfig& fbank_config = {});

/// Every unordered pair of utterances, labelled target when the speakers
/// match, in (enroll, test) id order.
TrialSet all_pairs_trials(const SynthDataset& dataset);

/// Eval-mode embedding of each whole utterance after instance normalization.
EmbeddingTable extract_embeddings(Model<float>& model, const SynthDataset& dataset);

/// Builds the model described by `config` and fills it from a checkpoint.
/// Classifier tensors ("head/...") in the file are ignored.
Model<float> load_model(const ModelConfig& config, const std::string& weights_path);

}  // namespace eres2net

#endif  // ERES2NET_CLI_H_
