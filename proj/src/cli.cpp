// Copyright 2026 The eres2net-cpp Authors
// Licensed under the Apache License, Version 2.0

#include "eres2net/cli.h"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <ostream>

#include "eres2net/config.h"
#include "eres2net/grad_suite.h"
#include "eres2net/init.h"
#include "eres2net/kernels.h"
#include "eres2net/tensor_io.h"

namespace eres2net {

namespace fs = std::filesystem;

SynthDataset load_wav_dataset(const std::string& dir, const FbankConfig& fbank_config) {
  if (!fs::is_directory(dir)) throw IoError("wav directory '" + dir + "' does not exist");
  std::vector<fs::path> speakers;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory()) speakers.push_back(e.path());
  std::sort(speakers.begin(), speakers.end());
  SynthDataset ds;
  ds.config.num_speakers = static_cast<int>(speakers.size());
  for (std::size_t s = 0; s < speakers.size(); ++s) {
    std::vector<fs::path> wavs;
    for (const auto& e : fs::directory_iterator(speakers[s]))
      if (e.is_regular_file() && e.path().extension() == ".wav") wavs.push_back(e.path());
    std::sort(wavs.begin(), wavs.end());
    for (const auto& w : wavs) {
      const Waveform wave = read_wav(w.string());
      ds.config.sample_rate = wave.sample_rate;
      ds.utterances.push_back({speakers[s].filename().string() + "/" + w.stem().string(), static_cast<int>(s),
                               fbank(wave, fbank_config)});
    }
  }
  if (ds.utterances.empty()) throw FormatError("no .wav files under '" + dir + "/<speaker>/'");
  return ds;
}

TrialSet all_pairs_trials(const SynthDataset& dataset) {
  std::vector<const Utterance*> sorted;
  for (const auto& u : dataset.utterances) sorted.push_back(&u);
  std::sort(sorted.begin(), sorted.end(), [](const Utterance* a, const Utterance* b) { return a->id < b->id; });
  TrialSet trials;
  for (std::size_t i = 0; i < sorted.size(); ++i)
    for (std::size_t j = i + 1; j < sorted.size(); ++j)
      trials.push_back({sorted[i]->speaker == sorted[j]->speaker, sorted[i]->id, sorted[j]->id, std::nullopt});
  return trials;
}

EmbeddingTable extract_embeddings(Model<float>& model, const SynthDataset& dataset) {
  NoGradGuard no_grad;
  EmbeddingTable table;
  for (const auto& utt : dataset.utterances) {
    const Tensor<float> normed = instance_norm(utt.features);
    const int frames = normed.dim(0), bins = normed.dim(1);
    auto x = Tensor<float>::feature_map(1, 1, bins, frames);
    for (int t = 0; t < frames; ++t)
      for (int f = 0; f < bins; ++f) x.at(0, 0, f, t) = normed[static_cast<std::int64_t>(t) * bins + f];
    const Tensor<float> emb = forward(model, Var<float>::constant(x), BnMode::kEval).value();
    if (!emb.all_finite()) throw NumericalError("non-finite embedding for '" + utt.id + "'");
    if (!table.emplace(utt.id, std::vector<float>(emb.data().begin(), emb.data().end())).second)
      throw FormatError("duplicate utterance id '" + utt.id + "'");
  }
  return table;
}

Model<float> load_model(const ModelConfig& config, const std::string& weights_path) {
  ParamStore<float> loaded = load_weights(weights_path);
  ParamStore<float> body;
  for (const auto& e : loaded.entries())
    if (e.name.rfind("head/", 0) != 0) body.add(e.name, e.value(), e.kind);
  Model<float> model = build_model<float>(config, 0);
  assign_weights(model.params, body);
  return model;
}

namespace {

std::string millions(std::int64_t n) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2fM", static_cast<double>(n) / 1e6);
  return buf;
}

RunConfig config_or_default(const std::string& path) {
  return path.empty() ? preset_config("standard") : load_config(path);
}

void apply_threads(const RunConfig& c) {
  if (c.threads > 0) kernels::set_num_threads(c.threads);
}

SynthDataset corpus(const RunConfig& c, const std::string& wav_dir, bool heldout) {
  return wav_dir.empty() ? make_synth_dataset(c.synth, heldout) : load_wav_dataset(wav_dir);
}

int cmd_param_count(const RunConfig& c, bool include_head, std::ostream& out) {
  Model<float> model = build_model<float>(c.train.model, c.train.seed);
  const int classes = c.train.aam.num_classes > 0 ? c.train.aam.num_classes : c.synth.num_speakers;
  add_linear(model.params, "head/weight", classes, c.train.model.embedding_dim, c.train.seed);
  const ParamCounts n = count_param_regions(model.params);
  out << "variant=" << variant_name(c.train.model.variant) << " width_multiplier=" << c.train.model.width_multiplier
      << "\n";
  out << "frame_level=" << n.frame_level << " (" << millions(n.frame_level) << ")\n";
  out << "with_embedding=" << n.total(false) << " (" << millions(n.total(false)) << ")\n";
  out << "with_head=" << n.total(true) << " (" << millions(n.total(true)) << ") classes=" << classes << "\n";
  const std::int64_t selected = n.total(include_head);
  out << "params=" << selected << " (" << millions(selected) << ") head=" << (include_head ? "included" : "excluded")
      << "\n";
  return kExitOk;
}

int cmd_gradcheck(GradSuiteOptions options, int seeds, std::ostream& out) {
  bool passed = true;
  std::string first_failure;
  for (int k = 0; k < seeds; ++k) {
    GradSuiteOptions o = options;
    o.seed = options.seed + static_cast<std::uint64_t>(k);
    for (const auto& entry : run_grad_suite(o).entries) {
      out << entry.component << " seed=" << o.seed << " " << entry.report.summary() << "\n";
      if (!entry.report.passed && passed) {
        passed = false;
        first_failure = entry.component + ": " + entry.report.first_failure.value_or("?");
      }
    }
  }
  out << "gradcheck " << (passed ? "PASS" : "FAIL");
  if (!passed) out << " first_failure=" << first_failure;
  out << "\n";
  return passed ? kExitOk : kExitNumerical;
}

int cmd_train(const RunConfig& c, std::int64_t steps, const std::string& out_path, std::string loss_path,
              const std::string& wav_dir, std::ostream& out) {
  apply_threads(c);
  const SynthDataset data = corpus(c, wav_dir, false);
  TrainConfig tc = c.train;
  if (!wav_dir.empty()) tc.aam.num_classes = data.config.num_speakers;
  auto result = train(tc, data, steps, [&](const TrainStep& s) {
    if (s.step % 10 == 0) {
      char buf[96];
      std::snprintf(buf, sizeof buf, "step=%lld lr=%.6f loss=%.6f\n", static_cast<long long>(s.step), s.lr, s.loss);
      out << buf << std::flush;
    }
  });
  save_weights(result.model.params, out_path);
  if (loss_path.empty()) loss_path = out_path + ".loss.csv";
  write_loss_csv(loss_path, result.trace);
  out << "wrote " << out_path << " and " << loss_path << "\n";
  return kExitOk;
}

int cmd_extract(const RunConfig& c, const std::string& weights, const std::string& wav_dir, bool train_split,
                const std::string& out_path, const std::string& trials_out, std::ostream& out) {
  apply_threads(c);
  Model<float> model = load_model(c.train.model, weights);
  const SynthDataset data = corpus(c, wav_dir, !train_split);
  write_embeddings(out_path, extract_embeddings(model, data));
  out << "wrote " << data.utterances.size() << " embeddings to " << out_path << "\n";
  if (!trials_out.empty()) {
    const TrialSet trials = all_pairs_trials(data);
    write_trials(trials_out, trials);
    out << "wrote " << trials.size() << " trials to " << trials_out << "\n";
  }
  return kExitOk;
}

int cmd_score(const std::string& embeddings, const std::string& trials_path, const std::string& out_path,
              std::ostream& out) {
  TrialSet trials = parse_trials(trials_path);
  score_trials(trials, read_embeddings(embeddings));
  write_scores(out_path, trials);
  out << "scored " << trials.size() << " trials into " << out_path << "\n";
  return kExitOk;
}

int cmd_eval(const std::string& scores, const std::string& trials_path, const std::string& csv, std::ostream& out) {
  TrialSet trials = parse_trials(trials_path);
  attach_scores(trials, parse_scores(scores));
  const Metrics m = evaluate(trials);
  out << format_metrics(m) << "\n";
  if (!csv.empty()) write_metrics_csv(csv, m);
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"ERes2Net speaker embeddings: train, extract, score and evaluate", "eres2net"};
  app.require_subcommand(1);

  std::string config_path;
  auto* pc = app.add_subcommand("param-count", "Count learnable parameters of the configured variant");
  bool include_head = false;
  std::string variant_override;
  double width_override = 0;
  pc->add_option("--config", config_path, "key=value config file");
  pc->add_option("--variant", variant_override, "res2net, res2net+lff, res2net+gff or eres2net");
  pc->add_option("--width", width_override, "width multiplier");
  pc->add_flag("--include-head", include_head, "count the AAM classifier matrix too");

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient suite (float64)");
  GradSuiteOptions gopt;
  int seeds = 1;
  gc->add_option("--tolerance", gopt.tolerance, "max relative error")->capture_default_str();
  gc->add_option("--seed", gopt.seed, "first seed")->capture_default_str();
  gc->add_option("--seeds", seeds, "number of consecutive seeds")->capture_default_str()->check(CLI::PositiveNumber);
  gc->add_option("--samples", gopt.samples_per_param, "coordinates per tensor (0 = all)")->capture_default_str();
  gc->add_flag("--network", gopt.include_network, "also check the whole network end to end");
  gc->add_flag("--inject-fault", gopt.inject_fault, "corrupt one analytic gradient element (test hook)");

  auto* tr = app.add_subcommand("train", "Train on the synthetic corpus or a wav directory");
  std::int64_t steps = 0;
  std::string out_path, loss_path, wav_dir;
  bool synth = false;
  tr->add_option("--config", config_path, "key=value config file");
  tr->add_option("--steps", steps, "override total steps (0 = from config)");
  tr->add_option("--out", out_path, "checkpoint path")->required();
  tr->add_option("--loss-csv", loss_path, "loss trace (default <out>.loss.csv)");
  auto* tr_wav = tr->add_option("--wav-dir", wav_dir, "corpus laid out as <dir>/<speaker>/<utt>.wav");
  tr->add_flag("--synth", synth, "use the synthetic corpus (default)")->excludes(tr_wav);

  auto* ex = app.add_subcommand("extract", "Write one embedding per utterance");
  std::string weights, trials_out;
  bool train_split = false;
  ex->add_option("--config", config_path, "key=value config file");
  ex->add_option("--weights", weights, "checkpoint")->required();
  auto* ex_wav = ex->add_option("--wav-dir", wav_dir, "corpus laid out as <dir>/<speaker>/<utt>.wav");
  ex->add_flag("--synth", synth, "use the synthetic held-out utterances")->excludes(ex_wav);
  ex->add_flag("--train-split", train_split, "with --synth, use the training utterances instead");
  ex->add_option("--out", out_path, "embeddings file")->required();
  ex->add_option("--trials-out", trials_out, "also write all-pairs trials for the extracted set");

  auto* sc = app.add_subcommand("score", "Cosine-score a trial list");
  std::string embeddings, trials_path;
  sc->add_option("--embeddings", embeddings, "embeddings file")->required();
  sc->add_option("--trials", trials_path, "trial list")->required();
  sc->add_option("--out", out_path, "score file")->required();

  auto* ev = app.add_subcommand("eval", "EER and MinDCF of a score file");
  std::string scores, csv;
  ev->add_option("--scores", scores, "score file")->required();
  ev->add_option("--trials", trials_path, "trial list with labels")->required();
  ev->add_option("--out", csv, "metrics CSV");

  auto* sh = app.add_subcommand("show-config", "Print the fully resolved configuration");
  sh->add_option("--config", config_path, "key=value config file");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (*pc) {
      RunConfig c = config_or_default(config_path);
      if (!variant_override.empty()) c.train.model.variant = parse_variant(variant_override);
      if (width_override > 0) c.train.model.width_multiplier = width_override;
      return cmd_param_count(c, include_head, out);
    }
    if (*gc) return cmd_gradcheck(gopt, seeds, out);
    if (*tr) return cmd_train(config_or_default(config_path), steps, out_path, loss_path, wav_dir, out);
    if (*ex) return cmd_extract(config_or_default(config_path), weights, wav_dir, train_split, out_path, trials_out, out);
    if (*sc) return cmd_score(embeddings, trials_path, out_path, out);
    if (*ev) return cmd_eval(scores, trials_path, csv, out);
    if (*sh) {
      out << format_config(config_or_default(config_path));
      return kExitOk;
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::bad_alloc&) {
    err << "error: out of memory\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  }
  return kExitValidation;
}

}  // namespace eres2net
