// Implementations of the command-line subcommands. Each takes resolved
// options and writes human-readable progress to `log`.
#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "lcbnet/biasing.hpp"
#include "lcbnet/checkpoint.hpp"
#include "lcbnet/config.hpp"
#include "lcbnet/corpus.hpp"
#include "lcbnet/errors.hpp"
#include "lcbnet/matrix_io.hpp"
#include "lcbnet/model.hpp"
#include "lcbnet/scoring.hpp"
#include "lcbnet/tokenizer.hpp"
#include "lcbnet/training.hpp"

namespace lcbnet {

inline void export_attention(const ForwardTrace& trace, const std::string& path) {
  save_matrix(path, trace.ac_attention.shape(), trace.ac_attention.data());
}

inline SynthOutput run_synth(const RunConfig& cfg, const std::string& out_dir,
                             std::ostream& log) {
  cfg.synth.validate();
  SynthOutput out = write_synthetic_corpus(cfg.synth, out_dir);
  log << "train_manifest=" << out.train_manifest << '\n'
      << "test_manifest=" << out.test_manifest << '\n'
      << "vocab=" << out.vocab << '\n'
      << "train_utterances=" << cfg.synth.n_train << '\n'
      << "train_with_rare=" << out.train_with_rare << '\n';
  return out;
}

struct TrainPaths {
  std::string vocab;
  std::string manifest;
  std::string checkpoint;
};

// Validates everything before touching data, echoes the configuration and
// logs one key=value line per epoch.
inline std::vector<EpochStats> run_train(RunConfig cfg, const TrainPaths& paths,
                                         std::ostream& log) {
  cfg.validate();
  if (paths.vocab.empty() || paths.manifest.empty() || paths.checkpoint.empty())
    throw ConfigError("train needs a vocab, a manifest and a checkpoint path");
  const Vocab vocab = load_vocab(paths.vocab);
  if (cfg.model.vocab_size == 0) cfg.model.vocab_size = vocab.size();
  if (cfg.model.vocab_size != vocab.size())
    throw ConfigError("model.vocab_size " + std::to_string(cfg.model.vocab_size) +
                      " does not match the vocab file (" +
                      std::to_string(vocab.size()) + " units)");
  cfg.model.validate();

  std::istringstream dump(dump_run_config(cfg));
  for (std::string line; std::getline(dump, line);) log << "config " << line << '\n';

  const Manifest manifest = load_manifest(paths.manifest);
  const std::vector<UtteranceSample> samples = load_samples(manifest, vocab);
  for (const auto& s : samples) {
    if (s.features.cols() != cfg.model.feature_dim)
      throw DataError(s.utt_id + ": feature dimension " +
                      std::to_string(s.features.cols()) + " != model.feature_dim " +
                      std::to_string(cfg.model.feature_dim));
  }

  LcbNet model(cfg.model, cfg.train.seed);
  Trainer trainer(model, vocab, cfg.train, cfg.sim);
  std::vector<EpochStats> history;
  for (std::size_t e = 0; e < cfg.train.epochs; ++e) {
    history.push_back(trainer.run_epoch(samples));
    log << format_epoch_log(history.back()) << '\n' << std::flush;
  }
  const auto dir = std::filesystem::path(paths.checkpoint).parent_path();
  if (!dir.empty()) std::filesystem::create_directories(dir);
  save_checkpoint(model, paths.checkpoint);
  log << "checkpoint=" << paths.checkpoint << '\n';
  return history;
}

struct DecodePaths {
  std::string checkpoint;
  std::string vocab;
  std::string manifest;
  std::string output;
};

// One `utt_id \t text` line per utterance. Without bias the phrase files are
// never opened.
inline std::map<std::string, std::string> run_decode(const DecodeConfig& cfg,
                                                     const DecodePaths& paths,
                                                     DecodeMode mode,
                                                     std::ostream& log) {
  const auto model = load_checkpoint(paths.checkpoint);
  const Vocab vocab = load_vocab(paths.vocab);
  if (vocab.size() != model->config().vocab_size)
    throw DataError("vocab size does not match the checkpoint");
  const Manifest manifest = load_manifest(paths.manifest, false);
  std::ofstream out(paths.output, std::ios::binary);
  if (!out) throw DataError("cannot write " + paths.output);
  std::map<std::string, std::string> hyps;
  const bool with_bias = mode == DecodeMode::with_bias;
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
    const ManifestEntry& e = manifest.entries[i];
    if (with_bias && (e.phrase_path.empty() || !std::filesystem::exists(e.phrase_path))) {
      log << "warning: " << e.utt_id << ": phrase file '" << e.phrase_path
          << "' missing; decoding with the empty context\n";
    }
    const UtteranceSample s = make_sample(e, vocab, with_bias);
    const LongContextSequence ctx = inference_context(s, vocab, mode, cfg.seed, i);
    const std::string text =
        decode_text(*model, vocab, s.features, ctx.ids, cfg.max_len);
    out << e.utt_id << '\t' << text << '\n';
    hyps[e.utt_id] = text;
  }
  log << "decoded=" << manifest.entries.size() << " mode="
      << (with_bias ? "with_bias" : "without_bias") << '\n';
  return hyps;
}

struct ScorePaths {
  std::string manifest;
  std::string hypotheses;
  std::string report;  // optional key=value output file
};

// Prints the summary line, then the key=value block (to `report` when set,
// otherwise after the summary).
inline TriWerReport run_score(const ScorePaths& paths, InsertionPolicy policy,
                              std::ostream& log) {
  const Manifest manifest = load_manifest(paths.manifest, true);
  const auto hyps = load_hypotheses(paths.hypotheses);
  std::vector<std::string> refs, hyp_texts;
  std::vector<BiasVocab> bias;
  for (const ManifestEntry& e : manifest.entries) {
    const auto it = hyps.find(e.utt_id);
    if (it == hyps.end()) throw DataError("no hypothesis for " + e.utt_id);
    refs.push_back(e.transcript);
    hyp_texts.push_back(it->second);
    bias.push_back(e.phrase_path.empty()
                       ? BiasVocab{}
                       : bias_vocab_from_phrases(load_phrase_file(e.phrase_path).phrases()));
  }
  const TriWerReport report = score_corpus(refs, hyp_texts, bias, policy);
  log << format_summary(report) << '\n';
  if (paths.report.empty()) {
    log << format_key_values(report);
  } else {
    std::ofstream out(paths.report, std::ios::binary);
    if (!out) throw DataError("cannot write " + paths.report);
    out << format_key_values(report);
  }
  return report;
}

struct SimulateResult {
  SimulationStats word;
  SimulationStats bpe;
  std::size_t batches = 0;
};

// Writes one phrase file per batch (manifest order, train.batch_size
// utterances each) and reports selection rates.
inline SimulateResult run_simulate(const RunConfig& cfg, const std::string& vocab_path,
                                   const std::string& manifest_path,
                                   const std::string& out_dir, std::ostream& log) {
  cfg.sim.validate();
  cfg.train.validate();
  const Vocab vocab = load_vocab(vocab_path);
  const Manifest manifest = load_manifest(manifest_path, false);
  std::filesystem::create_directories(out_dir);
  Rng rng = make_stream(cfg.sim.rng_seed, 0x5140);
  SimulateResult result;
  const std::size_t bs = cfg.train.batch_size;
  for (std::size_t start = 0; start < manifest.entries.size(); start += bs) {
    std::vector<TokenSeq> refs;
    for (std::size_t i = start; i < std::min(start + bs, manifest.entries.size()); ++i)
      refs.push_back(tokenize(manifest.entries[i].transcript, vocab));
    const PhraseList list =
        simulate_phrases(refs, vocab, cfg.sim, rng, &result.word, &result.bpe);
    char name[32];
    std::snprintf(name, sizeof name, "batch_%05zu.txt", result.batches++);
    save_phrase_file(list, (std::filesystem::path(out_dir) / name).string());
  }
  log << "batches=" << result.batches << '\n'
      << "word.eligible=" << result.word.eligible_words << '\n'
      << "word.selected=" << result.word.selected_words << '\n'
      << "word.fraction=" << format_fixed(result.word.fraction(), 4) << '\n'
      << "bpe.eligible=" << result.bpe.eligible_words << '\n'
      << "bpe.selected=" << result.bpe.selected_words << '\n'
      << "bpe.fraction=" << format_fixed(result.bpe.fraction(), 4) << '\n';
  return result;
}

struct AttentionPaths {
  std::string checkpoint;
  std::string vocab;
  std::string manifest;
  std::string output;
};

// Runs one forward pass for `utt_id` and writes its AC attention
// [heads x T x L]. Phrase spans of the context are printed for analysis.
inline ForwardTrace run_attention(const DecodeConfig& cfg, const AttentionPaths& paths,
                                  const std::string& utt_id, DecodeMode mode,
                                  std::ostream& log) {
  const auto model = load_checkpoint(paths.checkpoint);
  const Vocab vocab = load_vocab(paths.vocab);
  const Manifest manifest =
      load_manifest(paths.manifest, mode == DecodeMode::with_bias);
  std::size_t index = manifest.entries.size();
  for (std::size_t i = 0; i < manifest.entries.size(); ++i)
    if (manifest.entries[i].utt_id == utt_id) index = i;
  if (index == manifest.entries.size())
    throw DataError("utterance " + utt_id + " not in " + paths.manifest);
  const UtteranceSample s =
      make_sample(manifest.entries[index], vocab, mode == DecodeMode::with_bias);
  const LongContextSequence ctx = inference_context(s, vocab, mode, cfg.seed, index);
  num::NoGradGuard no_grad;
  const ForwardTrace trace = model->forward(s.features, ctx.ids, {});
  export_attention(trace, paths.output);
  const auto& shape = trace.ac_attention.shape();
  log << "heads=" << shape[0] << " frames=" << shape[1] << " context=" << shape[2]
      << '\n';
  for (const PhraseSpan& span : ctx.phrase_spans) {
    log << "phrase start=" << span.start << " end=" << span.end
        << " label=" << ctx.bias_labels[span.start]
        << " text=" << ctx.phrases[span.phrase_index] << '\n';
  }
  return trace;
}

}  // namespace lcbnet
