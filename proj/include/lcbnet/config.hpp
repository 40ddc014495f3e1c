// Run configuration files: one `section.key = value` per line, `#` comments.
//
// `run.preset = toy|full` selects the defaults the remaining keys override;
// it may appear anywhere in the file.
#pragma once

#include <charconv>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "lcbnet/biasing.hpp"
#include "lcbnet/corpus.hpp"
#include "lcbnet/errors.hpp"
#include "lcbnet/model.hpp"
#include "lcbnet/training.hpp"

namespace lcbnet {

struct PathsConfig {
  std::string vocab;
  std::string train_manifest;
  std::string eval_manifest;
  std::string checkpoint_dir;
};

struct RunConfig {
  std::string preset = "toy";
  ModelConfig model = ModelConfig::toy();
  SimulationConfig sim;
  TrainConfig train = TrainConfig::toy();
  DecodeConfig decode;
  SynthConfig synth;
  PathsConfig paths;

  static RunConfig from_preset(const std::string& name) {
    RunConfig c;
    c.preset = name;
    if (name == "full") {
      c.model = ModelConfig::full();
      c.train = TrainConfig::full();
    } else if (name != "toy") {
      throw ConfigError("run.preset must be toy or full, got '" + name + "'");
    }
    return c;
  }

  // Everything except the vocabulary size, which comes from the vocab file.
  void validate() const {
    model.validate(false);
    sim.validate();
    train.validate();
    decode.validate();
    synth.validate();
  }
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <std::unsigned_integral T>
  requires(!std::same_as<T, bool>)
void parse_value(const std::string& key, const std::string& text, T& out) {
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  if (ec != std::errc() || ptr != text.data() + text.size())
    throw ConfigError(key + ": expected a non-negative integer, got '" + text + "'");
}

inline void parse_value(const std::string& key, const std::string& text,
                        double& out) {
  try {
    std::size_t used = 0;
    out = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
  } catch (const std::logic_error&) {
    throw ConfigError(key + ": expected a number, got '" + text + "'");
  }
  if (!std::isfinite(out)) throw ConfigError(key + ": value must be finite");
}

inline void parse_value(const std::string& key, const std::string& text,
                        bool& out) {
  if (text == "true" || text == "1") out = true;
  else if (text == "false" || text == "0") out = false;
  else throw ConfigError(key + ": expected true or false, got '" + text + "'");
}

inline void parse_value(const std::string&, const std::string& text,
                        std::string& out) {
  out = text;
}

template <std::unsigned_integral T>
  requires(!std::same_as<T, bool>)
std::string render(T v) {
  return std::to_string(v);
}
inline std::string render(double v) { return format_double(v); }
inline std::string render(bool v) { return v ? "true" : "false"; }
inline std::string render(const std::string& v) { return v; }

}  // namespace detail

// Field visitors: f(name, field) for every configurable field.
template <typename C, typename F>
void visit_model_fields(C& m, F&& f) {
  f("d_model", m.d_model);
  f("n_heads", m.n_heads);
  f("d_ffn", m.d_ffn);
  f("audio_layers", m.audio_layers);
  f("context_layers", m.context_layers);
  f("decoder_layers", m.decoder_layers);
  f("conv_window", m.conv_window);
  f("vocab_size", m.vocab_size);
  f("feature_dim", m.feature_dim);
  f("lambda_ctc", m.loss_weights.ctc);
  f("lambda_ce", m.loss_weights.ce);
  f("lambda_bce", m.loss_weights.bce);
  f("use_conformer_conv", m.use_conformer_conv);
  f("conformer_kernel", m.conformer_kernel);
  f("label_smoothing", m.label_smoothing);
  f("context_positions", m.context_positions);
  f("norm_eps", m.norm_eps);
}

template <typename C, typename F>
void visit_run_fields(C& c, F&& f) {
  visit_model_fields(c.model, [&](const char* k, auto& v) {
    f(std::string("model.") + k, v);
  });
  f("sim.word_ratio", c.sim.word_ratio);
  f("sim.bpe_ratio", c.sim.bpe_ratio);
  f("sim.max_phrases_per_batch", c.sim.max_phrases_per_batch);
  f("sim.rng_seed", c.sim.rng_seed);
  f("sim.min_word_chars", c.sim.min_word_chars);
  f("train.epochs", c.train.epochs);
  f("train.pretrain_epochs", c.train.pretrain_epochs);
  f("train.learning_rate", c.train.learning_rate);
  f("train.warmup_steps", c.train.warmup_steps);
  f("train.batch_size", c.train.batch_size);
  f("train.seed", c.train.seed);
  f("train.mask_prob", c.train.mask_prob);
  f("train.provided_mix", c.train.provided_mix);
  f("train.grad_clip", c.train.grad_clip);
  f("train.adam_beta1", c.train.adam_beta1);
  f("train.adam_beta2", c.train.adam_beta2);
  f("train.adam_eps", c.train.adam_eps);
  f("train.threads", c.train.threads);
  f("decode.max_len", c.decode.max_len);
  f("decode.seed", c.decode.seed);
  f("synth.n_train", c.synth.n_train);
  f("synth.n_test", c.synth.n_test);
  f("synth.seed", c.synth.seed);
  f("synth.frames_per_word", c.synth.frames_per_word);
  f("synth.feature_dim", c.synth.feature_dim);
  f("synth.noise", c.synth.noise);
  f("synth.rare_fraction", c.synth.rare_fraction);
  f("synth.distractors", c.synth.distractors);
  f("synth.rare_confusion", c.synth.rare_confusion);
  f("synth.min_words", c.synth.min_words);
  f("synth.max_words", c.synth.max_words);
  f("synth.merges", c.synth.merges);
  f("paths.vocab", c.paths.vocab);
  f("paths.train_manifest", c.paths.train_manifest);
  f("paths.eval_manifest", c.paths.eval_manifest);
  f("paths.checkpoint_dir", c.paths.checkpoint_dir);
}

// Splits config text into ordered (key, value) pairs.
inline std::vector<std::pair<std::string, std::string>> parse_config_lines(
    std::istream& in, const std::string& what) {
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError(what + ":" + std::to_string(line_no) + ": expected key = value");
    std::string key = detail::trim(std::string_view(t).substr(0, eq));
    std::string value = detail::trim(std::string_view(t).substr(eq + 1));
    if (key.find('.') == std::string::npos)
      throw ConfigError(what + ":" + std::to_string(line_no) +
                        ": key must have the form section.key");
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

// Sets one key; unknown keys are configuration errors.
inline void set_config_value(RunConfig& c, const std::string& key,
                             const std::string& value) {
  bool found = false;
  visit_run_fields(c, [&](const std::string& name, auto& field) {
    if (name != key) return;
    detail::parse_value(key, value, field);
    found = true;
  });
  if (!found) throw ConfigError("unknown config key '" + key + "'");
}

inline RunConfig parse_run_config(std::istream& in,
                                  const std::string& what = "config") {
  const auto lines = parse_config_lines(in, what);
  std::string preset = "toy";
  for (const auto& [k, v] : lines)
    if (k == "run.preset") preset = v;
  RunConfig c = RunConfig::from_preset(preset);
  for (const auto& [k, v] : lines)
    if (k != "run.preset") set_config_value(c, k, v);
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path);
  return parse_run_config(in, path);
}

// Every key with its current value; parse_run_config(dump) reproduces c.
inline std::string dump_run_config(const RunConfig& c) {
  std::ostringstream out;
  out << "run.preset = " << c.preset << '\n';
  visit_run_fields(c, [&](const std::string& name, const auto& field) {
    out << name << " = " << detail::render(field) << '\n';
  });
  return out.str();
}

inline std::string dump_model_config(const ModelConfig& m) {
  std::ostringstream out;
  visit_model_fields(m, [&](const char* name, const auto& field) {
    out << "model." << name << " = " << detail::render(field) << '\n';
  });
  return out.str();
}

}  // namespace lcbnet
