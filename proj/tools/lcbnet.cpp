// lcbnet command-line driver.
//
// Exit codes: 0 success, 2 configuration error, 3 data error, 1 otherwise.

#include <exception>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "lcbnet/lcbnet.hpp"

namespace {

using namespace lcbnet;

// Loads --config (if any), then applies --set overrides in order.
RunConfig resolve_config(const std::string& path,
                         const std::vector<std::string>& overrides) {
  RunConfig cfg = path.empty() ? RunConfig::from_preset("toy") : load_run_config(path);
  for (const std::string& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw ConfigError("--set expects section.key=value, got '" + kv + "'");
    const std::string key = detail::trim(kv.substr(0, eq));
    const std::string value = detail::trim(kv.substr(eq + 1));
    if (key == "run.preset")
      throw ConfigError("run.preset can only be set in the config file");
    set_config_value(cfg, key, value);
  }
  return cfg;
}

std::string pick(const std::string& flag, const std::string& from_config) {
  return flag.empty() ? from_config : flag;
}

DecodeMode parse_mode(const std::string& mode) {
  if (mode == "with_bias") return DecodeMode::with_bias;
  if (mode == "without_bias") return DecodeMode::without_bias;
  throw ConfigError("--mode must be with_bias or without_bias");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LCB-net long-context biasing ASR on synthetic corpora"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  auto add_config = [&](CLI::App* cmd) {
    cmd->add_option("-c,--config", config_path, "run config file (section.key = value)");
    cmd->add_option("--set", overrides, "override a config key: section.key=value");
  };

  std::string out_dir;
  auto* synth = app.add_subcommand("synth", "write a synthetic corpus");
  add_config(synth);
  synth->add_option("-o,--out", out_dir, "output directory")->required();

  std::string vocab, manifest, checkpoint, output, log_path;
  bool single_thread = false;
  auto* train = app.add_subcommand("train", "train a model");
  add_config(train);
  train->add_option("--vocab", vocab, "vocab file (default paths.vocab)");
  train->add_option("--manifest", manifest, "training manifest (default paths.train_manifest)");
  train->add_option("-o,--out", checkpoint,
                    "checkpoint to write (default <paths.checkpoint_dir>/model.ckpt)");
  train->add_option("--log", log_path, "also write the training log here");
  train->add_flag("--single-thread", single_thread, "force train.threads = 1");

  std::string mode = "with_bias";
  auto* decode = app.add_subcommand("decode", "greedy decoding");
  add_config(decode);
  decode->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  decode->add_option("--vocab", vocab, "vocab file (default paths.vocab)");
  decode->add_option("--manifest", manifest, "manifest (default paths.eval_manifest)");
  decode->add_option("--mode", mode, "with_bias or without_bias");
  decode->add_option("-o,--out", output, "hypothesis file")->required();
  decode->add_flag("--single-thread", single_thread, "accepted for symmetry; decoding is serial");

  std::string hyp_path, report_path, insertions = "by_hypothesis";
  auto* score = app.add_subcommand("score", "WER / U-WER / B-WER");
  score->add_option("--manifest", manifest, "reference manifest")->required();
  score->add_option("--hyp", hyp_path, "hypothesis file")->required();
  score->add_option("--report", report_path, "write the key=value block here");
  score->add_option("--insertions", insertions, "by_hypothesis or unbiased");

  auto* simulate = app.add_subcommand("simulate", "simulate phrase lists per batch");
  add_config(simulate);
  simulate->add_option("--vocab", vocab, "vocab file (default paths.vocab)");
  simulate->add_option("--manifest", manifest, "manifest (default paths.train_manifest)");
  simulate->add_option("-o,--out", out_dir, "output directory")->required();

  std::string utt_id;
  auto* attention = app.add_subcommand("attention", "export AC attention of one utterance");
  add_config(attention);
  attention->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  attention->add_option("--vocab", vocab, "vocab file (default paths.vocab)");
  attention->add_option("--manifest", manifest, "manifest (default paths.eval_manifest)");
  attention->add_option("--utt", utt_id, "utterance id")->required();
  attention->add_option("--mode", mode, "with_bias or without_bias");
  attention->add_option("-o,--out", output, "matrix file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*synth) {
      run_synth(resolve_config(config_path, overrides), out_dir, std::cout);
    } else if (*train) {
      RunConfig cfg = resolve_config(config_path, overrides);
      if (single_thread) cfg.train.threads = 1;
      TrainPaths paths{pick(vocab, cfg.paths.vocab),
                       pick(manifest, cfg.paths.train_manifest), checkpoint};
      if (paths.checkpoint.empty() && !cfg.paths.checkpoint_dir.empty())
        paths.checkpoint =
            (std::filesystem::path(cfg.paths.checkpoint_dir) / "model.ckpt").string();
      if (log_path.empty()) {
        run_train(cfg, paths, std::cout);
      } else {
        std::ofstream log_file(log_path);
        if (!log_file) throw DataError("cannot write " + log_path);
        struct Tee : std::streambuf {
          std::streambuf *a, *b;
          int overflow(int c) override {
            if (c == EOF) return !EOF;
            return a->sputc(static_cast<char>(c)) == EOF ||
                           b->sputc(static_cast<char>(c)) == EOF
                       ? EOF
                       : c;
          }
          int sync() override { return a->pubsync() | b->pubsync(); }
        } tee;
        tee.a = std::cout.rdbuf();
        tee.b = log_file.rdbuf();
        std::ostream both(&tee);
        run_train(cfg, paths, both);
      }
    } else if (*decode) {
      const RunConfig cfg = resolve_config(config_path, overrides);
      run_decode(cfg.decode,
                 {checkpoint, pick(vocab, cfg.paths.vocab),
                  pick(manifest, cfg.paths.eval_manifest), output},
                 parse_mode(mode), std::cerr);
    } else if (*score) {
      InsertionPolicy policy = InsertionPolicy::by_hypothesis_word;
      if (insertions == "unbiased") policy = InsertionPolicy::unbiased;
      else if (insertions != "by_hypothesis")
        throw ConfigError("--insertions must be by_hypothesis or unbiased");
      run_score({manifest, hyp_path, report_path}, policy, std::cout);
    } else if (*simulate) {
      const RunConfig cfg = resolve_config(config_path, overrides);
      run_simulate(cfg, pick(vocab, cfg.paths.vocab),
                   pick(manifest, cfg.paths.train_manifest), out_dir, std::cout);
    } else if (*attention) {
      const RunConfig cfg = resolve_config(config_path, overrides);
      run_attention(cfg.decode,
                    {checkpoint, pick(vocab, cfg.paths.vocab),
                     pick(manifest, cfg.paths.eval_manifest), output},
                    utt_id, parse_mode(mode), std::cout);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
