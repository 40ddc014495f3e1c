#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "lcbnet/checkpoint.hpp"
#include "lcbnet/config.hpp"
#include "lcbnet/corpus.hpp"
#include "lcbnet/matrix_io.hpp"
#include "lcbnet/training.hpp"

namespace lcbnet {
namespace {

namespace fs = std::filesystem;

class TempDir : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("lcbnet_io_" + std::string(::testing::UnitTest::GetInstance()
                                           ->current_test_info()
                                           ->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }
  fs::path dir_;
};

TEST(MatrixIo, RoundTripIsBitExact) {
  const std::vector<double> values = {0.1, -0.0, 1e-310, -3.5e300,
                                      std::numeric_limits<double>::min(), 42.0};
  std::stringstream buf;
  write_matrix(buf, {2, 3}, values);
  const DenseMatrix m = read_matrix(buf);
  EXPECT_EQ(m.shape, (num::Shape{2, 3}));
  ASSERT_EQ(m.values.size(), values.size());
  for (std::size_t i = 0; i < values.size(); ++i)
    EXPECT_EQ(std::bit_cast<std::uint64_t>(m.values[i]),
              std::bit_cast<std::uint64_t>(values[i]));
}

TEST(MatrixIo, HeaderIsTextAndPayloadLittleEndian) {
  std::stringstream buf;
  write_matrix(buf, {1}, std::vector<double>{1.0});
  const std::string s = buf.str();
  EXPECT_EQ(s.substr(0, s.size() - 8), "LCBMAT 1\ndtype f64le\nshape 1 1\ndata\n");
  // 1.0 = 0x3FF0000000000000
  EXPECT_EQ(static_cast<unsigned char>(s[s.size() - 1]), 0x3F);
  EXPECT_EQ(static_cast<unsigned char>(s[s.size() - 2]), 0xF0);
}

TEST(MatrixIo, Errors) {
  std::stringstream truncated;
  write_matrix(truncated, {4}, std::vector<double>{1, 2, 3, 4});
  std::string cut = truncated.str();
  cut.resize(cut.size() - 3);
  std::istringstream in(cut);
  EXPECT_THROW(read_matrix(in), DataError);
  std::istringstream bad("NOTAMATRIX\n");
  EXPECT_THROW(read_matrix(bad), DataError);
  std::stringstream out;
  EXPECT_THROW(write_matrix(out, {3}, std::vector<double>{1}), DimensionError);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  ModelConfig c = ModelConfig::toy();
  c.d_model = 8;
  c.d_ffn = 16;
  c.vocab_size = 9;
  c.feature_dim = 4;
  c.label_smoothing = 0.123456789012345;
  LcbNet net(c, 5);
  std::stringstream buf;
  write_checkpoint(buf, net);
  const std::string first = buf.str();
  const auto back = read_checkpoint(buf, "mem");
  EXPECT_EQ(back->config(), c);
  ASSERT_EQ(back->parameters().size(), net.parameters().size());
  for (std::size_t i = 0; i < net.parameters().size(); ++i) {
    const auto a = net.parameters()[i].value.data();
    const auto b = back->parameters()[i].value.data();
    EXPECT_EQ(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)), 0);
  }
  std::stringstream again;
  write_checkpoint(again, *back);
  EXPECT_EQ(again.str(), first);
}

TEST(Checkpoint, RejectsForeignFiles) {
  std::istringstream in("LCBMAT 1\n");
  EXPECT_THROW(read_checkpoint(in, "mem"), DataError);
}

TEST(RunConfig, ParseOverridesAndDumpRoundTrip) {
  std::istringstream in(
      "# comment\n"
      "model.d_model = 16\n"
      "train.learning_rate = 0.0025\n"
      "sim.word_ratio=0.25\n"
      "  paths.vocab = data/vocab.txt  \n"
      "model.use_conformer_conv = true\n");
  const RunConfig c = parse_run_config(in);
  EXPECT_EQ(c.model.d_model, 16u);
  EXPECT_EQ(c.train.learning_rate, 0.0025);
  EXPECT_EQ(c.sim.word_ratio, 0.25);
  EXPECT_EQ(c.paths.vocab, "data/vocab.txt");
  EXPECT_TRUE(c.model.use_conformer_conv);
  std::istringstream dump(dump_run_config(c));
  const RunConfig back = parse_run_config(dump);
  EXPECT_EQ(dump_run_config(back), dump_run_config(c));
  EXPECT_EQ(back.model, c.model);
}

TEST(RunConfig, PresetSelectsDefaults) {
  std::istringstream in("model.decoder_layers = 2\nrun.preset = full\n");
  const RunConfig c = parse_run_config(in);
  EXPECT_EQ(c.model.d_model, 256u);
  EXPECT_EQ(c.model.decoder_layers, 2u);
  EXPECT_EQ(c.train.epochs, 75u);
  EXPECT_EQ(c.train.warmup_steps, 20000u);
}

TEST(RunConfig, ErrorsAreConfigErrors) {
  auto parse = [](const std::string& text) {
    std::istringstream in(text);
    return parse_run_config(in);
  };
  EXPECT_THROW(parse("model.nonsense = 1\n"), ConfigError);
  EXPECT_THROW(parse("model.d_model = -3\n"), ConfigError);
  EXPECT_THROW(parse("model.d_model = 3x\n"), ConfigError);
  EXPECT_THROW(parse("train.learning_rate = fast\n"), ConfigError);
  EXPECT_THROW(parse("no equals sign\n"), ConfigError);
  EXPECT_THROW(parse("nodot = 1\n"), ConfigError);
  EXPECT_THROW(parse("run.preset = huge\n"), ConfigError);
  EXPECT_THROW(parse("model.context_positions = maybe\n"), ConfigError);
  RunConfig c = parse("train.batch_size = 0\n");
  EXPECT_THROW(c.validate(), ConfigError);
  c = parse("sim.bpe_ratio = 1.5\n");
  EXPECT_THROW(c.validate(), ConfigError);
  c = parse("model.lambda_ctc = 0\nmodel.lambda_ce = 0\nmodel.lambda_bce = 0\n");
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(EpochLog, ParsesBackLosslessly) {
  EpochStats s;
  s.epoch = 3;
  s.phase = "finetune";
  s.loss = 0.1 + 0.2;
  s.ctc = 1.0 / 3.0;
  s.ce = 2.5e-7;
  s.bce = 0.6931471805599453;
  s.ctc_infeasible = 2;
  s.utterances = 50;
  s.steps = 21;
  s.lr = 1.23456789e-4;
  EXPECT_EQ(parse_epoch_log(format_epoch_log(s)), s);
  EXPECT_THROW(parse_epoch_log("epoch=1 phase=x"), DataError);
}

TEST(WarmupSchedule, PeaksAtWarmup) {
  EXPECT_DOUBLE_EQ(warmup_learning_rate(1.0, 100, 50), 0.5);
  EXPECT_DOUBLE_EQ(warmup_learning_rate(1.0, 100, 100), 1.0);
  EXPECT_DOUBLE_EQ(warmup_learning_rate(1.0, 100, 400), 0.5);
  EXPECT_DOUBLE_EQ(warmup_learning_rate(0.3, 0, 7), 0.3);
}

using ManifestTest = TempDir;

TEST_F(ManifestTest, ResolvesRelativePathsAndValidates) {
  fs::create_directories(dir_ / "f");
  save_matrix(path("f/u1.mat"), {8, 2}, std::vector<double>(16, 0.5));
  { std::ofstream(path("p1.txt")) << "kathy\n"; }
  { std::ofstream(path("m.tsv")) << "u1\tf/u1.mat\thello  kathy\tp1.txt\n"; }
  const Manifest m = load_manifest(path("m.tsv"));
  ASSERT_EQ(m.entries.size(), 1u);
  EXPECT_EQ(m.entries[0].feature_path, path("f/u1.mat"));
  EXPECT_EQ(m.entries[0].transcript, "hello kathy");
  EXPECT_EQ(m.entries[0].phrase_path, path("p1.txt"));

  { std::ofstream(path("dup.tsv")) << "u1\tf/u1.mat\ta\t\nu1\tf/u1.mat\tb\t\n"; }
  EXPECT_THROW(load_manifest(path("dup.tsv")), DataError);
  { std::ofstream(path("missing.tsv")) << "u1\tf/nope.mat\ta\t\n"; }
  EXPECT_THROW(load_manifest(path("missing.tsv")), DataError);
  { std::ofstream(path("nophr.tsv")) << "u1\tf/u1.mat\ta\tnope.txt\n"; }
  EXPECT_THROW(load_manifest(path("nophr.tsv")), DataError);
  EXPECT_NO_THROW(load_manifest(path("nophr.tsv"), false));
  { std::ofstream(path("short.tsv")) << "u1\tf/u1.mat\n"; }
  EXPECT_THROW(load_manifest(path("short.tsv")), DataError);
}

TEST_F(ManifestTest, SaveLoadRoundTrip) {
  save_matrix(path("a.mat"), {8, 2}, std::vector<double>(16, 0.0));
  Manifest m;
  m.entries.push_back({"a", path("a.mat"), "x y", ""});
  save_manifest(m, path("out.tsv"));
  const Manifest back = load_manifest(path("out.tsv"));
  ASSERT_EQ(back.entries.size(), 1u);
  EXPECT_EQ(fs::path(back.entries[0].feature_path), fs::path(path("a.mat")));
  EXPECT_EQ(back.entries[0].phrase_path, "");
}

using SynthTest = TempDir;

TEST_F(SynthTest, EmptyCorpusHasEmptyManifests) {
  SynthConfig cfg;
  cfg.n_train = 0;
  cfg.n_test = 0;
  const SynthOutput out = write_synthetic_corpus(cfg, path("c"));
  EXPECT_TRUE(load_manifest(out.train_manifest).entries.empty());
  EXPECT_TRUE(load_manifest(out.test_manifest).entries.empty());
  EXPECT_NO_THROW(load_vocab(out.vocab));
}

std::map<std::string, std::string> read_tree(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    std::ifstream in(e.path(), std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    files[fs::relative(e.path(), root).string()] = s.str();
  }
  return files;
}

TEST_F(SynthTest, FixedSeedIsByteIdentical) {
  SynthConfig cfg;
  cfg.n_train = 12;
  cfg.n_test = 4;
  cfg.feature_dim = 6;
  write_synthetic_corpus(cfg, path("a"));
  write_synthetic_corpus(cfg, path("b"));
  const auto a = read_tree(dir_ / "a"), b = read_tree(dir_ / "b");
  EXPECT_EQ(a.size(), 2u * 16u + 3u);
  EXPECT_EQ(a, b);
}

TEST(Synth, RareFractionConcentrates) {
  SynthConfig cfg;
  cfg.feature_dim = 2;
  const SyntheticCorpus corpus(cfg);
  int rare = 0;
  for (std::size_t i = 0; i < 1000; ++i) rare += corpus.utterance(0, i).has_rare;
  EXPECT_GE(rare, 460);
  EXPECT_LE(rare, 540);
}

TEST(Synth, PhraseListHasTrueWordAndDistractors) {
  SynthConfig cfg;
  cfg.feature_dim = 2;
  cfg.rare_fraction = 1.0;
  const SyntheticCorpus corpus(cfg);
  for (std::size_t i = 0; i < 50; ++i) {
    const SynthUtterance u = corpus.utterance(1, i);
    ASSERT_TRUE(u.has_rare);
    ASSERT_EQ(u.phrases.size(), 5u);
    EXPECT_NE(std::find(u.words.begin(), u.words.end(), u.phrases[0]), u.words.end());
    const int pair = SyntheticCorpus::rare_pair_of(u.phrases[0]);
    for (std::size_t k = 1; k < u.phrases.size(); ++k)
      EXPECT_NE(SyntheticCorpus::rare_pair_of(u.phrases[k]), pair);
    EXPECT_EQ(u.frames, u.words.size() * cfg.frames_per_word);
  }
}

}  // namespace
}  // namespace lcbnet
