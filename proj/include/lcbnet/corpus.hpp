// Manifests, training examples and the synthetic corpus generator.
//
// The synthetic task maps every word to a fixed random feature template.
// Rare words come in pairs whose templates differ only by a small
// perturbation, so the audio alone cannot tell the two members apart while a
// phrase list naming one of them can.
#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "lcbnet/biasing.hpp"
#include "lcbnet/errors.hpp"
#include "lcbnet/matrix_io.hpp"
#include "lcbnet/numerics.hpp"
#include "lcbnet/rng.hpp"
#include "lcbnet/tokenizer.hpp"

namespace lcbnet {

namespace fs = std::filesystem;

struct ManifestEntry {
  std::string utt_id;
  std::string feature_path;  // resolved against the manifest directory
  std::string transcript;
  std::string phrase_path;   // empty when the utterance has no phrase file
};

struct Manifest {
  std::vector<ManifestEntry> entries;

  const ManifestEntry* find(const std::string& utt_id) const {
    for (const auto& e : entries)
      if (e.utt_id == utt_id) return &e;
    return nullptr;
  }
};

inline std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    fields.push_back(line.substr(start, tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return fields;
}

// Tab-separated: utt_id, feature_path, transcript, phrase_path (may be empty).
// Feature files must exist; phrase files are checked when requested.
inline Manifest load_manifest(const std::string& path,
                              bool require_phrase_files = true) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read manifest " + path);
  const fs::path base = fs::path(path).parent_path();
  auto resolve = [&](const std::string& p) {
    if (p.empty()) return p;
    const fs::path fp(p);
    return fp.is_absolute() ? p : (base / fp).string();
  };
  Manifest manifest;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_tabs(line);
    if (fields.size() < 3 || fields.size() > 4) {
      throw DataError(path + ":" + std::to_string(line_no) +
                      ": expected 3 or 4 tab-separated fields");
    }
    ManifestEntry e{fields[0], resolve(fields[1]), normalize_whitespace(fields[2]),
                    fields.size() == 4 ? resolve(fields[3]) : ""};
    if (e.utt_id.empty()) throw DataError(path + ": empty utt_id");
    if (!seen.insert(e.utt_id).second)
      throw DataError(path + ": duplicate utt_id " + e.utt_id);
    if (!fs::exists(e.feature_path))
      throw DataError(path + ": missing feature file " + e.feature_path);
    if (require_phrase_files && !e.phrase_path.empty() &&
        !fs::exists(e.phrase_path))
      throw DataError(path + ": missing phrase file " + e.phrase_path);
    manifest.entries.push_back(std::move(e));
  }
  return manifest;
}

// Paths are written relative to the manifest directory when possible.
inline void save_manifest(const Manifest& manifest, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write manifest " + path);
  const fs::path base = fs::path(path).parent_path();
  auto relative = [&](const std::string& p) {
    if (p.empty()) return p;
    return fs::path(p).lexically_relative(base.empty() ? "." : base).string();
  };
  for (const auto& e : manifest.entries) {
    out << e.utt_id << '\t' << relative(e.feature_path) << '\t' << e.transcript
        << '\t' << relative(e.phrase_path) << '\n';
  }
}

inline std::map<std::string, std::string> load_hypotheses(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read hypothesis file " + path);
  std::map<std::string, std::string> hyps;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw DataError(path + ": hypothesis line without a tab");
    hyps[line.substr(0, tab)] = normalize_whitespace(line.substr(tab + 1));
  }
  return hyps;
}

// ---------------------------------------------------------------------------
// Training examples

struct UtteranceSample {
  std::string utt_id;
  num::DiffArray features;  // [frames x feature_dim]
  TokenSeq reference;
  std::vector<std::string> reference_words;
  PhraseList phrases;
  bool has_phrases = false;
};

inline UtteranceSample make_sample(const ManifestEntry& entry,
                                   const Vocab& vocab, bool load_phrases) {
  UtteranceSample s;
  s.utt_id = entry.utt_id;
  DenseMatrix m = load_matrix(entry.feature_path);
  if (m.shape.size() != 2 || m.shape[0] == 0)
    throw DataError(entry.feature_path + ": features must be a non-empty matrix");
  for (double v : m.values)
    if (!std::isfinite(v)) throw DataError(entry.feature_path + ": non-finite feature");
  s.features = num::DiffArray(m.shape, std::move(m.values));
  s.reference = tokenize(entry.transcript, vocab);
  s.reference_words = split_words(entry.transcript);
  if (load_phrases && !entry.phrase_path.empty() && fs::exists(entry.phrase_path)) {
    s.phrases = load_phrase_file(entry.phrase_path);
    s.has_phrases = true;
  }
  return s;
}

inline std::vector<UtteranceSample> load_samples(const Manifest& manifest,
                                                 const Vocab& vocab,
                                                 bool load_phrases = true) {
  std::vector<UtteranceSample> out;
  out.reserve(manifest.entries.size());
  for (const auto& e : manifest.entries)
    out.push_back(make_sample(e, vocab, load_phrases));
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic corpus

struct SynthConfig {
  std::size_t n_train = 200;
  std::size_t n_test = 50;
  std::uint64_t seed = 7;
  std::size_t frames_per_word = 12;
  std::size_t feature_dim = 80;
  double noise = 0.3;
  double rare_fraction = 0.5;
  std::size_t distractors = 4;
  double rare_confusion = 0.02;
  std::size_t min_words = 3;
  std::size_t max_words = 6;
  std::size_t merges = 200;

  void validate() const {
    if (frames_per_word == 0 || feature_dim == 0)
      throw ConfigError("synth: frames_per_word and feature_dim must be >= 1");
    if (min_words == 0 || min_words > max_words)
      throw ConfigError("synth: need 1 <= min_words <= max_words");
    if (!(rare_fraction >= 0.0 && rare_fraction <= 1.0))
      throw ConfigError("synth: rare_fraction must lie in [0,1]");
    if (noise < 0.0 || rare_confusion < 0.0)
      throw ConfigError("synth: noise and rare_confusion must be >= 0");
  }
};

inline const std::vector<std::string>& synth_common_words() {
  static const std::vector<std::string> words = {
      "the",  "of",    "and",   "that",  "have",  "with", "this",
      "from", "they",  "would", "there", "their", "what", "about",
      "which", "when", "make",  "like",  "time",  "just"};
  return words;
}

// Pairs of rare words with (nearly) identical acoustics.
inline const std::vector<std::pair<std::string, std::string>>& synth_rare_pairs() {
  static const std::vector<std::pair<std::string, std::string>> pairs = {
      {"kathy", "cathy"},     {"steven", "stephen"}, {"philip", "phillip"},
      {"jeffrey", "geoffrey"}, {"brian", "bryan"},    {"allan", "alan"},
      {"carl", "karl"},        {"eric", "erik"}};
  return pairs;
}

struct SynthUtterance {
  std::string utt_id;
  std::vector<std::string> words;
  std::vector<std::string> phrases;
  std::vector<double> features;  // [frames x feature_dim]
  std::size_t frames = 0;
  bool has_rare = false;
};

class SyntheticCorpus {
 public:
  explicit SyntheticCorpus(const SynthConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    Rng rng = make_stream(cfg_.seed, 0);
    auto random_template = [&] {
      std::vector<double> t(cfg_.frames_per_word * cfg_.feature_dim);
      for (double& v : t) v = normal(rng);
      return t;
    };
    for (const auto& w : synth_common_words()) templates_[w] = random_template();
    for (const auto& [a, b] : synth_rare_pairs()) {
      std::vector<double> base = random_template();
      std::vector<double> twin = base;
      for (double& v : twin) v += cfg_.rare_confusion * normal(rng);
      templates_[a] = std::move(base);
      templates_[b] = std::move(twin);
    }
  }

  const SynthConfig& config() const { return cfg_; }

  // Index of the rare pair containing `word`, or -1.
  static int rare_pair_of(const std::string& word) {
    const auto& pairs = synth_rare_pairs();
    for (std::size_t i = 0; i < pairs.size(); ++i)
      if (pairs[i].first == word || pairs[i].second == word)
        return static_cast<int>(i);
    return -1;
  }

  // Utterance `index` of split `split` (0 train, 1 test); independent of
  // how many other utterances are generated.
  SynthUtterance utterance(std::size_t split, std::size_t index) const {
    Rng rng = make_stream(cfg_.seed, 1 + 2 * index + split * 0x100000000ULL);
    SynthUtterance u;
    u.utt_id = (split == 0 ? "train_" : "test_") + pad_index(index);
    const auto& common = synth_common_words();
    const auto& pairs = synth_rare_pairs();
    const std::size_t n_words =
        cfg_.min_words + bounded(rng, cfg_.max_words - cfg_.min_words + 1);
    for (std::size_t i = 0; i < n_words; ++i)
      u.words.push_back(common[bounded(rng, common.size())]);
    int rare_pair = -1;
    if (bernoulli(rng, cfg_.rare_fraction)) {
      rare_pair = static_cast<int>(bounded(rng, pairs.size()));
      const auto& pair = pairs[rare_pair];
      const std::string& rare = bernoulli(rng, 0.5) ? pair.first : pair.second;
      u.words[bounded(rng, n_words)] = rare;
      u.phrases.push_back(rare);
      u.has_rare = true;
    }
    std::vector<std::string> pool;
    for (std::size_t p = 0; p < pairs.size(); ++p) {
      if (static_cast<int>(p) == rare_pair) continue;
      pool.push_back(pairs[p].first);
      pool.push_back(pairs[p].second);
    }
    shuffle(std::span<std::string>(pool), rng);
    for (std::size_t i = 0; i < cfg_.distractors && i < pool.size(); ++i)
      u.phrases.push_back(pool[i]);

    const std::size_t dim = cfg_.feature_dim;
    u.frames = n_words * cfg_.frames_per_word;
    u.features.reserve(u.frames * dim);
    for (const std::string& w : u.words) {
      for (double v : templates_.at(w)) u.features.push_back(v + cfg_.noise * normal(rng));
    }
    return u;
  }

  // Word index covering input frame `frame`.
  std::size_t word_at_frame(std::size_t frame) const {
    return frame / cfg_.frames_per_word;
  }

  // Every word the generator can emit, for vocabulary training.
  static std::vector<std::string> inventory() {
    std::vector<std::string> words = synth_common_words();
    for (const auto& [a, b] : synth_rare_pairs()) {
      words.push_back(a);
      words.push_back(b);
    }
    return words;
  }

 private:
  static std::string pad_index(std::size_t i) {
    std::string s = std::to_string(i);
    return std::string(s.size() < 5 ? 5 - s.size() : 0, '0') + s;
  }

  SynthConfig cfg_;
  std::map<std::string, std::vector<double>> templates_;
};

struct SynthOutput {
  std::string train_manifest;
  std::string test_manifest;
  std::string vocab;
  std::size_t train_with_rare = 0;
};

// Writes features/, phrases/, train.tsv, test.tsv and vocab.txt under dir.
inline SynthOutput write_synthetic_corpus(const SynthConfig& cfg,
                                          const std::string& dir) {
  SyntheticCorpus corpus(cfg);
  std::error_code ec;
  fs::create_directories(fs::path(dir) / "features", ec);
  fs::create_directories(fs::path(dir) / "phrases", ec);
  if (ec) throw DataError("cannot create corpus directory " + dir);

  SynthOutput out;
  std::vector<std::string> vocab_corpus = SyntheticCorpus::inventory();
  for (std::size_t split = 0; split < 2; ++split) {
    const std::size_t n = split == 0 ? cfg.n_train : cfg.n_test;
    Manifest manifest;
    for (std::size_t i = 0; i < n; ++i) {
      SynthUtterance u = corpus.utterance(split, i);
      const fs::path feat = fs::path(dir) / "features" / (u.utt_id + ".mat");
      const fs::path phr = fs::path(dir) / "phrases" / (u.utt_id + ".txt");
      save_matrix(feat.string(), {u.frames, cfg.feature_dim}, u.features);
      save_phrase_file(PhraseList(u.phrases, PhraseSource::provided), phr.string());
      const std::string transcript = join_words(u.words);
      if (split == 0) {
        vocab_corpus.push_back(transcript);
        out.train_with_rare += u.has_rare;
      }
      manifest.entries.push_back({u.utt_id, feat.string(), transcript, phr.string()});
    }
    const std::string path =
        (fs::path(dir) / (split == 0 ? "train.tsv" : "test.tsv")).string();
    save_manifest(manifest, path);
    (split == 0 ? out.train_manifest : out.test_manifest) = path;
  }
  out.vocab = (fs::path(dir) / "vocab.txt").string();
  save_vocab(train_vocab(vocab_corpus, cfg.merges), out.vocab);
  return out;
}

}  // namespace lcbnet
