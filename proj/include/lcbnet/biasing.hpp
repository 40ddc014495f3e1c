// Long-context biasing input, BCE targets and contextual phrase simulation.
//
// A phrase list is shuffled, tokenized and joined with a single <blank_ctx>
// between consecutive phrases; an empty list becomes one <blank_ctx>. The
// simulators draw training-time phrase lists from the references of a batch,
// either as whole words or as contiguous subword spans of words.
#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <fstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "lcbnet/errors.hpp"
#include "lcbnet/rng.hpp"
#include "lcbnet/tokenizer.hpp"

namespace lcbnet {

enum class PhraseSource { provided, simulated_word, simulated_bpe, simulated_mixed };

class PhraseList {
 public:
  PhraseList() = default;
  explicit PhraseList(PhraseSource source) : source_(source) {}
  PhraseList(std::vector<std::string> phrases, PhraseSource source)
      : source_(source) {
    for (std::string& p : phrases) add(std::move(p));
  }

  // Normalizes whitespace; drops empty strings and repeats.
  bool add(std::string phrase) {
    phrase = normalize_whitespace(phrase);
    if (phrase.empty()) return false;
    if (std::find(phrases_.begin(), phrases_.end(), phrase) != phrases_.end())
      return false;
    phrases_.push_back(std::move(phrase));
    return true;
  }

  const std::vector<std::string>& phrases() const { return phrases_; }
  std::size_t size() const { return phrases_.size(); }
  bool empty() const { return phrases_.empty(); }
  PhraseSource source() const { return source_; }
  void set_source(PhraseSource s) { source_ = s; }
  bool operator==(const PhraseList&) const = default;

 private:
  std::vector<std::string> phrases_;
  PhraseSource source_ = PhraseSource::provided;
};

struct PhraseSpan {
  std::size_t start = 0;
  std::size_t end = 0;  // exclusive
  std::size_t phrase_index = 0;
  bool operator==(const PhraseSpan&) const = default;
};

struct LongContextSequence {
  std::vector<int> ids;
  std::vector<int> bias_labels;
  std::vector<PhraseSpan> phrase_spans;
  std::vector<std::string> phrases;  // indexed by PhraseSpan::phrase_index

  bool is_separator(std::size_t i) const {
    return ids[i] == Vocab::reserved_id(Reserved::blank_ctx);
  }
  std::vector<bool> separator_mask() const {
    std::vector<bool> mask(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) mask[i] = is_separator(i);
    return mask;
  }
  std::size_t separator_count() const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < ids.size(); ++i) n += is_separator(i);
    return n;
  }
};

// Words a simulator must never pick: the 100 most frequent English words.
inline const std::unordered_set<std::string>& default_stop_words() {
  static const std::unordered_set<std::string> words = {
      "the",   "be",    "to",     "of",    "and",   "a",     "in",    "that",
      "have",  "i",     "it",     "for",   "not",   "on",    "with",  "he",
      "as",    "you",   "do",     "at",    "this",  "but",   "his",   "by",
      "from",  "they",  "we",     "say",   "her",   "she",   "or",    "an",
      "will",  "my",    "one",    "all",   "would", "there", "their", "what",
      "so",    "up",    "out",    "if",    "about", "who",   "get",   "which",
      "go",    "me",    "when",   "make",  "can",   "like",  "time",  "no",
      "just",  "him",   "know",   "take",  "people","into",  "year",  "your",
      "good",  "some",  "could",  "them",  "see",   "other", "than",  "then",
      "now",   "look",  "only",   "come",  "its",   "over",  "think", "also",
      "back",  "after", "use",    "two",   "how",   "our",   "work",  "first",
      "well",  "way",   "even",   "new",   "want",  "because","any",  "these",
      "give",  "day",   "most",   "us"};
  return words;
}

struct SimulationConfig {
  double word_ratio = 0.3;
  double bpe_ratio = 0.5;
  std::size_t max_phrases_per_batch = 64;
  std::uint64_t rng_seed = 1;
  std::size_t min_word_chars = 4;

  void validate() const {
    if (!(word_ratio >= 0.0 && word_ratio <= 1.0))
      throw ConfigError("sim.word_ratio must lie in [0,1]");
    if (!(bpe_ratio >= 0.0 && bpe_ratio <= 1.0))
      throw ConfigError("sim.bpe_ratio must lie in [0,1]");
  }
};

inline bool is_eligible_word(const std::string& word,
                             const SimulationConfig& cfg) {
  return word.size() >= cfg.min_word_chars &&
         !default_stop_words().count(to_lower(word));
}

inline LongContextSequence build_long_context(const PhraseList& phrases,
                                              const Vocab& vocab, Rng& rng) {
  LongContextSequence ctx;
  ctx.phrases = phrases.phrases();
  const int separator = Vocab::reserved_id(Reserved::blank_ctx);
  if (phrases.empty()) {
    ctx.ids = {separator};
    ctx.bias_labels = {0};
    return ctx;
  }
  std::vector<std::size_t> order(phrases.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  shuffle(std::span<std::size_t>(order), rng);
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (k > 0) ctx.ids.push_back(separator);
    const TokenSeq tokens = tokenize(phrases.phrases()[order[k]], vocab);
    const std::size_t start = ctx.ids.size();
    ctx.ids.insert(ctx.ids.end(), tokens.ids.begin(), tokens.ids.end());
    ctx.phrase_spans.push_back({start, ctx.ids.size(), order[k]});
  }
  ctx.bias_labels.assign(ctx.ids.size(), 0);
  return ctx;
}

// True when `needle` occurs as a contiguous run of `haystack` (both already
// lower-cased).
inline bool contains_word_run(const std::vector<std::string>& haystack,
                              const std::vector<std::string>& needle) {
  if (needle.empty() || needle.size() > haystack.size()) return false;
  return std::search(haystack.begin(), haystack.end(), needle.begin(),
                     needle.end()) != haystack.end();
}

// Marks a phrase span with 1 when the phrase occurs in the reference as a
// whole-word, case-insensitive run.
inline LongContextSequence label_bias_tokens(
    LongContextSequence ctx, const std::vector<std::string>& reference_words) {
  std::vector<std::string> ref;
  for (const std::string& w : reference_words) ref.push_back(to_lower(w));
  ctx.bias_labels.assign(ctx.ids.size(), 0);
  for (const PhraseSpan& span : ctx.phrase_spans) {
    std::vector<std::string> words =
        split_words(to_lower(ctx.phrases.at(span.phrase_index)));
    if (!contains_word_run(ref, words)) continue;
    for (std::size_t i = span.start; i < span.end; ++i)
      if (!ctx.is_separator(i)) ctx.bias_labels[i] = 1;
  }
  return ctx;
}

inline LongContextSequence label_bias_tokens(LongContextSequence ctx,
                                             const TokenSeq& reference,
                                             const Vocab& vocab) {
  return label_bias_tokens(std::move(ctx), words_of(reference, vocab));
}

// Selection counts of one simulation call, before de-duplication and
// truncation.
struct SimulationStats {
  std::size_t eligible_words = 0;
  std::size_t selected_words = 0;
  double fraction() const {
    return eligible_words ? static_cast<double>(selected_words) /
                                static_cast<double>(eligible_words)
                          : 0.0;
  }
};

namespace detail {

// Keeps at most `limit` items, chosen uniformly, in their original order.
inline PhraseList truncate_phrases(PhraseList list, std::size_t limit,
                                   Rng& rng) {
  if (list.size() <= limit) return list;
  std::vector<std::size_t> idx(list.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  for (std::size_t i = 0; i < limit; ++i) {
    const std::size_t j = i + bounded(rng, idx.size() - i);
    std::swap(idx[i], idx[j]);
  }
  idx.resize(limit);
  std::sort(idx.begin(), idx.end());
  PhraseList out(list.source());
  for (std::size_t i : idx) out.add(list.phrases()[i]);
  return out;
}

template <typename OnWord>
void for_each_selected_word(std::span<const TokenSeq> batch_refs,
                            const Vocab& vocab, const SimulationConfig& cfg,
                            double ratio, Rng& rng, SimulationStats* stats,
                            OnWord&& on_word) {
  for (const TokenSeq& ref : batch_refs) {
    for (const WordSpan& span : ref.word_spans) {
      std::string word;
      for (std::size_t i = span.start; i < span.end; ++i)
        word += vocab.surface(ref.ids[i]);
      if (!is_eligible_word(word, cfg)) continue;
      const bool picked = bernoulli(rng, ratio);
      if (stats) {
        ++stats->eligible_words;
        stats->selected_words += picked;
      }
      if (picked) on_word(ref, span, word);
    }
  }
}

}  // namespace detail

// Whole eligible words, each picked independently with word_ratio.
inline PhraseList simulate_word_phrases(std::span<const TokenSeq> batch_refs,
                                        const Vocab& vocab,
                                        const SimulationConfig& cfg, Rng& rng,
                                        SimulationStats* stats = nullptr) {
  if (batch_refs.empty()) throw ContractError("simulate_word_phrases: empty batch");
  PhraseList pooled(PhraseSource::simulated_word);
  detail::for_each_selected_word(
      batch_refs, vocab, cfg, cfg.word_ratio, rng, stats,
      [&](const TokenSeq&, const WordSpan&, const std::string& word) {
        pooled.add(word);
      });
  return detail::truncate_phrases(std::move(pooled), cfg.max_phrases_per_batch,
                                  rng);
}

// Text of units [first, last) of a word with the word-initial marker removed.
inline std::string unit_span_text(const TokenSeq& ref, const WordSpan& word,
                                  std::size_t first, std::size_t last,
                                  const Vocab& vocab) {
  std::string text;
  for (std::size_t i = word.start + first; i < word.start + last; ++i)
    text += vocab.surface(ref.ids[i]);
  return text;
}

// Contiguous subword spans of eligible words, words picked with bpe_ratio.
inline PhraseList simulate_bpe_phrases(std::span<const TokenSeq> batch_refs,
                                       const Vocab& vocab,
                                       const SimulationConfig& cfg, Rng& rng,
                                       SimulationStats* stats = nullptr) {
  if (batch_refs.empty()) throw ContractError("simulate_bpe_phrases: empty batch");
  PhraseList pooled(PhraseSource::simulated_bpe);
  detail::for_each_selected_word(
      batch_refs, vocab, cfg, cfg.bpe_ratio, rng, stats,
      [&](const TokenSeq& ref, const WordSpan& span, const std::string& word) {
        const std::size_t n = span.end - span.start;
        if (n <= 1) {
          pooled.add(word);
          return;
        }
        const std::size_t length = 1 + bounded(rng, n);
        const std::size_t first = bounded(rng, n - length + 1);
        pooled.add(unit_span_text(ref, span, first, first + length, vocab));
      });
  return detail::truncate_phrases(std::move(pooled), cfg.max_phrases_per_batch,
                                  rng);
}

// Both strategies run on every batch; the result is their union.
inline PhraseList simulate_phrases(std::span<const TokenSeq> batch_refs,
                                   const Vocab& vocab,
                                   const SimulationConfig& cfg, Rng& rng,
                                   SimulationStats* word_stats = nullptr,
                                   SimulationStats* bpe_stats = nullptr) {
  PhraseList words = simulate_word_phrases(batch_refs, vocab, cfg, rng, word_stats);
  PhraseList units = simulate_bpe_phrases(batch_refs, vocab, cfg, rng, bpe_stats);
  PhraseList merged(PhraseSource::simulated_mixed);
  for (const std::string& p : words.phrases()) merged.add(p);
  for (const std::string& p : units.phrases()) merged.add(p);
  return merged;
}

// Replaces non-separator tokens by <mask> with probability mask_prob.
inline LongContextSequence mask_context(LongContextSequence ctx,
                                        double mask_prob, Rng& rng) {
  if (!(mask_prob >= 0.0 && mask_prob <= 1.0))
    throw ContractError("mask_context: mask_prob outside [0,1]");
  const int mask = Vocab::reserved_id(Reserved::mask);
  for (std::size_t i = 0; i < ctx.ids.size(); ++i) {
    if (ctx.is_separator(i)) continue;
    if (bernoulli(rng, mask_prob)) ctx.ids[i] = mask;
  }
  return ctx;
}

// Phrase-list files: one phrase per line.
inline PhraseList load_phrase_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read phrase file " + path);
  PhraseList list(PhraseSource::provided);
  std::string line;
  while (std::getline(in, line)) list.add(line);
  return list;
}

inline void save_phrase_file(const PhraseList& list, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write phrase file " + path);
  for (const std::string& p : list.phrases()) out << p << '\n';
}

}  // namespace lcbnet
