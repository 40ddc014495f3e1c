// Word alignment and the WER / U-WER / B-WER decomposition.
//
// Reference words inside the biasing vocabulary are scored in the B bucket,
// the rest in the U bucket. WER is the sum of both buckets, so numerators
// and denominators always add up.
#pragma once

#include <algorithm>
#include <cstdio>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "lcbnet/errors.hpp"
#include "lcbnet/tokenizer.hpp"

namespace lcbnet {

enum class EditKind { match, substitution, deletion, insertion };

inline const char* edit_kind_name(EditKind k) {
  switch (k) {
    case EditKind::match: return "match";
    case EditKind::substitution: return "sub";
    case EditKind::deletion: return "del";
    case EditKind::insertion: return "ins";
  }
  return "?";
}

struct AlignmentOp {
  EditKind kind = EditKind::match;
  std::optional<std::string> ref_word;
  std::optional<std::string> hyp_word;
  bool operator==(const AlignmentOp&) const = default;
};

inline std::size_t edit_cost(const std::vector<AlignmentOp>& ops) {
  std::size_t n = 0;
  for (const auto& op : ops) n += op.kind != EditKind::match;
  return n;
}

// Minimum edit distance alignment with unit costs. Backtrace runs from the
// end and prefers match, then substitution, deletion, insertion.
inline std::vector<AlignmentOp> align(const std::vector<std::string>& ref,
                                      const std::vector<std::string>& hyp) {
  const std::size_t n = ref.size(), m = hyp.size();
  std::vector<std::size_t> dist((n + 1) * (m + 1));
  auto at = [&](std::size_t i, std::size_t j) -> std::size_t& {
    return dist[i * (m + 1) + j];
  };
  for (std::size_t i = 0; i <= n; ++i) at(i, 0) = i;
  for (std::size_t j = 0; j <= m; ++j) at(0, j) = j;
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      const std::size_t diag = at(i - 1, j - 1) + (ref[i - 1] != hyp[j - 1]);
      at(i, j) = std::min({diag, at(i - 1, j) + 1, at(i, j - 1) + 1});
    }
  }

  std::vector<AlignmentOp> ops;
  std::size_t i = n, j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 && ref[i - 1] == hyp[j - 1] &&
        at(i, j) == at(i - 1, j - 1)) {
      ops.push_back({EditKind::match, ref[i - 1], hyp[j - 1]});
      --i, --j;
    } else if (i > 0 && j > 0 && at(i, j) == at(i - 1, j - 1) + 1) {
      ops.push_back({EditKind::substitution, ref[i - 1], hyp[j - 1]});
      --i, --j;
    } else if (i > 0 && at(i, j) == at(i - 1, j) + 1) {
      ops.push_back({EditKind::deletion, ref[i - 1], std::nullopt});
      --i;
    } else {
      ops.push_back({EditKind::insertion, std::nullopt, hyp[j - 1]});
      --j;
    }
  }
  return {ops.rbegin(), ops.rend()};
}

enum class Bucket { unbiased, biased };

// Where insertions are charged: by the inserted word's membership in the
// biasing vocabulary (default), or always to the unbiased bucket.
enum class InsertionPolicy { by_hypothesis_word, unbiased };

struct BucketCounts {
  std::size_t substitutions = 0;
  std::size_t deletions = 0;
  std::size_t insertions = 0;
  std::size_t ref_words = 0;

  std::size_t errors() const { return substitutions + deletions + insertions; }
  BucketCounts& operator+=(const BucketCounts& o) {
    substitutions += o.substitutions;
    deletions += o.deletions;
    insertions += o.insertions;
    ref_words += o.ref_words;
    return *this;
  }
  bool operator==(const BucketCounts&) const = default;
};

// errors / ref_words as an exact fraction. A zero denominator reports rate 0
// with `undefined` set.
struct ErrorRate {
  std::size_t numerator = 0;
  std::size_t denominator = 0;

  bool undefined() const { return denominator == 0; }
  double value() const {
    return undefined() ? 0.0
                       : static_cast<double>(numerator) /
                             static_cast<double>(denominator);
  }
  double percent() const { return 100.0 * value(); }
  bool operator==(const ErrorRate&) const = default;
};

struct WordAttribution {
  std::string word;
  Bucket bucket = Bucket::unbiased;
  EditKind kind = EditKind::match;
};

struct TriWerReport {
  BucketCounts unbiased;
  BucketCounts biased;
  std::vector<WordAttribution> per_word;

  BucketCounts total() const {
    BucketCounts t = unbiased;
    t += biased;
    return t;
  }
  ErrorRate wer() const { return {total().errors(), total().ref_words}; }
  ErrorRate u_wer() const { return {unbiased.errors(), unbiased.ref_words}; }
  ErrorRate b_wer() const { return {biased.errors(), biased.ref_words}; }

  TriWerReport& operator+=(const TriWerReport& o) {
    unbiased += o.unbiased;
    biased += o.biased;
    per_word.insert(per_word.end(), o.per_word.begin(), o.per_word.end());
    return *this;
  }
};

using BiasVocab = std::set<std::string>;

// Words of a phrase list; multi-word phrases contribute every word.
inline BiasVocab bias_vocab_from_phrases(const std::vector<std::string>& phrases) {
  BiasVocab vocab;
  for (const std::string& p : phrases)
    for (const std::string& w : split_words(to_lower(p))) vocab.insert(w);
  return vocab;
}

inline TriWerReport tri_wer(const std::vector<AlignmentOp>& ops,
                            const BiasVocab& bias,
                            InsertionPolicy policy =
                                InsertionPolicy::by_hypothesis_word) {
  TriWerReport report;
  for (const AlignmentOp& op : ops) {
    const bool ref_side = op.kind != EditKind::insertion;
    const std::string& word = ref_side ? *op.ref_word : *op.hyp_word;
    Bucket bucket = bias.count(word) ? Bucket::biased : Bucket::unbiased;
    if (!ref_side && policy == InsertionPolicy::unbiased)
      bucket = Bucket::unbiased;
    BucketCounts& counts =
        bucket == Bucket::biased ? report.biased : report.unbiased;
    switch (op.kind) {
      case EditKind::match: break;
      case EditKind::substitution: ++counts.substitutions; break;
      case EditKind::deletion: ++counts.deletions; break;
      case EditKind::insertion: ++counts.insertions; break;
    }
    if (ref_side) ++counts.ref_words;
    report.per_word.push_back({word, bucket, op.kind});
  }
  return report;
}

// Micro-average: counts are summed over utterances before dividing.
inline TriWerReport score_corpus(const std::vector<std::string>& refs,
                                 const std::vector<std::string>& hyps,
                                 const std::vector<BiasVocab>& bias,
                                 InsertionPolicy policy =
                                     InsertionPolicy::by_hypothesis_word) {
  if (refs.size() != hyps.size() || refs.size() != bias.size()) {
    throw InputError("score_corpus: " + std::to_string(refs.size()) +
                     " references, " + std::to_string(hyps.size()) +
                     " hypotheses, " + std::to_string(bias.size()) +
                     " biasing lists");
  }
  TriWerReport total;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    total += tri_wer(align(split_words(to_lower(refs[i])),
                           split_words(to_lower(hyps[i]))),
                     bias[i], policy);
  }
  return total;
}

inline std::string format_fixed(double value, int decimals = 1) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, value);
  return buf;
}

inline std::string format_percent(double pct) { return format_fixed(pct) + "%"; }

// "WER a.b% (U: c.d% / B: e.f%)"
inline std::string format_summary(const TriWerReport& r) {
  return "WER " + format_percent(r.wer().percent()) + " (U: " +
         format_percent(r.u_wer().percent()) + " / B: " +
         format_percent(r.b_wer().percent()) + ")";
}

// Machine-readable block, one key=value per line.
inline std::string format_key_values(const TriWerReport& r) {
  std::ostringstream out;
  auto rate = [&](const char* key, const ErrorRate& e) {
    out << key << ".errors=" << e.numerator << '\n'
        << key << ".ref_words=" << e.denominator << '\n'
        << key << ".percent=" << format_fixed(e.percent()) << '\n'
        << key << ".undefined=" << (e.undefined() ? 1 : 0) << '\n';
  };
  auto counts = [&](const char* key, const BucketCounts& c) {
    out << key << ".sub=" << c.substitutions << '\n'
        << key << ".del=" << c.deletions << '\n'
        << key << ".ins=" << c.insertions << '\n';
  };
  rate("wer", r.wer());
  rate("u_wer", r.u_wer());
  rate("b_wer", r.b_wer());
  counts("u", r.unbiased);
  counts("b", r.biased);
  return out.str();
}

}  // namespace lcbnet
