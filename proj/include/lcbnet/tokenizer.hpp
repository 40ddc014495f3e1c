// Subword vocabulary and greedy longest-match tokenizer.
//
// Units are learned with byte-pair merges over raw words. Every unit exists
// in two forms: a plain continuation form ("ist") and a word-initial form
// carrying the '_' marker ("_cross"). Text is handled as bytes; '_' is
// reserved for the marker and tokenizes to <unk> when it appears in input.
#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "lcbnet/errors.hpp"

namespace lcbnet {

inline constexpr char kWordMarker = '_';

enum class Reserved : int {
  blank_ctx = 0,  // separator between phrases in the long context
  ctc_blank = 1,
  sos = 2,
  eos = 3,
  unk = 4,
  mask = 5,
};
inline constexpr int kNumReserved = 6;

inline constexpr std::string_view reserved_name(Reserved r) {
  switch (r) {
    case Reserved::blank_ctx: return "blank_ctx";
    case Reserved::ctc_blank: return "ctc_blank";
    case Reserved::sos: return "sos";
    case Reserved::eos: return "eos";
    case Reserved::unk: return "unk";
    case Reserved::mask: return "mask";
  }
  return "";
}

inline std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i])))
      ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j])))
      ++j;
    if (j > i) words.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return words;
}

inline std::string join_words(const std::vector<std::string>& words) {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out += ' ';
    out += words[i];
  }
  return out;
}

inline std::string normalize_whitespace(std::string_view text) {
  return join_words(split_words(text));
}

inline std::string to_lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

struct WordSpan {
  std::size_t start = 0;
  std::size_t end = 0;  // exclusive
  bool operator==(const WordSpan&) const = default;
};

struct TokenSeq {
  std::vector<int> ids;
  std::vector<WordSpan> word_spans;
  bool operator==(const TokenSeq&) const = default;
};

class Vocab {
 public:
  Vocab() = default;

  // Builds the vocab from base symbols (single bytes) and merged units.
  static Vocab from_symbols(const std::vector<std::string>& symbols) {
    Vocab v;
    for (int r = 0; r < kNumReserved; ++r) {
      v.add_unit("<" + std::string(reserved_name(static_cast<Reserved>(r))) +
                 ">");
    }
    for (const std::string& s : symbols) {
      v.add_unit(s);
      v.add_unit(std::string(1, kWordMarker) + s);
    }
    return v;
  }

  std::size_t size() const { return units_.size(); }
  const std::vector<std::string>& units() const { return units_; }
  const std::string& unit(int id) const {
    check_id(id);
    return units_[id];
  }
  int id(std::string_view unit) const {
    auto it = ids_.find(std::string(unit));
    return it == ids_.end() ? -1 : it->second;
  }
  bool contains(std::string_view unit) const { return id(unit) >= 0; }
  static constexpr int reserved_id(Reserved r) { return static_cast<int>(r); }
  static constexpr bool is_reserved(int id) { return id >= 0 && id < kNumReserved; }
  bool is_word_initial(int id) const {
    check_id(id);
    return !is_reserved(id) && units_[id].size() > 1 &&
           units_[id][0] == kWordMarker;
  }
  // Unit text without the word-initial marker.
  std::string surface(int id) const {
    check_id(id);
    if (is_reserved(id)) return "";
    return is_word_initial(id) ? units_[id].substr(1) : units_[id];
  }
  void check_id(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= units_.size()) {
      throw ContractError("token id " + std::to_string(id) +
                          " outside vocab of " +
                          std::to_string(units_.size()));
    }
  }
  std::size_t max_unit_length() const { return max_len_; }

  bool operator==(const Vocab& other) const { return units_ == other.units_; }

 private:
  void add_unit(const std::string& u) {
    if (ids_.count(u)) return;
    ids_.emplace(u, static_cast<int>(units_.size()));
    units_.push_back(u);
    max_len_ = std::max(max_len_, u.size());
  }

  std::vector<std::string> units_;
  std::unordered_map<std::string, int> ids_;
  std::size_t max_len_ = 0;

  friend Vocab load_vocab_text(std::istream&);
};

// Byte-pair merge training. With merges == 0 the vocab is character level.
// The most frequent adjacent pair is merged each round; ties go to the
// lexicographically smallest (left, right) pair.
inline Vocab train_vocab(const std::vector<std::string>& corpus,
                         std::size_t merges) {
  if (corpus.empty()) throw ConfigError("train_vocab: empty corpus");
  std::map<std::string, std::size_t> word_counts;
  for (const std::string& line : corpus)
    for (const std::string& w : split_words(line)) ++word_counts[w];

  std::set<std::string> alphabet;
  std::vector<std::pair<std::vector<std::string>, std::size_t>> words;
  for (const auto& [w, count] : word_counts) {
    std::vector<std::string> symbols;
    for (char c : w) {
      if (c == kWordMarker) continue;
      symbols.emplace_back(1, c);
      alphabet.insert(symbols.back());
    }
    if (!symbols.empty()) words.emplace_back(std::move(symbols), count);
  }

  std::vector<std::string> symbols(alphabet.begin(), alphabet.end());
  for (std::size_t round = 0; round < merges; ++round) {
    std::map<std::pair<std::string, std::string>, std::size_t> pairs;
    for (const auto& [syms, count] : words)
      for (std::size_t i = 0; i + 1 < syms.size(); ++i)
        pairs[{syms[i], syms[i + 1]}] += count;
    if (pairs.empty()) break;
    auto best = pairs.begin();
    for (auto it = pairs.begin(); it != pairs.end(); ++it)
      if (it->second > best->second) best = it;
    const auto [left, right] = best->first;
    const std::string merged = left + right;
    for (auto& [syms, count] : words) {
      std::vector<std::string> next;
      next.reserve(syms.size());
      for (std::size_t i = 0; i < syms.size(); ++i) {
        if (i + 1 < syms.size() && syms[i] == left && syms[i + 1] == right) {
          next.push_back(merged);
          ++i;
        } else {
          next.push_back(syms[i]);
        }
      }
      syms = std::move(next);
    }
    if (std::find(symbols.begin(), symbols.end(), merged) == symbols.end())
      symbols.push_back(merged);
  }
  return Vocab::from_symbols(symbols);
}

// Greedy longest-match segmentation of each whitespace-separated word.
inline TokenSeq tokenize(std::string_view text, const Vocab& vocab) {
  TokenSeq seq;
  const int unk = Vocab::reserved_id(Reserved::unk);
  for (const std::string& word : split_words(text)) {
    const std::size_t start = seq.ids.size();
    std::size_t pos = 0;
    while (pos < word.size()) {
      const bool initial = pos == 0;
      const std::size_t longest =
          std::min(word.size() - pos, vocab.max_unit_length());
      int found = -1;
      std::size_t used = 0;
      for (std::size_t len = longest; len >= 1 && found < 0; --len) {
        std::string candidate = word.substr(pos, len);
        if (candidate.find(kWordMarker) != std::string::npos) continue;
        if (initial) candidate.insert(candidate.begin(), kWordMarker);
        const int id = vocab.id(candidate);
        if (id >= kNumReserved) {
          found = id;
          used = len;
        }
      }
      if (found < 0) {
        found = unk;
        used = 1;
      }
      seq.ids.push_back(found);
      pos += used;
    }
    seq.word_spans.push_back({start, seq.ids.size()});
  }
  return seq;
}

// Word spans recovered from word-initial markers, for id sequences that were
// produced by a decoder rather than by tokenize().
inline TokenSeq sequence_from_ids(std::vector<int> ids, const Vocab& vocab) {
  TokenSeq seq;
  seq.ids = std::move(ids);
  for (std::size_t i = 0; i < seq.ids.size(); ++i) {
    const int id = seq.ids[i];
    vocab.check_id(id);
    const bool reserved = Vocab::is_reserved(id) &&
                          id != Vocab::reserved_id(Reserved::unk);
    if (reserved) continue;
    if (vocab.is_word_initial(id) || seq.word_spans.empty() ||
        seq.word_spans.back().end != i) {
      seq.word_spans.push_back({i, i + 1});
    } else {
      seq.word_spans.back().end = i + 1;
    }
  }
  return seq;
}

inline std::vector<std::string> words_of(const TokenSeq& seq,
                                         const Vocab& vocab) {
  std::vector<std::string> words;
  for (const WordSpan& span : seq.word_spans) {
    std::string w;
    for (std::size_t i = span.start; i < span.end; ++i)
      w += vocab.surface(seq.ids[i]);
    if (!w.empty()) words.push_back(std::move(w));
  }
  return words;
}

inline std::string detokenize(const TokenSeq& seq, const Vocab& vocab) {
  for (int id : seq.ids) vocab.check_id(id);
  return join_words(words_of(seq, vocab));
}

// ---------------------------------------------------------------------------
// Vocab file: '#' comments and '@name id' reserved declarations form the
// header; every following line is one unit, its id being its position.

inline void save_vocab_text(const Vocab& vocab, std::ostream& out) {
  out << "# lcbnet vocab v1\n";
  out << "# units " << vocab.size() << "\n";
  for (int r = 0; r < kNumReserved; ++r)
    out << '@' << reserved_name(static_cast<Reserved>(r)) << ' ' << r << '\n';
  for (const std::string& u : vocab.units()) out << u << '\n';
}

inline Vocab load_vocab_text(std::istream& in) {
  Vocab vocab;
  std::string line;
  bool in_header = true;
  std::size_t declared = 0;
  while (std::getline(in, line)) {
    if (in_header && !line.empty() && (line[0] == '#' || line[0] == '@')) {
      if (line[0] == '@') {
        std::istringstream fields(line.substr(1));
        std::string name;
        int id = -1;
        fields >> name >> id;
        bool known = false;
        for (int r = 0; r < kNumReserved; ++r) {
          if (reserved_name(static_cast<Reserved>(r)) == name) {
            known = true;
            if (id != r) {
              throw DataError("vocab: reserved symbol @" + name +
                              " declared with id " + std::to_string(id) +
                              ", expected " + std::to_string(r));
            }
          }
        }
        if (!known) throw DataError("vocab: unknown declaration @" + name);
        ++declared;
      }
      continue;
    }
    in_header = false;
    if (line.empty()) throw DataError("vocab: empty unit line");
    if (vocab.ids_.count(line)) throw DataError("vocab: duplicate unit " + line);
    vocab.add_unit(line);
  }
  if (declared != kNumReserved || vocab.size() < kNumReserved) {
    throw DataError("vocab: missing reserved symbol declarations");
  }
  return vocab;
}

inline void save_vocab(const Vocab& vocab, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write vocab " + path);
  save_vocab_text(vocab, out);
  if (!out) throw DataError("failed writing vocab " + path);
}

inline Vocab load_vocab(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read vocab " + path);
  return load_vocab_text(in);
}

}  // namespace lcbnet
