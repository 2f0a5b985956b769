// SPDX-License-Identifier: Apache-2.0
//
// Sentence normalization, per-image corpus filtering and the vocabulary.
#ifndef MMEMBED_TEXT_HPP_
#define MMEMBED_TEXT_HPP_

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mmembed/errors.hpp"
#include "mmembed/rng.hpp"

namespace mmembed {

using Tokens = std::vector<std::string>;
using WordId = std::uint32_t;

namespace detail {

// Decodes one UTF-8 code point starting at s[i]; advances i. Invalid bytes
// decode to U+FFFD and consume a single byte.
inline char32_t next_code_point(std::string_view s, std::size_t& i) {
  const auto b0 = static_cast<unsigned char>(s[i]);
  auto cont = [&](std::size_t k) -> int {
    if (i + k >= s.size()) return -1;
    const auto b = static_cast<unsigned char>(s[i + k]);
    return (b & 0xC0) == 0x80 ? (b & 0x3F) : -1;
  };
  if (b0 < 0x80) {
    ++i;
    return b0;
  }
  int len = 0;
  char32_t cp = 0;
  if ((b0 & 0xE0) == 0xC0) {
    len = 2;
    cp = b0 & 0x1F;
  } else if ((b0 & 0xF0) == 0xE0) {
    len = 3;
    cp = b0 & 0x0F;
  } else if ((b0 & 0xF8) == 0xF0) {
    len = 4;
    cp = b0 & 0x07;
  } else {
    ++i;
    return 0xFFFD;
  }
  for (int k = 1; k < len; ++k) {
    const int c = cont(static_cast<std::size_t>(k));
    if (c < 0) {
      ++i;
      return 0xFFFD;
    }
    cp = (cp << 6) | static_cast<char32_t>(c);
  }
  i += static_cast<std::size_t>(len);
  return cp;
}

inline void append_utf8(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out += static_cast<char>(cp);
  } else if (cp < 0x800) {
    out += static_cast<char>(0xC0 | (cp >> 6));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else if (cp < 0x10000) {
    out += static_cast<char>(0xE0 | (cp >> 12));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else {
    out += static_cast<char>(0xF0 | (cp >> 18));
    out += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  }
}

enum class CharClass { keep, space, drop };

// ASCII is classified exactly. Outside ASCII only the common whitespace,
// punctuation and symbol blocks are recognised; anything else is treated as
// a letter.
inline CharClass classify(char32_t cp) {
  if (cp < 0x80) {
    if ((cp >= 'a' && cp <= 'z') || (cp >= 'A' && cp <= 'Z') || (cp >= '0' && cp <= '9')) {
      return CharClass::keep;
    }
    if (cp == ' ' || (cp >= '\t' && cp <= '\r')) return CharClass::space;
    return CharClass::drop;
  }
  if (cp == 0x85 || cp == 0xA0 || cp == 0x1680 || (cp >= 0x2000 && cp <= 0x200A) ||
      cp == 0x2028 || cp == 0x2029 || cp == 0x202F || cp == 0x205F || cp == 0x3000) {
    return CharClass::space;
  }
  if (cp < 0xA0 || (cp >= 0xA1 && cp <= 0xBF) || cp == 0xD7 || cp == 0xF7 ||
      (cp >= 0x2000 && cp <= 0x2BFF) || (cp >= 0x3001 && cp <= 0x303F) ||
      (cp >= 0xFE00 && cp <= 0xFE0F) || (cp >= 0xFF01 && cp <= 0xFF0F) || cp == 0xFFFD ||
      cp >= 0x1F000) {
    return CharClass::drop;
  }
  return CharClass::keep;
}

inline char32_t to_lower(char32_t cp) {
  if (cp >= 'A' && cp <= 'Z') return cp + 32;
  if ((cp >= 0xC0 && cp <= 0xDE) && cp != 0xD7) return cp + 32;
  return cp;
}

}  // namespace detail

/// Lowercases, removes every character that is not a letter, digit or
/// whitespace, and splits on whitespace runs.
inline Tokens normalize(std::string_view raw) {
  Tokens tokens;
  std::string current;
  std::size_t i = 0;
  while (i < raw.size()) {
    const char32_t cp = detail::next_code_point(raw, i);
    switch (detail::classify(cp)) {
      case detail::CharClass::keep:
        detail::append_utf8(current, detail::to_lower(cp));
        break;
      case detail::CharClass::space:
        if (!current.empty()) tokens.push_back(std::move(current));
        current.clear();
        break;
      case detail::CharClass::drop:
        break;
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

inline std::string join(const Tokens& tokens, std::string_view sep = " ") {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += sep;
    out += tokens[i];
  }
  return out;
}

/// |A ∩ B| / min(|A|, |B|) over unigram sets; 0 when either side is empty.
inline double unigram_overlap(const Tokens& a, const Tokens& b) {
  const std::set<std::string_view> sa(a.begin(), a.end());
  const std::set<std::string_view> sb(b.begin(), b.end());
  if (sa.empty() || sb.empty()) return 0.0;
  std::size_t shared = 0;
  for (const auto& w : sa) shared += sb.count(w);
  return static_cast<double>(shared) / static_cast<double>(std::min(sa.size(), sb.size()));
}

struct FilterOptions {
  std::size_t min_len = 4;
  double overlap_threshold = 0.9;

  void validate() const {
    if (min_len < 1) throw ConfigError("min_len must be at least 1");
    if (!(overlap_threshold > 0.0 && overlap_threshold <= 1.0)) {
      throw ConfigError("overlap threshold must lie in (0, 1]");
    }
  }
};

/// Filters the sentence set of one image: drops short sentences, then drops
/// any sentence whose overlap with an earlier kept sentence reaches the
/// threshold. Returns the indices of the kept sentences.
inline std::vector<std::size_t> filter_sentence_indices(std::span<const Tokens> sentences,
                                                        const FilterOptions& opts) {
  opts.validate();
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    if (sentences[i].size() < opts.min_len) continue;
    const bool duplicate = std::any_of(kept.begin(), kept.end(), [&](std::size_t k) {
      return unigram_overlap(sentences[k], sentences[i]) >= opts.overlap_threshold;
    });
    if (!duplicate) kept.push_back(i);
  }
  return kept;
}

inline std::vector<Tokens> filter_sentences(std::span<const Tokens> sentences,
                                            const FilterOptions& opts) {
  std::vector<Tokens> out;
  for (std::size_t i : filter_sentence_indices(sentences, opts)) out.push_back(sentences[i]);
  return out;
}

struct CorpusRecord {
  std::string image_id;
  Tokens tokens;
};

/// Reads `image_id<TAB>sentence` lines and normalizes each sentence.
inline std::vector<CorpusRecord> read_corpus(std::istream& in, const std::string& source) {
  std::vector<CorpusRecord> records;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw ParseError(source, lineno, "expected image_id<TAB>sentence");
    if (tab == 0) throw ParseError(source, lineno, "empty image id");
    records.push_back({line.substr(0, tab), normalize(std::string_view(line).substr(tab + 1))});
  }
  return records;
}

inline std::vector<CorpusRecord> load_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open corpus file: " + path);
  return read_corpus(in, path);
}

/// Applies the sentence filter within each image's sentence set. Output keeps
/// the original record order.
inline std::vector<CorpusRecord> filter_corpus(std::span<const CorpusRecord> records,
                                               const FilterOptions& opts) {
  std::unordered_map<std::string, std::vector<std::size_t>> by_image;
  std::vector<std::string> order;
  for (std::size_t i = 0; i < records.size(); ++i) {
    auto [it, inserted] = by_image.try_emplace(records[i].image_id);
    if (inserted) order.push_back(records[i].image_id);
    it->second.push_back(i);
  }
  std::vector<char> keep(records.size(), 0);
  for (const auto& image : order) {
    const auto& idx = by_image[image];
    std::vector<Tokens> group;
    group.reserve(idx.size());
    for (std::size_t i : idx) group.push_back(records[i].tokens);
    for (std::size_t k : filter_sentence_indices(group, opts)) keep[idx[k]] = 1;
  }
  std::vector<CorpusRecord> out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (keep[i]) out.push_back(records[i]);
  }
  return out;
}

/// Word frequencies plus sentence count. Mergeable, so shards can be
/// counted independently.
class WordCounter {
 public:
  void add(const Tokens& sentence) {
    for (const auto& w : sentence) ++counts_[w];
    ++sentences_;
  }

  void merge(const WordCounter& other) {
    for (const auto& [w, c] : other.counts_) counts_[w] += c;
    sentences_ += other.sentences_;
  }

  const std::map<std::string, std::uint64_t>& counts() const { return counts_; }
  std::uint64_t sentences() const { return sentences_; }

 private:
  std::map<std::string, std::uint64_t> counts_;
  std::uint64_t sentences_ = 0;
};

/// Word <-> id table. Ids 0, 1, 2 are reserved for <bos>, <eos> and <unk>;
/// content words follow in descending frequency, ties broken
/// lexicographically. The <eos> count is the number of sentences, since
/// every sentence ends with one; <bos> and <unk> carry count 0.
class Vocabulary {
 public:
  static constexpr WordId kBos = 0;
  static constexpr WordId kEos = 1;
  static constexpr WordId kUnk = 2;
  static constexpr std::size_t kReserved = 3;

  Vocabulary() { reset(); }

  static Vocabulary build(const WordCounter& counter, std::uint64_t min_count) {
    if (min_count < 1) throw ConfigError("min_count must be at least 1");
    std::vector<std::pair<std::string, std::uint64_t>> entries;
    for (const auto& [w, c] : counter.counts()) {
      if (c >= min_count) entries.emplace_back(w, c);
    }
    return from_counts(std::move(entries), counter.sentences());
  }

  static Vocabulary build(std::span<const Tokens> corpus, std::uint64_t min_count) {
    WordCounter counter;
    for (const auto& s : corpus) counter.add(s);
    return build(counter, min_count);
  }

  /// Content words with explicit counts; order is canonicalised.
  static Vocabulary from_counts(std::vector<std::pair<std::string, std::uint64_t>> entries,
                                std::uint64_t eos_count = 0) {
    std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
      return a.second != b.second ? a.second > b.second : a.first < b.first;
    });
    return from_ordered(std::move(entries), eos_count);
  }

  /// Content words in the given id order (ids start after the reserved block).
  static Vocabulary from_ordered(std::vector<std::pair<std::string, std::uint64_t>> entries,
                                 std::uint64_t eos_count = 0) {
    Vocabulary v;
    v.counts_[kEos] = eos_count;
    for (auto& [w, c] : entries) {
      if (w.empty() || v.ids_.count(w)) throw DataError("invalid or duplicate vocabulary word '" + w + "'");
      v.add_word(std::move(w), c);
    }
    return v;
  }

  std::size_t size() const noexcept { return words_.size(); }

  std::optional<WordId> find(std::string_view word) const {
    const auto it = ids_.find(std::string(word));
    if (it == ids_.end()) return std::nullopt;
    return it->second;
  }

  /// Id of the word, or <unk>.
  WordId lookup(std::string_view word) const { return find(word).value_or(kUnk); }

  const std::string& word(WordId id) const { return words_.at(id); }
  std::uint64_t count(WordId id) const { return counts_.at(id); }
  std::span<const std::uint64_t> counts() const { return counts_; }
  std::span<const std::string> words() const { return words_; }

  static bool is_reserved(WordId id) { return id < kReserved; }

  /// FNV-1a over words and counts in id order.
  std::uint64_t hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < words_.size(); ++i) {
      h = fnv1a(words_[i], h);
      h = fnv1a(std::string_view("\t"), h);
      h = fnv1a(std::to_string(counts_[i]), h);
      h = fnv1a(std::string_view("\n"), h);
    }
    return h;
  }

  /// One `word<TAB>count` line per id, reserved tokens first.
  void write(std::ostream& out) const {
    for (std::size_t i = 0; i < words_.size(); ++i) out << words_[i] << '\t' << counts_[i] << '\n';
  }

  static Vocabulary read(std::istream& in, const std::string& source) {
    Vocabulary v;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      const auto tab = line.find('\t');
      if (tab == std::string::npos || tab == 0) {
        throw ParseError(source, lineno, "expected word<TAB>count");
      }
      std::string w = line.substr(0, tab);
      std::uint64_t c = 0;
      try {
        std::size_t used = 0;
        c = std::stoull(line.substr(tab + 1), &used);
        if (used != line.size() - tab - 1) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        throw ParseError(source, lineno, "bad count");
      }
      if (lineno <= kReserved) {
        if (w != v.words_[lineno - 1]) {
          throw ParseError(source, lineno, "expected reserved token " + v.words_[lineno - 1]);
        }
        v.counts_[lineno - 1] = c;
        continue;
      }
      if (v.ids_.count(w)) throw ParseError(source, lineno, "duplicate word '" + w + "'");
      v.add_word(std::move(w), c);
    }
    if (lineno < kReserved) throw ParseError(source, lineno, "missing reserved tokens");
    return v;
  }

  static Vocabulary load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open vocabulary file: " + path);
    return read(in, path);
  }

  bool operator==(const Vocabulary& o) const { return words_ == o.words_ && counts_ == o.counts_; }

 private:
  void reset() {
    words_.clear();
    counts_.clear();
    ids_.clear();
    add_word("<bos>", 0);
    add_word("<eos>", 0);
    add_word("<unk>", 0);
  }

  void add_word(std::string w, std::uint64_t c) {
    const auto id = static_cast<WordId>(words_.size());
    ids_.emplace(w, id);
    words_.push_back(std::move(w));
    counts_.push_back(c);
  }

  std::vector<std::string> words_;
  std::vector<std::uint64_t> counts_;
  std::unordered_map<std::string, WordId> ids_;
};

/// Token ids of one sentence, always bracketed by <bos> ... <eos>.
struct TokenSequence {
  std::vector<WordId> ids;

  std::size_t size() const noexcept { return ids.size(); }

  /// Tokens other than <bos>, <eos> and <unk>.
  std::size_t content_count() const {
    return static_cast<std::size_t>(std::count_if(
        ids.begin(), ids.end(), [](WordId id) { return !Vocabulary::is_reserved(id); }));
  }
};

inline TokenSequence encode(const Tokens& sentence, const Vocabulary& vocab) {
  TokenSequence seq;
  seq.ids.reserve(sentence.size() + 2);
  seq.ids.push_back(Vocabulary::kBos);
  for (const auto& w : sentence) seq.ids.push_back(vocab.lookup(w));
  seq.ids.push_back(Vocabulary::kEos);
  return seq;
}

/// Inverse of encode for in-vocabulary sentences; <unk> decodes to "<unk>".
inline Tokens decode(const TokenSequence& seq, const Vocabulary& vocab) {
  Tokens out;
  for (std::size_t i = 1; i + 1 < seq.ids.size(); ++i) out.push_back(vocab.word(seq.ids[i]));
  return out;
}

}  // namespace mmembed

#endif  // MMEMBED_TEXT_HPP_
