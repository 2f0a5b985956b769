// SPDX-License-Identifier: Apache-2.0
//
// Word-embedding tables and triplet-ranking evaluation.
#ifndef MMEMBED_EVALUATOR_HPP_
#define MMEMBED_EVALUATOR_HPP_

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "mmembed/errors.hpp"
#include "mmembed/parallel.hpp"
#include "mmembed/tensor.hpp"
#include "mmembed/text.hpp"
#include "mmembed/triplets.hpp"

namespace mmembed {

/// Words and their vectors, row i belonging to words[i].
class Embeddings {
 public:
  Embeddings() = default;

  Embeddings(std::vector<std::string> words, Matrix<double> vectors)
      : words_(std::move(words)), vectors_(std::move(vectors)) {
    if (words_.size() != vectors_.rows()) {
      throw ShapeError("embedding table has " + std::to_string(vectors_.rows()) + " rows for " +
                       std::to_string(words_.size()) + " words");
    }
    for (std::size_t i = 0; i < words_.size(); ++i) {
      if (!index_.emplace(words_[i], i).second) {
        throw DataError("duplicate word '" + words_[i] + "' in embedding table");
      }
    }
  }

  /// Rows of `table` labelled by the vocabulary.
  template <class Real>
  static Embeddings from_vocab(const Vocabulary& vocab, const Matrix<Real>& table) {
    if (table.rows() != vocab.size()) {
      throw ShapeError("embedding table rows (" + std::to_string(table.rows()) +
                       ") != vocabulary size (" + std::to_string(vocab.size()) + ")");
    }
    Matrix<double> m(table.rows(), table.cols());
    for (std::size_t i = 0; i < table.size(); ++i) m.values()[i] = static_cast<double>(table.values()[i]);
    return Embeddings(std::vector<std::string>(vocab.words().begin(), vocab.words().end()), std::move(m));
  }

  std::size_t size() const noexcept { return words_.size(); }
  std::size_t dim() const noexcept { return vectors_.cols(); }
  const std::vector<std::string>& words() const noexcept { return words_; }
  const Matrix<double>& vectors() const noexcept { return vectors_; }

  std::span<const double> find(std::string_view word) const {
    const auto it = index_.find(std::string(word));
    if (it == index_.end()) return {};
    return vectors_.row(it->second);
  }

  std::optional<std::size_t> index_of(std::string_view word) const {
    const auto it = index_.find(std::string(word));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  /// Header `V d`, then `word v1 ... vd` per row. Values round-trip exactly.
  void write_text(std::ostream& out) const {
    out << words_.size() << ' ' << dim() << '\n';
    char buf[32];
    for (std::size_t i = 0; i < words_.size(); ++i) {
      out << words_[i];
      for (double v : vectors_.row(i)) {
        std::snprintf(buf, sizeof buf, " %.17g", v);
        out << buf;
      }
      out << '\n';
    }
  }

  static Embeddings read_text(std::istream& in, const std::string& source) {
    std::string line;
    std::size_t lineno = 1;
    if (!std::getline(in, line)) throw ParseError(source, 1, "missing header");
    std::size_t V = 0, d = 0;
    {
      std::istringstream hs(line);
      std::string extra;
      if (!(hs >> V >> d) || (hs >> extra) || d == 0) throw ParseError(source, 1, "expected header 'V d'");
    }
    std::vector<std::string> words;
    words.reserve(V);
    Matrix<double> m(V, d);
    for (std::size_t r = 0; r < V; ++r) {
      ++lineno;
      if (!std::getline(in, line)) throw ParseError(source, lineno, "expected " + std::to_string(V) + " rows");
      std::istringstream ls(line);
      std::string w;
      if (!(ls >> w)) throw ParseError(source, lineno, "missing word");
      for (std::size_t c = 0; c < d; ++c) {
        if (!(ls >> m(r, c))) throw ParseError(source, lineno, "expected " + std::to_string(d) + " values");
      }
      std::string extra;
      if (ls >> extra) throw ParseError(source, lineno, "too many values");
      words.push_back(std::move(w));
    }
    return Embeddings(std::move(words), std::move(m));
  }

  static Embeddings load_text(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open embedding file: " + path);
    return read_text(in, path);
  }

 private:
  std::vector<std::string> words_;
  Matrix<double> vectors_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Mean of the vectors of the phrase's in-vocabulary tokens after
/// normalization; nullopt when no token is known.
inline std::optional<std::vector<double>> phrase_embedding(std::string_view phrase,
                                                           const Embeddings& emb) {
  std::vector<double> sum(emb.dim(), 0.0);
  std::size_t n = 0;
  for (const auto& tok : normalize(phrase)) {
    const auto v = emb.find(tok);
    if (v.empty()) continue;
    axpy<double>(1.0, v, sum);
    ++n;
  }
  if (n == 0) return std::nullopt;
  for (auto& x : sum) x /= static_cast<double>(n);
  return sum;
}

/// 1 - cos(a, b), in [0, 2]. A zero vector is at distance 1 from everything.
inline double cosine_distance(std::span<const double> a, std::span<const double> b) {
  detail::require_shape(a.size() == b.size(), "cosine_distance", b.size(), a.size());
  const double na = l2_norm<double>(a);
  const double nb = l2_norm<double>(b);
  if (na == 0.0 || nb == 0.0) return 1.0;
  const double d = 1.0 - dot<double>(a, b) / (na * nb);
  return std::clamp(d, 0.0, 2.0);
}

struct EvalReport {
  std::size_t total = 0;
  std::size_t scored = 0;
  std::size_t skipped = 0;
  std::size_t correct = 0;
  double precision = 0.0;
  std::map<std::string, std::size_t> skip_reasons;

  bool operator==(const EvalReport&) const = default;
};

enum class TripletOutcome { correct, incorrect, skip_base, skip_positive, skip_negative };

/// Correct iff d(base, positive) < d(base, negative) strictly.
inline TripletOutcome score_triplet(const Triplet& t, const Embeddings& emb) {
  const auto base = phrase_embedding(t.base, emb);
  if (!base) return TripletOutcome::skip_base;
  const auto pos = phrase_embedding(t.positive, emb);
  if (!pos) return TripletOutcome::skip_positive;
  const auto neg = phrase_embedding(t.negative, emb);
  if (!neg) return TripletOutcome::skip_negative;
  return cosine_distance(*base, *pos) < cosine_distance(*base, *neg) ? TripletOutcome::correct
                                                                     : TripletOutcome::incorrect;
}

inline EvalReport evaluate(std::span<const Triplet> triplets, const Embeddings& emb,
                           std::size_t threads = 1) {
  std::vector<TripletOutcome> outcomes(triplets.size());
  parallel_slices(triplets.size(), threads, [&](std::size_t, std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) outcomes[i] = score_triplet(triplets[i], emb);
  });
  EvalReport r;
  r.total = triplets.size();
  for (auto o : outcomes) {
    switch (o) {
      case TripletOutcome::correct: ++r.correct; ++r.scored; break;
      case TripletOutcome::incorrect: ++r.scored; break;
      case TripletOutcome::skip_base: ++r.skipped; ++r.skip_reasons["base_oov"]; break;
      case TripletOutcome::skip_positive: ++r.skipped; ++r.skip_reasons["positive_oov"]; break;
      case TripletOutcome::skip_negative: ++r.skipped; ++r.skip_reasons["negative_oov"]; break;
    }
  }
  r.precision = r.scored ? static_cast<double>(r.correct) / static_cast<double>(r.scored) : 0.0;
  return r;
}

/// Human-readable summary followed by a key=value block.
inline void write_report(std::ostream& out, const EvalReport& r) {
  char prec[32];
  std::snprintf(prec, sizeof prec, "%.3f", r.precision);
  out << "triplets: " << r.total << " (scored " << r.scored << ", skipped " << r.skipped << ")\n"
      << "correct:  " << r.correct << '\n'
      << "precision: " << prec << '\n';
  for (const auto& [why, n] : r.skip_reasons) out << "  skipped " << why << ": " << n << '\n';
  std::snprintf(prec, sizeof prec, "%.6f", r.precision);
  out << "\n[report]\n"
      << "total=" << r.total << '\n'
      << "scored=" << r.scored << '\n'
      << "skipped=" << r.skipped << '\n'
      << "correct=" << r.correct << '\n'
      << "precision=" << prec << '\n';
  for (const auto& [why, n] : r.skip_reasons) out << "skipped." << why << '=' << n << '\n';
}

struct Neighbour {
  std::string word;
  double similarity;
};

/// k most cosine-similar words to `word`, excluding itself and <...> tokens.
inline std::vector<Neighbour> nearest_neighbours(const Embeddings& emb, std::string_view word,
                                                 std::size_t k) {
  const auto q = emb.find(word);
  if (q.empty()) throw DataError("word '" + std::string(word) + "' is not in the embedding table");
  std::vector<Neighbour> all;
  for (std::size_t i = 0; i < emb.size(); ++i) {
    const auto& w = emb.words()[i];
    if (w == word || (!w.empty() && w.front() == '<' && w.back() == '>')) continue;
    all.push_back({w, 1.0 - cosine_distance(q, emb.vectors().row(i))});
  }
  const std::size_t n = std::min(k, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n), all.end(),
                    [](const Neighbour& a, const Neighbour& b) {
                      return a.similarity != b.similarity ? a.similarity > b.similarity : a.word < b.word;
                    });
  all.resize(n);
  return all;
}

}  // namespace mmembed

#endif  // MMEMBED_EVALUATOR_HPP_
