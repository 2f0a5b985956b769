// SPDX-License-Identifier: Apache-2.0
//
// Triplet mining from search clickthrough logs, and majority-vote cleanup
// of annotated triplets.
#ifndef MMEMBED_MINER_HPP_
#define MMEMBED_MINER_HPP_

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mmembed/errors.hpp"
#include "mmembed/parallel.hpp"
#include "mmembed/rng.hpp"
#include "mmembed/stemmer.hpp"
#include "mmembed/text.hpp"
#include "mmembed/triplets.hpp"

namespace mmembed {

struct ClickRecord {
  std::string query;
  std::string item_id;
  std::uint64_t clicks = 0;
};

/// item id -> annotation phrases, in file order without repeats.
using AnnotationTable = std::map<std::string, std::vector<std::string>>;

/// Normalized form used for every phrase handled by the miner.
inline std::string canonical_phrase(std::string_view phrase) { return join(normalize(phrase)); }

/// Set of Porter stems of the phrase's normalized tokens.
inline std::set<std::string> stem_set(std::string_view phrase) {
  std::set<std::string> out;
  for (const auto& tok : normalize(phrase)) out.insert(stem(tok));
  return out;
}

inline bool shares_stem(const std::set<std::string>& a, const std::set<std::string>& b) {
  auto i = a.begin();
  auto j = b.begin();
  while (i != a.end() && j != b.end()) {
    if (*i == *j) return true;
    if (*i < *j) ++i; else ++j;
  }
  return false;
}

/// `query<TAB>item_id<TAB>clicks`. Blank lines are ignored.
inline std::vector<ClickRecord> read_click_log(std::istream& in, const std::string& source) {
  std::vector<ClickRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto f = split_tabs(line);
    if (f.size() != 3) throw ParseError(source, lineno, "expected query<TAB>item<TAB>clicks");
    if (canonical_phrase(f[0]).empty()) throw ParseError(source, lineno, "empty query");
    if (f[1].empty()) throw ParseError(source, lineno, "empty item id");
    std::uint64_t clicks = 0;
    const auto& c = f[2];
    if (c.empty() || c.find_first_not_of("0123456789") != std::string::npos || c.size() > 19) {
      throw ParseError(source, lineno, "clicks must be a non-negative integer, got '" + c + "'");
    }
    clicks = std::stoull(c);
    out.push_back({std::move(f[0]), std::move(f[1]), clicks});
  }
  return out;
}

inline std::vector<ClickRecord> load_click_log(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open click log: " + path);
  return read_click_log(in, path);
}

/// `item_id<TAB>annotation`, ids may repeat.
inline AnnotationTable read_annotations(std::istream& in, const std::string& source) {
  AnnotationTable table;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto f = split_tabs(line);
    if (f.size() != 2) throw ParseError(source, lineno, "expected item<TAB>annotation");
    if (f[0].empty()) throw ParseError(source, lineno, "empty item id");
    std::string ann = canonical_phrase(f[1]);
    if (ann.empty()) throw ParseError(source, lineno, "empty annotation");
    auto& list = table[f[0]];
    if (std::find(list.begin(), list.end(), ann) == list.end()) list.push_back(std::move(ann));
  }
  return table;
}

inline AnnotationTable load_annotations(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open annotation table: " + path);
  return read_annotations(in, path);
}

/// One phrase per line; blank lines skipped, duplicates kept.
inline std::vector<std::string> read_pool(std::istream& in) {
  std::vector<std::string> pool;
  std::string line;
  while (std::getline(in, line)) {
    std::string p = canonical_phrase(line);
    if (!p.empty()) pool.push_back(std::move(p));
  }
  return pool;
}

inline std::vector<std::string> load_pool(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open phrase pool: " + path);
  return read_pool(in);
}

struct ScoredAnnotation {
  std::string annotation;
  std::uint64_t score = 0;

  bool operator==(const ScoredAnnotation&) const = default;
};

/// Each annotation scores the total clicks of the items carrying it.
/// Records for other queries are ignored. Sorted by score, then text.
inline std::vector<ScoredAnnotation> score_annotations(std::string_view query,
                                                       std::span<const ClickRecord> clicks,
                                                       const AnnotationTable& annotations) {
  const std::string q = canonical_phrase(query);
  std::map<std::string, std::uint64_t> item_clicks;
  for (const auto& r : clicks) {
    if (canonical_phrase(r.query) == q) item_clicks[r.item_id] += r.clicks;
  }
  std::map<std::string, std::uint64_t> score;
  for (const auto& [item, n] : item_clicks) {
    const auto it = annotations.find(item);
    if (it == annotations.end()) continue;
    for (const auto& a : it->second) score[a] += n;
  }
  std::vector<ScoredAnnotation> out;
  out.reserve(score.size());
  for (auto& [a, s] : score) out.push_back({a, s});
  std::stable_sort(out.begin(), out.end(), [](const ScoredAnnotation& x, const ScoredAnnotation& y) {
    return x.score > y.score;
  });
  return out;
}

/// Drops candidates sharing a stemmed word with the query.
inline std::vector<std::string> filter_overlap(std::string_view query,
                                               std::span<const std::string> candidates) {
  const auto qs = stem_set(query);
  std::vector<std::string> out;
  for (const auto& c : candidates) {
    if (!shares_stem(qs, stem_set(c))) out.push_back(c);
  }
  return out;
}

inline constexpr std::size_t kMaxNegativeRejections = 1000;

/// Uniform draw from the pool with no stemmed-word overlap against either phrase.
inline std::string sample_negative(std::string_view base, std::string_view positive,
                                   std::span<const std::string> pool, Rng& rng) {
  if (pool.empty()) throw MiningError("negative pool is empty");
  const auto bs = stem_set(base);
  const auto ps = stem_set(positive);
  for (std::size_t rejected = 0; rejected < kMaxNegativeRejections; ++rejected) {
    const auto& cand = pool[rng.below(pool.size())];
    const auto cs = stem_set(cand);
    if (!shares_stem(cs, bs) && !shares_stem(cs, ps)) return cand;
  }
  throw MiningError("no acceptable negative for pair ('" + std::string(base) + "', '" +
                    std::string(positive) + "') after " +
                    std::to_string(kMaxNegativeRejections) + " draws");
}

struct MineOptions {
  std::size_t top_k = 20;
  std::uint64_t seed = 1;
  std::size_t threads = 1;
};

/// Triplets ordered by query, then by positive rank.
inline std::vector<Triplet> mine(std::span<const ClickRecord> clicks, const AnnotationTable& annotations,
                                 std::span<const std::string> pool, const MineOptions& opts) {
  std::map<std::string, std::vector<ClickRecord>> by_query;
  for (const auto& r : clicks) by_query[canonical_phrase(r.query)].push_back(r);
  std::vector<const std::pair<const std::string, std::vector<ClickRecord>>*> queries;
  for (const auto& kv : by_query) queries.push_back(&kv);

  std::vector<std::vector<Triplet>> per_query(queries.size());
  if (opts.top_k > 0) {
    parallel_slices(queries.size(), opts.threads, [&](std::size_t, std::size_t b, std::size_t e) {
      for (std::size_t i = b; i < e; ++i) {
        const auto& [query, records] = *queries[i];
        auto ranked = score_annotations(query, records, annotations);
        if (ranked.size() > opts.top_k) ranked.resize(opts.top_k);
        std::vector<std::string> top;
        for (auto& s : ranked) top.push_back(std::move(s.annotation));
        Rng rng(derive_seed(opts.seed, "mine", fnv1a(query)));
        for (const auto& pos : filter_overlap(query, top)) {
          per_query[i].push_back({query, pos, sample_negative(query, pos, pool, rng)});
        }
      }
    });
  }
  std::vector<Triplet> out;
  for (auto& v : per_query) {
    for (auto& t : v) out.push_back(std::move(t));
  }
  return out;
}

enum class Vote { agree, disagree, both_related, both_unrelated };

struct VoteRecord {
  Triplet triplet;
  std::vector<Vote> votes;
};

/// `base<TAB>positive<TAB>negative<TAB>A,D,R,U`.
inline std::vector<VoteRecord> read_votes(std::istream& in, const std::string& source) {
  std::vector<VoteRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto f = split_tabs(line);
    if (f.size() != 4) throw ParseError(source, lineno, "expected base<TAB>positive<TAB>negative<TAB>votes");
    VoteRecord rec{{std::move(f[0]), std::move(f[1]), std::move(f[2])}, {}};
    std::size_t start = 0;
    const std::string& v = f[3];
    while (start <= v.size()) {
      const auto comma = v.find(',', start);
      std::string tok = v.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
      tok.erase(0, tok.find_first_not_of(' '));
      tok.erase(tok.find_last_not_of(' ') + 1);
      if (tok == "A" || tok == "a") rec.votes.push_back(Vote::agree);
      else if (tok == "D" || tok == "d") rec.votes.push_back(Vote::disagree);
      else if (tok == "R" || tok == "r") rec.votes.push_back(Vote::both_related);
      else if (tok == "U" || tok == "u") rec.votes.push_back(Vote::both_unrelated);
      else if (!(tok.empty() && v.empty())) throw ParseError(source, lineno, "unknown vote '" + tok + "'");
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    out.push_back(std::move(rec));
  }
  return out;
}

inline std::vector<VoteRecord> load_votes(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open vote file: " + path);
  return read_votes(in, path);
}

struct VoteSummary {
  std::vector<Triplet> accepted;
  std::size_t rejected = 0;
  std::vector<std::string> diagnostics;
};

/// Accepts a triplet when strictly more than half of all its votes agree.
inline VoteSummary aggregate_votes(std::span<const VoteRecord> records) {
  VoteSummary s;
  for (const auto& r : records) {
    if (r.votes.size() < 3) {
      ++s.rejected;
      s.diagnostics.push_back("triplet ('" + r.triplet.base + "', '" + r.triplet.positive + "', '" +
                              r.triplet.negative + "') has " + std::to_string(r.votes.size()) +
                              " votes, need at least 3");
      continue;
    }
    const auto agree = static_cast<std::size_t>(std::count(r.votes.begin(), r.votes.end(), Vote::agree));
    if (2 * agree > r.votes.size()) {
      s.accepted.push_back(r.triplet);
    } else {
      ++s.rejected;
    }
  }
  return s;
}

}  // namespace mmembed

#endif  // MMEMBED_MINER_HPP_
