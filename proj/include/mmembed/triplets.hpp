// SPDX-License-Identifier: Apache-2.0
#ifndef MMEMBED_TRIPLETS_HPP_
#define MMEMBED_TRIPLETS_HPP_

#include <fstream>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "mmembed/errors.hpp"

namespace mmembed {

/// (base, positive, negative): base should sit closer to positive.
struct Triplet {
  std::string base;
  std::string positive;
  std::string negative;

  bool operator==(const Triplet&) const = default;
};

/// Splits on TAB, keeping empty fields.
inline std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const auto tab = line.find('\t', start);
    fields.push_back(line.substr(start, tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return fields;
}

/// `base<TAB>positive<TAB>negative` per line. Blank lines are ignored.
inline std::vector<Triplet> read_triplets(std::istream& in, const std::string& source) {
  std::vector<Triplet> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split_tabs(line);
    if (fields.size() != 3) {
      throw ParseError(source, lineno, "expected 3 tab-separated fields, got " +
                                           std::to_string(fields.size()));
    }
    for (const auto& f : fields) {
      if (f.find_first_not_of(" \t") == std::string::npos) {
        throw ParseError(source, lineno, "empty phrase");
      }
    }
    out.push_back({std::move(fields[0]), std::move(fields[1]), std::move(fields[2])});
  }
  return out;
}

inline std::vector<Triplet> load_triplets(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open triplet file: " + path);
  return read_triplets(in, path);
}

inline void write_triplets(std::ostream& out, std::span<const Triplet> triplets) {
  for (const auto& t : triplets) out << t.base << '\t' << t.positive << '\t' << t.negative << '\n';
}

}  // namespace mmembed

#endif  // MMEMBED_TRIPLETS_HPP_
