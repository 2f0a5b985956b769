// SPDX-License-Identifier: Apache-2.0
#ifndef MMEMBED_FEATURES_HPP_
#define MMEMBED_FEATURES_HPP_

#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mmembed/errors.hpp"

namespace mmembed {

inline constexpr std::size_t kDefaultFeatureDim = 4096;

/// Binarized image descriptor. Every entry is 0 or 1.
struct VisualFeature {
  std::vector<std::uint8_t> bits;

  std::size_t dim() const noexcept { return bits.size(); }

  template <class Real>
  std::vector<Real> as_real() const {
    return std::vector<Real>(bits.begin(), bits.end());
  }

  bool operator==(const VisualFeature&) const = default;
};

namespace detail {

inline int hex_value(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

}  // namespace detail

/// Bits packed four per hex digit, most significant bit first. Dimensions
/// that are not a multiple of four are zero-padded in the last digit.
inline std::string to_hex(const VisualFeature& f) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out((f.dim() + 3) / 4, '0');
  for (std::size_t i = 0; i < f.dim(); ++i) {
    if (f.bits[i]) {
      const int v = detail::hex_value(out[i / 4]) | (8 >> (i % 4));
      out[i / 4] = kDigits[v];
    }
  }
  return out;
}

/// Parses either a hex-packed field (dim/4 digits) or a plain 0/1 string of
/// exactly `dim` characters. Returns false on malformed input.
inline bool parse_feature_field(std::string_view field, std::size_t dim, VisualFeature& out,
                                std::string& why) {
  out.bits.assign(dim, 0);
  if (field.size() == dim && field.find_first_not_of("01") == std::string_view::npos) {
    for (std::size_t i = 0; i < dim; ++i) out.bits[i] = field[i] == '1';
    return true;
  }
  const std::size_t digits = (dim + 3) / 4;
  if (field.size() != digits) {
    why = "expected " + std::to_string(digits) + " hex digits or " + std::to_string(dim) +
          " bits, got " + std::to_string(field.size()) + " characters";
    return false;
  }
  for (std::size_t d = 0; d < digits; ++d) {
    const int v = detail::hex_value(field[d]);
    if (v < 0) {
      why = "invalid hex digit '" + std::string(1, field[d]) + "'";
      return false;
    }
    for (std::size_t b = 0; b < 4; ++b) {
      const std::size_t i = d * 4 + b;
      const bool set = (v >> (3 - b)) & 1;
      if (i < dim) {
        out.bits[i] = set;
      } else if (set) {
        why = "padding bits set beyond dimension";
        return false;
      }
    }
  }
  return true;
}

/// image_id -> VisualFeature, immutable once loaded.
class FeatureTable {
 public:
  explicit FeatureTable(std::size_t dim = kDefaultFeatureDim) : dim_(dim) {}

  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return table_.size(); }

  /// Adds a feature; throws DataError on duplicate id or wrong dimension.
  void insert(std::string image_id, VisualFeature f) {
    if (f.dim() != dim_) {
      throw DataError("feature for '" + image_id + "' has dimension " + std::to_string(f.dim()) +
                      ", expected " + std::to_string(dim_));
    }
    for (auto& b : f.bits) b = b ? 1 : 0;
    if (!table_.emplace(image_id, std::move(f)).second) {
      throw DataError("duplicate image id '" + image_id + "'");
    }
    order_.push_back(std::move(image_id));
  }

  const VisualFeature* find(const std::string& image_id) const {
    const auto it = table_.find(image_id);
    return it == table_.end() ? nullptr : &it->second;
  }

  const VisualFeature& at(const std::string& image_id) const {
    if (const auto* f = find(image_id)) return *f;
    throw DataError("no visual feature for image '" + image_id + "'");
  }

  /// Ids in insertion order.
  const std::vector<std::string>& ids() const noexcept { return order_; }

  /// `dim == 0` infers the dimension from the first record, read as hex.
  static FeatureTable read(std::istream& in, const std::string& source, std::size_t dim = 0) {
    FeatureTable table(dim);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      const auto tab = line.find('\t');
      if (tab == std::string::npos || tab == 0) {
        throw ParseError(source, lineno, "expected image_id<TAB>bits");
      }
      const std::string_view field = std::string_view(line).substr(tab + 1);
      if (table.dim_ == 0) table.dim_ = field.size() * 4;
      VisualFeature f;
      std::string why;
      if (!parse_feature_field(field, table.dim_, f, why)) throw ParseError(source, lineno, why);
      std::string id = line.substr(0, tab);
      if (table.table_.count(id)) throw ParseError(source, lineno, "duplicate image id '" + id + "'");
      table.insert(std::move(id), std::move(f));
    }
    return table;
  }

  static FeatureTable load(const std::string& path, std::size_t dim = 0) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open feature file: " + path);
    return read(in, path, dim);
  }

  void write(std::ostream& out) const {
    for (const auto& id : order_) out << id << '\t' << to_hex(table_.at(id)) << '\n';
  }

 private:
  std::size_t dim_;
  std::unordered_map<std::string, VisualFeature> table_;
  std::vector<std::string> order_;
};

}  // namespace mmembed

#endif  // MMEMBED_FEATURES_HPP_
