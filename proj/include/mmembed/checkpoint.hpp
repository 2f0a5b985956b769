// SPDX-License-Identifier: Apache-2.0
//
// Binary checkpoint layout (all integers little-endian):
//
//   "MMEMBCKP"  u32 version  u32 scalar_bytes
//   u64 len, config echo (key=value lines)
//   u64 vocab_hash, u64 V, V x (u32 len, word bytes, u64 count)
//   u32 variant, u64 vocab, u64 embed, u64 state, u64 feature
//   u32 tensor_count, tensor_count x (u32 len, name, u64 rows, u64 cols, rows*cols scalars)
#ifndef MMEMBED_CHECKPOINT_HPP_
#define MMEMBED_CHECKPOINT_HPP_

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "mmembed/errors.hpp"
#include "mmembed/model.hpp"
#include "mmembed/text.hpp"

namespace mmembed {

inline constexpr char kCheckpointMagic[8] = {'M', 'M', 'E', 'M', 'B', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <class Real>
struct Checkpoint {
  std::string config_echo;
  Vocabulary vocab;
  ModelParams<Real> params;
};

namespace detail {

template <class U>
void put_le(std::ostream& out, U v) {
  static_assert(std::is_unsigned_v<U>);
  std::array<char, sizeof(U)> b;
  for (std::size_t i = 0; i < sizeof(U); ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(b.data(), b.size());
}

template <class U>
U get_le(std::istream& in) {
  std::array<unsigned char, sizeof(U)> b;
  if (!in.read(reinterpret_cast<char*>(b.data()), b.size())) {
    throw DataError("checkpoint truncated");
  }
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(b[i]) << (8 * i);
  return v;
}

template <class Real>
using ScalarBits = std::conditional_t<sizeof(Real) == 8, std::uint64_t, std::uint32_t>;

inline void put_string(std::ostream& out, const std::string& s, bool wide) {
  if (wide) {
    put_le<std::uint64_t>(out, s.size());
  } else {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  }
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& in, bool wide) {
  const std::uint64_t n = wide ? get_le<std::uint64_t>(in) : get_le<std::uint32_t>(in);
  if (n > (std::uint64_t{1} << 32)) throw DataError("checkpoint string length implausible");
  std::string s(n, '\0');
  if (n && !in.read(s.data(), static_cast<std::streamsize>(n))) throw DataError("checkpoint truncated");
  return s;
}

}  // namespace detail

template <class Real>
void write_checkpoint(std::ostream& out, const Checkpoint<Real>& ck) {
  static_assert(std::is_floating_point_v<Real> && (sizeof(Real) == 4 || sizeof(Real) == 8));
  using Bits = detail::ScalarBits<Real>;
  out.write(kCheckpointMagic, sizeof kCheckpointMagic);
  detail::put_le<std::uint32_t>(out, kCheckpointVersion);
  detail::put_le<std::uint32_t>(out, sizeof(Real));
  detail::put_string(out, ck.config_echo, true);
  detail::put_le<std::uint64_t>(out, ck.vocab.hash());
  detail::put_le<std::uint64_t>(out, ck.vocab.size());
  for (std::size_t i = 0; i < ck.vocab.size(); ++i) {
    detail::put_string(out, ck.vocab.word(static_cast<WordId>(i)), false);
    detail::put_le<std::uint64_t>(out, ck.vocab.count(static_cast<WordId>(i)));
  }
  const auto& p = ck.params;
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.variant()));
  detail::put_le<std::uint64_t>(out, p.dims().vocab);
  detail::put_le<std::uint64_t>(out, p.dims().embed);
  detail::put_le<std::uint64_t>(out, p.dims().state);
  detail::put_le<std::uint64_t>(out, p.dims().feature);
  std::uint32_t count = 0;
  p.for_each_tensor([&](const TensorRef<const Real>&) { ++count; });
  detail::put_le<std::uint32_t>(out, count);
  p.for_each_tensor([&](const TensorRef<const Real>& t) {
    detail::put_string(out, std::string(t.name), false);
    detail::put_le<std::uint64_t>(out, t.rows);
    detail::put_le<std::uint64_t>(out, t.cols);
    for (Real v : t.values) detail::put_le<Bits>(out, std::bit_cast<Bits>(v));
  });
}

template <class Real>
Checkpoint<Real> read_checkpoint(std::istream& in) {
  using Bits = detail::ScalarBits<Real>;
  char magic[8];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) {
    throw DataError("not a checkpoint file");
  }
  if (detail::get_le<std::uint32_t>(in) != kCheckpointVersion) {
    throw DataError("unsupported checkpoint version");
  }
  if (detail::get_le<std::uint32_t>(in) != sizeof(Real)) {
    throw DataError("checkpoint scalar width does not match");
  }
  Checkpoint<Real> ck;
  ck.config_echo = detail::get_string(in, true);
  const std::uint64_t hash = detail::get_le<std::uint64_t>(in);
  const std::uint64_t V = detail::get_le<std::uint64_t>(in);
  if (V < Vocabulary::kReserved) throw DataError("checkpoint vocabulary too small");
  std::vector<std::pair<std::string, std::uint64_t>> words;
  std::uint64_t eos_count = 0;
  for (std::uint64_t i = 0; i < V; ++i) {
    std::string w = detail::get_string(in, false);
    const std::uint64_t c = detail::get_le<std::uint64_t>(in);
    if (i == Vocabulary::kEos) eos_count = c;
    if (i >= Vocabulary::kReserved) words.emplace_back(std::move(w), c);
  }
  ck.vocab = Vocabulary::from_ordered(std::move(words), eos_count);
  if (ck.vocab.hash() != hash) throw DataError("checkpoint vocabulary hash mismatch");

  const auto variant = detail::get_le<std::uint32_t>(in);
  if (variant > static_cast<std::uint32_t>(Variant::c)) throw DataError("unknown variant in checkpoint");
  ModelDims dims;
  dims.vocab = detail::get_le<std::uint64_t>(in);
  dims.embed = detail::get_le<std::uint64_t>(in);
  dims.state = detail::get_le<std::uint64_t>(in);
  dims.feature = detail::get_le<std::uint64_t>(in);
  if (dims.vocab != V) throw DataError("checkpoint vocabulary size mismatch");
  ck.params = ModelParams<Real>(static_cast<Variant>(variant), dims);
  const std::uint32_t count = detail::get_le<std::uint32_t>(in);
  std::uint32_t expected = 0;
  ck.params.for_each_tensor([&](const TensorRef<Real>&) { ++expected; });
  if (count != expected) throw DataError("checkpoint tensor count mismatch");
  ck.params.for_each_tensor([&](const TensorRef<Real>& t) {
    const std::string name = detail::get_string(in, false);
    const auto rows = detail::get_le<std::uint64_t>(in);
    const auto cols = detail::get_le<std::uint64_t>(in);
    if (name != t.name || rows != t.rows || cols != t.cols) {
      throw DataError("checkpoint tensor '" + name + "' does not match model layout");
    }
    for (auto& v : t.values) v = std::bit_cast<Real>(detail::get_le<Bits>(in));
  });
  return ck;
}

template <class Real>
void save_checkpoint(const std::string& path, const Checkpoint<Real>& ck) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint: " + path);
  write_checkpoint(out, ck);
  if (!out) throw DataError("failed writing checkpoint: " + path);
}

template <class Real>
Checkpoint<Real> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  return read_checkpoint<Real>(in);
}

}  // namespace mmembed

#endif  // MMEMBED_CHECKPOINT_HPP_
