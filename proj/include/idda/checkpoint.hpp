#pragma once

// Named-tensor container used for checkpoints and cached datasets.
//
//   "IDDACKPT"                      8 bytes
//   version                         u32 LE
//   entry count                     u32 LE
//   per entry:
//     name length                   u16 LE
//     name                          bytes
//     rank                          u8
//     dims                          u32 LE each
//     values                        f32 LE, row-major

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "idda/tensor.hpp"

namespace idda {

constexpr char kCheckpointMagic[8] = {'I', 'D', 'D', 'A', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

using NamedTensors = std::map<std::string, Tensor<float>>;

namespace detail {

template <typename U>
void put_le(std::vector<std::uint8_t>& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

template <typename U>
U get_le(const std::vector<std::uint8_t>& in, std::size_t& pos) {
  if (in.size() - pos < sizeof(U) || pos > in.size()) throw Error("tensor file: truncated");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(U{in[pos + i]} << (8 * i));
  pos += sizeof(U);
  return v;
}

}  // namespace detail

inline std::vector<std::uint8_t> serialize_tensors(const NamedTensors& entries,
                                                   std::uint32_t version = kCheckpointVersion) {
  std::vector<std::uint8_t> out(kCheckpointMagic, kCheckpointMagic + 8);
  detail::put_le<std::uint32_t>(out, version);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& [name, t] : entries) {
    if (name.size() > 0xffff) throw Error("tensor file: name too long");
    if (t.rank() > 0xff) throw Error("tensor file: rank too large");
    detail::put_le<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    out.push_back(static_cast<std::uint8_t>(t.rank()));
    for (std::size_t d : t.shape()) detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    for (float v : t.values()) detail::put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

inline NamedTensors parse_tensors(const std::vector<std::uint8_t>& bytes, std::uint32_t* version = nullptr) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) {
    throw Error("tensor file: bad magic");
  }
  std::size_t pos = 8;
  const auto ver = detail::get_le<std::uint32_t>(bytes, pos);
  if (ver != kCheckpointVersion) throw Error("tensor file: unsupported version " + std::to_string(ver));
  if (version) *version = ver;
  const auto count = detail::get_le<std::uint32_t>(bytes, pos);
  NamedTensors out;
  for (std::uint32_t e = 0; e < count; ++e) {
    const auto len = detail::get_le<std::uint16_t>(bytes, pos);
    if (bytes.size() - pos < len) throw Error("tensor file: truncated");
    std::string name(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                     bytes.begin() + static_cast<std::ptrdiff_t>(pos + len));
    pos += len;
    const auto rank = detail::get_le<std::uint8_t>(bytes, pos);
    Shape shape(rank);
    for (auto& d : shape) d = detail::get_le<std::uint32_t>(bytes, pos);
    const std::size_t n = shape_size(shape);
    if ((bytes.size() - pos) / 4 < n) throw Error("tensor file: truncated");
    std::vector<float> values(n);
    for (auto& v : values) v = std::bit_cast<float>(detail::get_le<std::uint32_t>(bytes, pos));
    out.insert_or_assign(std::move(name), Tensor<float>(std::move(shape), std::move(values)));
  }
  if (pos != bytes.size()) throw Error("tensor file: trailing bytes");
  return out;
}

inline void write_tensor_file(const std::filesystem::path& path, const NamedTensors& entries) {
  const auto bytes = serialize_tensors(entries);
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("cannot write " + path.string());
}

inline NamedTensors read_tensor_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  const std::vector<std::uint8_t> bytes(std::istreambuf_iterator<char>(in), {});
  return parse_tensors(bytes);
}

// Metadata is stored as small float tensors whose values are exactly
// representable: 16-bit chunks for integers, one byte per value for text.

inline Tensor<float> encode_u64(std::uint64_t v) {
  Tensor<float> t({4});
  for (std::size_t i = 0; i < 4; ++i) t[i] = static_cast<float>((v >> (16 * i)) & 0xffff);
  return t;
}

inline std::uint64_t decode_u64(const Tensor<float>& t) {
  if (t.size() != 4) throw Error("tensor file: bad integer entry");
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < 4; ++i) v |= static_cast<std::uint64_t>(t[i]) << (16 * i);
  return v;
}

inline Tensor<float> encode_text(const std::string& s) {
  std::vector<float> v;
  v.reserve(s.size() + 1);
  v.push_back(0.0f);  // keeps the tensor non-empty for empty strings
  for (unsigned char c : s) v.push_back(static_cast<float>(c));
  const std::size_t n = v.size();
  return Tensor<float>({n}, std::move(v));
}

inline std::string decode_text(const Tensor<float>& t) {
  std::string s;
  for (std::size_t i = 1; i < t.size(); ++i) s.push_back(static_cast<char>(static_cast<unsigned char>(t[i])));
  return s;
}

}  // namespace idda
