#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "msgnet/errors.hpp"
#include "msgnet/tensor.hpp"

// "MSGW" container shared by model weights, checkpoints and style embeddings.
//
//   "MSGW" | u32 version | u32 tensor count
//   per tensor: u16 name length | UTF-8 name | u8 ndim | u32 dims... | f32 payload
//   trailing UTF-8 "key=value\n" lines up to end of file
//
// All integers and floats are little-endian.
namespace msgnet {

inline constexpr std::uint32_t kMsgwVersion = 1;

struct MsgwFile {
  std::uint32_t version = kMsgwVersion;
  std::vector<std::pair<std::string, Tensor>> tensors;
  std::vector<std::pair<std::string, std::string>> meta;

  const Tensor* find(const std::string& name) const {
    for (const auto& [n, t] : tensors)
      if (n == name) return &t;
    return nullptr;
  }

  const std::string* meta_value(const std::string& key) const {
    for (const auto& [k, v] : meta)
      if (k == key) return &v;
    return nullptr;
  }

  const std::string& require_meta(const std::string& key) const {
    if (const auto* v = meta_value(key)) return *v;
    raise<DataError>("msgw: missing metadata key '", key, "'");
  }

  void set_meta(const std::string& key, std::string value) {
    for (auto& [k, v] : meta)
      if (k == key) {
        v = std::move(value);
        return;
      }
    meta.emplace_back(key, std::move(value));
  }
};

namespace detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) raise<DataError>("msgw: truncated file while reading ", what);
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return bytes_[pos_++];
  }
  std::uint16_t u16(const char* what) {
    need(2, what);
    const auto v = static_cast<std::uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<std::uint8_t> encode_msgw(const MsgwFile& file) {
  std::vector<std::uint8_t> out = {'M', 'S', 'G', 'W'};
  detail::put_u32(out, file.version);
  detail::put_u32(out, static_cast<std::uint32_t>(file.tensors.size()));
  for (const auto& [name, t] : file.tensors) {
    if (name.size() > 0xFFFF) raise<DataError>("msgw: tensor name too long");
    if (t.ndim() > 0xFF) raise<DataError>("msgw: tensor rank too large");
    detail::put_u16(out, static_cast<std::uint16_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    out.push_back(static_cast<std::uint8_t>(t.ndim()));
    for (auto d : t.shape()) detail::put_u32(out, static_cast<std::uint32_t>(d));
    for (float v : t.data()) detail::put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  for (const auto& [k, v] : file.meta) {
    if (k.empty() || k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos) {
      raise<DataError>("msgw: invalid metadata entry '", k, "'");
    }
    out.insert(out.end(), k.begin(), k.end());
    out.push_back('=');
    out.insert(out.end(), v.begin(), v.end());
    out.push_back('\n');
  }
  return out;
}

inline MsgwFile decode_msgw(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes);
  if (r.str(4, "magic") != "MSGW") raise<DataError>("msgw: bad magic, not an MSGW file");
  MsgwFile file;
  file.version = r.u32("version");
  if (file.version != kMsgwVersion) raise<DataError>("msgw: unsupported format version ", file.version);
  const auto count = r.u32("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.u16("name length");
    std::string name = r.str(len, "tensor name");
    const auto ndim = r.u8("rank");
    if (ndim == 0) raise<DataError>("msgw: tensor '", name, "' has rank 0");
    Shape shape;
    std::uint64_t n = 1;
    for (std::uint8_t d = 0; d < ndim; ++d) {
      const auto extent = r.u32("dimension");
      if (extent == 0) raise<DataError>("msgw: tensor '", name, "' has a zero extent");
      shape.push_back(extent);
      n *= extent;
      if (n > (std::uint64_t{1} << 32)) raise<DataError>("msgw: tensor '", name, "' is implausibly large");
    }
    r.need(static_cast<std::size_t>(n) * 4, "tensor payload");
    std::vector<float> data(static_cast<std::size_t>(n));
    for (auto& v : data) v = std::bit_cast<float>(r.u32("tensor payload"));
    for (const auto& [existing, t] : file.tensors)
      if (existing == name) raise<DataError>("msgw: duplicate tensor name '", name, "'");
    file.tensors.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  const std::string tail = r.str(r.remaining(), "metadata");
  std::size_t start = 0;
  while (start < tail.size()) {
    const auto end = tail.find('\n', start);
    if (end == std::string::npos) raise<DataError>("msgw: unterminated metadata line");
    const std::string line = tail.substr(start, end - start);
    const auto eq = line.find('=');
    if (eq == std::string::npos || eq == 0) raise<DataError>("msgw: malformed metadata line '", line, "'");
    file.meta.emplace_back(line.substr(0, eq), line.substr(eq + 1));
    start = end + 1;
  }
  return file;
}

}  // namespace msgnet
