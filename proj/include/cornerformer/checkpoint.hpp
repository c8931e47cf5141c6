#pragma once

// Binary checkpoint container:
//   "CFCK" | version u32 | records... | crc32 u32
// record = name_len u32 | name bytes | rank u32 | dims u32 x rank | f32 payload
// All integers and floats little-endian. The CRC covers every byte before it.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <vector>

#include <zlib.h>

#include "cornerformer/tensor.hpp"

namespace cornerformer {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CheckpointRecord {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

inline constexpr std::uint32_t kCheckpointVersion = 2;

namespace detail {

static_assert(std::endian::native == std::endian::little, "checkpoint io assumes little-endian host");

inline void put_u32(std::vector<unsigned char>& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

inline std::uint32_t get_u32(const std::vector<unsigned char>& buf, std::size_t& pos) {
  if (pos + 4 > buf.size()) throw CheckpointError("checkpoint truncated");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf[pos + i]) << (8 * i);
  pos += 4;
  return v;
}

inline std::uint32_t crc32_of(const unsigned char* p, std::size_t n) {
  return static_cast<std::uint32_t>(::crc32(0L, p, static_cast<uInt>(n)));
}

}  // namespace detail

inline std::vector<unsigned char> encode_checkpoint(const std::vector<CheckpointRecord>& records) {
  std::vector<unsigned char> buf = {'C', 'F', 'C', 'K'};
  detail::put_u32(buf, kCheckpointVersion);
  for (const auto& r : records) {
    if (r.data.size() != shape_numel(r.shape))
      throw CheckpointError("record '" + r.name + "' payload does not match its shape");
    detail::put_u32(buf, static_cast<std::uint32_t>(r.name.size()));
    buf.insert(buf.end(), r.name.begin(), r.name.end());
    detail::put_u32(buf, static_cast<std::uint32_t>(r.shape.size()));
    for (auto d : r.shape) detail::put_u32(buf, static_cast<std::uint32_t>(d));
    const auto* bytes = reinterpret_cast<const unsigned char*>(r.data.data());
    buf.insert(buf.end(), bytes, bytes + r.data.size() * sizeof(float));
  }
  detail::put_u32(buf, detail::crc32_of(buf.data(), buf.size()));
  return buf;
}

inline std::vector<CheckpointRecord> decode_checkpoint(const std::vector<unsigned char>& buf) {
  if (buf.size() < 12 || std::memcmp(buf.data(), "CFCK", 4) != 0)
    throw CheckpointError("not a checkpoint (bad magic)");
  std::size_t tail = buf.size() - 4;
  std::size_t pos = tail;
  const std::uint32_t stored = detail::get_u32(buf, pos);
  if (stored != detail::crc32_of(buf.data(), tail)) throw CheckpointError("checkpoint CRC mismatch");
  pos = 4;
  const std::uint32_t version = detail::get_u32(buf, pos);
  if (version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  std::vector<CheckpointRecord> out;
  while (pos < tail) {
    CheckpointRecord r;
    const std::uint32_t len = detail::get_u32(buf, pos);
    if (pos + len > tail) throw CheckpointError("checkpoint truncated in record name");
    r.name.assign(reinterpret_cast<const char*>(buf.data() + pos), len);
    pos += len;
    const std::uint32_t rank = detail::get_u32(buf, pos);
    for (std::uint32_t i = 0; i < rank; ++i) r.shape.push_back(detail::get_u32(buf, pos));
    const std::size_t n = shape_numel(r.shape);
    if (pos + n * sizeof(float) > tail)
      throw CheckpointError("checkpoint truncated in record '" + r.name + "'");
    r.data.resize(n);
    std::memcpy(r.data.data(), buf.data() + pos, n * sizeof(float));
    pos += n * sizeof(float);
    out.push_back(std::move(r));
  }
  return out;
}

inline void write_checkpoint(const std::string& path, const std::vector<CheckpointRecord>& records) {
  const auto buf = encode_checkpoint(records);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw CheckpointError("cannot open " + path + " for writing");
  f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!f) throw CheckpointError("write failed: " + path);
}

inline std::vector<CheckpointRecord> read_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open checkpoint " + path);
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_checkpoint(buf);
}

}  // namespace cornerformer
