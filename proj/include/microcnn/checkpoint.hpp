#pragma once

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "microcnn/errors.hpp"
#include "microcnn/model.hpp"

namespace microcnn {

// Checkpoint layout, all integers little-endian:
//
//   "MCN1"                      4 bytes magic
//   version                     u32 (currently 1)
//   descriptor length           u32, then UTF-8 descriptor text
//   tensor count                u32
//   per tensor:
//     name length               u16, then UTF-8 name
//     rank                      u32
//     dims                      u32 x rank
//     data                      float32 x prod(dims), IEEE-754 bits
//   crc32                       u32 over every preceding byte (zlib polynomial)

inline constexpr char kCheckpointMagic[4] = {'M', 'C', 'N', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

class ByteWriter {
 public:
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint32_t v) { put(v, 4); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  std::vector<std::uint8_t>& buffer() { return buf_; }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  ByteReader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}

  std::uint16_t u16() { return static_cast<std::uint16_t>(get(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string string(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t position() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (n > size_ - pos_)
      throw TruncatedFileError("checkpoint truncated: needed " + std::to_string(n) + " bytes at offset " +
                               std::to_string(pos_) + ", " + std::to_string(size_ - pos_) + " available");
  }
  std::uint64_t get(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }

  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

inline std::uint32_t crc32_of(const std::uint8_t* p, std::size_t n) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = ::crc32(crc, p, chunk);
    p += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_checkpoint(Sequential& model) {
  detail::ByteWriter w;
  w.bytes(kCheckpointMagic, 4);
  w.u32(kCheckpointVersion);
  const std::string desc = model.descriptor();
  w.u32(static_cast<std::uint32_t>(desc.size()));
  w.bytes(desc.data(), desc.size());
  const auto params = model.params();
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    w.u16(static_cast<std::uint16_t>(p.name.size()));
    w.bytes(p.name.data(), p.name.size());
    const auto& dims = p.value->shape().dims();
    w.u32(static_cast<std::uint32_t>(dims.size()));
    for (auto d : dims) w.u32(static_cast<std::uint32_t>(d));
    for (float v : p.value->data()) w.f32(v);
  }
  auto& buf = w.buffer();
  const std::uint32_t crc = detail::crc32_of(buf.data(), buf.size());
  w.u32(crc);
  return std::move(buf);
}

/// Parses and validates a checkpoint image. Structure is checked before the
/// checksum so a short file reports truncation rather than a CRC mismatch.
inline Sequential decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4) throw TruncatedFileError("checkpoint truncated: file shorter than the magic");
  if (std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0)
    throw BadMagicError("not a checkpoint: bad magic bytes (expected MCN1)");
  if (bytes.size() < 8) throw TruncatedFileError("checkpoint truncated: missing version");
  // Everything except the trailing CRC is payload.
  const std::size_t payload = bytes.size() >= 12 ? bytes.size() - 4 : bytes.size();
  detail::ByteReader r(bytes.data(), payload);
  r.string(4);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw VersionMismatchError("checkpoint format version " + std::to_string(version) +
                               " is not supported (expected " + std::to_string(kCheckpointVersion) + ")");
  const std::string desc = r.string(r.u32());
  const std::uint32_t count = r.u32();
  struct Record {
    std::string name;
    std::vector<std::size_t> dims;
    std::vector<float> data;
  };
  std::vector<Record> records;
  for (std::uint32_t i = 0; i < count; ++i) {
    Record rec;
    rec.name = r.string(r.u16());
    const std::uint32_t rank = r.u32();
    if (rank == 0 || rank > 8) throw CheckpointError("tensor '" + rec.name + "' has invalid rank");
    std::size_t n = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      rec.dims.push_back(r.u32());
      n *= rec.dims.back();
    }
    if (n > (payload - r.position()) / 4)
      throw TruncatedFileError("checkpoint truncated inside tensor '" + rec.name + "'");
    rec.data.resize(n);
    for (auto& v : rec.data) v = r.f32();
    records.push_back(std::move(rec));
  }
  if (bytes.size() < 12 || r.position() != payload)
    throw TruncatedFileError("checkpoint truncated or has unexpected trailing bytes");
  std::uint32_t stored = 0;
  for (int i = 0; i < 4; ++i) stored |= static_cast<std::uint32_t>(bytes[payload + i]) << (8 * i);
  if (stored != detail::crc32_of(bytes.data(), payload))
    throw ChecksumError("checkpoint checksum mismatch: file is corrupted");

  Sequential model = sequential_from_descriptor(desc);
  auto params = model.params();
  if (params.size() != records.size())
    throw CheckpointError("checkpoint has " + std::to_string(records.size()) + " tensors, architecture needs " +
                          std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& rec = records[i];
    if (rec.name != params[i].name)
      throw CheckpointError("checkpoint tensor '" + rec.name + "' where '" + params[i].name + "' was expected");
    if (rec.dims != params[i].value->shape().dims())
      throw CheckpointError("checkpoint tensor '" + rec.name + "' has shape " + Shape(rec.dims).to_string() +
                            ", expected " + params[i].value->shape().to_string());
    *params[i].value = Tensor(Shape(rec.dims), std::move(rec.data));
  }
  return model;
}

inline void save(Sequential& model, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(model);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("failed writing " + path.string());
}

inline Sequential load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace microcnn
