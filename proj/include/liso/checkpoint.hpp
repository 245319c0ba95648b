// SPDX-License-Identifier: Apache-2.0
#pragma once

// Checkpoint layout (little-endian):
//   "LISOCKPT" u32 version
//   NetConfig: i32 hidden, i32 bpp, f32 slope, i32 decoder, critic, stem,
//              extractor, detector widths
//   u32 count, then per entry: u32 name_len, name, u8 trainable, u32 ndim,
//   i32 dims[ndim], f32 data[numel]
//   u32 crc32 of everything before it

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "liso/imageio.hpp"
#include "liso/nets.hpp"

namespace liso {

inline constexpr char kCheckpointMagic[8] = {'L', 'I', 'S', 'O', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace detail {

class ByteWriter {
 public:
  std::vector<std::uint8_t> bytes;

  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    bytes.insert(bytes.end(), b, b + n);
  }
  template <class V>
  void put(V v) {
    raw(&v, sizeof(V));
  }
};

class ByteReader {
 public:
  ByteReader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}

  void raw(void* p, std::size_t n) {
    require(n <= size_ - pos_, ErrorCode::CorruptCheckpoint, "checkpoint truncated");
    std::memcpy(p, data_ + pos_, n);
    pos_ += n;
  }
  template <class V>
  V get() {
    V v;
    raw(&v, sizeof(V));
    return v;
  }
  std::size_t remaining() const { return size_ - pos_; }

 private:
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

inline std::uint32_t crc32_of(const std::uint8_t* p, std::size_t n) {
  uLong c = crc32(0L, Z_NULL, 0);
  while (n > 0) {
    const uInt chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    c = crc32(c, p, chunk);
    p += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(c);
}

}  // namespace detail

inline std::vector<std::uint8_t> serialize_checkpoint(const ParameterArchive& a,
                                                      std::uint32_t version = kCheckpointVersion) {
  detail::ByteWriter w;
  w.raw(kCheckpointMagic, sizeof(kCheckpointMagic));
  w.put<std::uint32_t>(version);
  const NetConfig& c = a.config;
  w.put<std::int32_t>(c.hidden_channels);
  w.put<std::int32_t>(c.bpp);
  w.put<float>(c.leaky_slope);
  w.put<std::int32_t>(c.decoder_width);
  w.put<std::int32_t>(c.critic_width);
  w.put<std::int32_t>(c.stem_width);
  w.put<std::int32_t>(c.extractor_width);
  w.put<std::int32_t>(c.detector_width);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(a.entries().size()));
  for (const auto& [name, e] : a.entries()) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
    w.raw(name.data(), name.size());
    w.put<std::uint8_t>(e.trainable ? 1 : 0);
    const auto& dims = e.value.shape().dims();
    w.put<std::uint32_t>(static_cast<std::uint32_t>(dims.size()));
    for (int d : dims) w.put<std::int32_t>(d);
    w.raw(e.value.data(), e.value.size() * sizeof(float));
  }
  w.put<std::uint32_t>(detail::crc32_of(w.bytes.data(), w.bytes.size()));
  return std::move(w.bytes);
}

inline ParameterArchive deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  require(bytes.size() >= sizeof(kCheckpointMagic) + 8, ErrorCode::CorruptCheckpoint, "checkpoint truncated");
  require(std::memcmp(bytes.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) == 0, ErrorCode::CorruptCheckpoint,
          "not a checkpoint file");
  std::uint32_t version;
  std::memcpy(&version, bytes.data() + sizeof(kCheckpointMagic), 4);
  require(version == kCheckpointVersion, ErrorCode::VersionMismatch,
          "checkpoint format " + std::to_string(version) + ", expected " + std::to_string(kCheckpointVersion));
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + bytes.size() - 4, 4);
  require(stored == detail::crc32_of(bytes.data(), bytes.size() - 4), ErrorCode::CorruptCheckpoint,
          "checkpoint checksum mismatch");

  detail::ByteReader r(bytes.data(), bytes.size() - 4);
  char magic[8];
  r.raw(magic, 8);
  r.get<std::uint32_t>();
  NetConfig c;
  c.hidden_channels = r.get<std::int32_t>();
  c.bpp = r.get<std::int32_t>();
  c.leaky_slope = r.get<float>();
  c.decoder_width = r.get<std::int32_t>();
  c.critic_width = r.get<std::int32_t>();
  c.stem_width = r.get<std::int32_t>();
  c.extractor_width = r.get<std::int32_t>();
  c.detector_width = r.get<std::int32_t>();
  ParameterArchive a(c);
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto len = r.get<std::uint32_t>();
    require(len <= r.remaining(), ErrorCode::CorruptCheckpoint, "bad entry name");
    std::string name(len, '\0');
    r.raw(name.data(), len);
    const bool trainable = r.get<std::uint8_t>() != 0;
    const auto ndim = r.get<std::uint32_t>();
    require(ndim <= 8, ErrorCode::CorruptCheckpoint, "bad rank for " + name);
    std::vector<int> dims(ndim);
    std::size_t numel = 1;
    for (auto& d : dims) {
      d = r.get<std::int32_t>();
      require(d >= 0, ErrorCode::CorruptCheckpoint, "bad dimension for " + name);
      numel *= static_cast<std::size_t>(d);
    }
    require(numel * sizeof(float) <= r.remaining(), ErrorCode::CorruptCheckpoint, "checkpoint truncated");
    std::vector<float> data(numel);
    r.raw(data.data(), numel * sizeof(float));
    a.add(name, Tensor<float>(Shape(std::move(dims)), std::move(data)), trainable);
  }
  require(r.remaining() == 0, ErrorCode::CorruptCheckpoint, "trailing bytes in checkpoint");
  return a;
}

inline void save_checkpoint(const ParameterArchive& a, const std::filesystem::path& path) {
  const auto tmp = path.string() + ".tmp";
  detail::write_file(tmp, serialize_checkpoint(a));
  std::filesystem::rename(tmp, path);
}

inline ParameterArchive load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(detail::read_file(path));
}

}  // namespace liso
