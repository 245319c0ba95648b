// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "liso/error.hpp"
#include "liso/tensor.hpp"

namespace liso {

using Payload = std::vector<std::uint8_t>;

/// H x W x B payload bits; element (h, w, b) lives at (h * W + w) * B + b.
struct MessageTensor {
  int height = 0;
  int width = 0;
  int bpp = 0;
  std::vector<std::uint8_t> bits;

  MessageTensor() = default;
  MessageTensor(int h, int w, int b) : height(h), width(w), bpp(b), bits(static_cast<std::size_t>(h) * w * b, 0) {
    require(h >= 1 && w >= 1 && b >= 1, ErrorCode::InvalidArgument, "message dimensions must be >= 1");
  }

  std::size_t size() const { return bits.size(); }
  std::uint8_t& at(int h, int w, int b) { return bits[(static_cast<std::size_t>(h) * width + w) * bpp + b]; }
  std::uint8_t at(int h, int w, int b) const { return bits[(static_cast<std::size_t>(h) * width + w) * bpp + b]; }
  bool same_shape(const MessageTensor& o) const {
    return height == o.height && width == o.width && bpp == o.bpp;
  }
  bool operator==(const MessageTensor&) const = default;
};

inline constexpr int kLengthHeaderBits = 32;

inline std::size_t message_capacity_bytes(int h, int w, int b) {
  const std::size_t bits = static_cast<std::size_t>(h) * w * b;
  return bits < kLengthHeaderBits ? 0 : (bits - kLengthHeaderBits) / 8;
}

/// Lays out a 32-bit big-endian length header followed by the payload
/// bytes MSB-first; remaining bits are zero.
inline MessageTensor pack_message(const Payload& payload, int h, int w, int b) {
  require(h >= 1 && w >= 1 && b >= 1, ErrorCode::InvalidArgument, "message dimensions must be >= 1");
  const std::size_t capacity = static_cast<std::size_t>(h) * w * b;
  const std::size_t needed = kLengthHeaderBits + 8 * payload.size();
  require(payload.size() <= 0xFFFFFFFFu && needed <= capacity, ErrorCode::CapacityExceeded,
          "payload of " + std::to_string(payload.size()) + " bytes needs " + std::to_string(needed) +
              " bits, tensor holds " + std::to_string(capacity));
  MessageTensor m(h, w, b);
  const auto length = static_cast<std::uint32_t>(payload.size());
  for (int i = 0; i < kLengthHeaderBits; ++i) m.bits[i] = (length >> (31 - i)) & 1u;
  for (std::size_t byte = 0; byte < payload.size(); ++byte)
    for (int i = 0; i < 8; ++i) m.bits[kLengthHeaderBits + 8 * byte + i] = (payload[byte] >> (7 - i)) & 1u;
  return m;
}

inline Payload unpack_message(const MessageTensor& m) {
  require(m.size() >= static_cast<std::size_t>(kLengthHeaderBits), ErrorCode::MalformedHeader,
          "tensor too small for a length header");
  std::uint64_t length = 0;
  for (int i = 0; i < kLengthHeaderBits; ++i) length = (length << 1) | (m.bits[i] & 1u);
  require(kLengthHeaderBits + 8 * length <= m.size(), ErrorCode::MalformedHeader,
          "header claims " + std::to_string(length) + " bytes, capacity is " +
              std::to_string(message_capacity_bytes(m.height, m.width, m.bpp)));
  Payload out(length);
  for (std::size_t byte = 0; byte < length; ++byte) {
    std::uint8_t v = 0;
    for (int i = 0; i < 8; ++i) v = static_cast<std::uint8_t>((v << 1) | (m.bits[kLengthHeaderBits + 8 * byte + i] & 1u));
    out[byte] = v;
  }
  return out;
}

/// I.i.d. Bernoulli(1/2) bits drawn from the given generator.
template <std::uniform_random_bit_generator Rng>
MessageTensor sample_random_message(int h, int w, int b, Rng& rng) {
  MessageTensor m(h, w, b);
  std::uint64_t word = 0;
  int left = 0;
  for (auto& bit : m.bits) {
    if (left == 0) {
      word = rng();
      left = 64;
    }
    bit = static_cast<std::uint8_t>(word & 1u);
    word >>= 1;
    --left;
  }
  return m;
}

inline MessageTensor sample_random_message(int h, int w, int b, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sample_random_message(h, w, b, rng);
}

/// Fraction of differing bits.
inline double error_rate(const MessageTensor& predicted, const MessageTensor& truth) {
  require(predicted.same_shape(truth), ErrorCode::ShapeMismatch, "error_rate shape mismatch");
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) wrong += (predicted.bits[i] != truth.bits[i]);
  return static_cast<double>(wrong) / static_cast<double>(truth.size());
}

/// Message as a (1, B, H, W) float tensor, the layout decoders emit.
template <class T>
Tensor<T> message_to_tensor(const MessageTensor& m) {
  Tensor<T> t(Shape{1, m.bpp, m.height, m.width});
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x)
      for (int b = 0; b < m.bpp; ++b) t.at(0, b, y, x) = static_cast<T>(m.at(y, x, b));
  return t;
}

/// Thresholds a (1, B, H, W) probability map: bit = 1 iff p > 0.5.
template <class T>
MessageTensor decode_bits(const Tensor<T>& probs) {
  require(probs.rank() == 4 && probs.dim(0) == 1, ErrorCode::ShapeMismatch, "decode_bits expects (1,B,H,W)");
  MessageTensor m(probs.dim(2), probs.dim(3), probs.dim(1));
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x)
      for (int b = 0; b < m.bpp; ++b) m.at(y, x, b) = probs.at(0, b, y, x) > T(0.5) ? 1 : 0;
  return m;
}

inline std::string to_hex(const Payload& p) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string s;
  s.reserve(p.size() * 2);
  for (auto v : p) {
    s.push_back(kDigits[v >> 4]);
    s.push_back(kDigits[v & 15]);
  }
  return s;
}

inline Payload from_hex(std::string_view hex) {
  auto nibble = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    return -1;
  };
  require(hex.size() % 2 == 0, ErrorCode::InvalidArgument, "hex string has odd length");
  Payload out(hex.size() / 2);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const int hi = nibble(hex[2 * i]), lo = nibble(hex[2 * i + 1]);
    require(hi >= 0 && lo >= 0, ErrorCode::InvalidArgument, "invalid hex digit");
    out[i] = static_cast<std::uint8_t>(hi * 16 + lo);
  }
  return out;
}

}  // namespace liso
