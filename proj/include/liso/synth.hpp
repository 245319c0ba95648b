// SPDX-License-Identifier: Apache-2.0
#pragma once

// Procedural stand-in for a photo dataset: smooth colour gradients,
// multi-octave value noise, soft-edged shapes and mild sensor noise.

#include <cmath>
#include <filesystem>
#include <iomanip>
#include <random>
#include <sstream>
#include <vector>

#include "liso/imageio.hpp"

namespace liso {

namespace detail {

class ValueNoise {
 public:
  ValueNoise(int cells, std::mt19937_64& rng) : cells_(cells), grid_((cells + 1) * (cells + 1)) {
    std::uniform_real_distribution<float> u(-1.0f, 1.0f);
    for (auto& v : grid_) v = u(rng);
  }
  /// u, v in [0, 1]
  float at(float u, float v) const {
    const float x = u * cells_, y = v * cells_;
    const int ix = std::min(static_cast<int>(x), cells_ - 1), iy = std::min(static_cast<int>(y), cells_ - 1);
    const float fx = smooth(x - ix), fy = smooth(y - iy);
    auto g = [&](int a, int b) { return grid_[b * (cells_ + 1) + a]; };
    const float top = g(ix, iy) + fx * (g(ix + 1, iy) - g(ix, iy));
    const float bot = g(ix, iy + 1) + fx * (g(ix + 1, iy + 1) - g(ix, iy + 1));
    return top + fy * (bot - top);
  }

 private:
  static float smooth(float t) { return t * t * (3.0f - 2.0f * t); }
  int cells_;
  std::vector<float> grid_;
};

}  // namespace detail

inline Image synth_image(int h, int w, std::uint64_t seed) {
  require(h >= 1 && w >= 1, ErrorCode::InvalidArgument, "synth size");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Image img(Shape{1, 3, h, w});

  float c0[3], c1[3];
  for (int c = 0; c < 3; ++c) {
    c0[c] = u(rng);
    c1[c] = u(rng);
  }
  const float angle = u(rng) * 6.2831853f;
  const float ax = std::cos(angle), ay = std::sin(angle);

  std::vector<detail::ValueNoise> octaves;
  std::vector<float> amp;
  float a = 0.25f + 0.15f * u(rng);
  for (int cells = 2 + static_cast<int>(u(rng) * 3); cells <= 32; cells *= 2) {
    octaves.emplace_back(cells, rng);
    amp.push_back(a);
    a *= 0.55f;
  }
  float tint[3];
  for (auto& t : tint) t = 0.5f + u(rng);

  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const float fu = (x + 0.5f) / w, fv = (y + 0.5f) / h;
      const float s = std::clamp(0.5f + (fu - 0.5f) * ax + (fv - 0.5f) * ay, 0.0f, 1.0f);
      float n = 0.0f;
      for (std::size_t o = 0; o < octaves.size(); ++o) n += amp[o] * octaves[o].at(fu, fv);
      for (int c = 0; c < 3; ++c) img.at(0, c, y, x) = c0[c] + s * (c1[c] - c0[c]) + n * tint[c] * 0.5f;
    }

  const int shapes = 2 + static_cast<int>(u(rng) * 5);
  for (int k = 0; k < shapes; ++k) {
    const float cx = u(rng), cy = u(rng);
    const float r = 0.08f + 0.25f * u(rng);
    const float soft = 0.01f + 0.05f * u(rng);
    const bool box = u(rng) < 0.4f;
    const float alpha = 0.5f + 0.5f * u(rng);
    float col[3];
    for (auto& c : col) c = u(rng);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const float dx = (x + 0.5f) / w - cx, dy = (y + 0.5f) / h - cy;
        const float d = box ? std::max(std::abs(dx), std::abs(dy)) : std::sqrt(dx * dx + dy * dy);
        const float m = alpha * std::clamp((r - d) / soft, 0.0f, 1.0f);
        if (m <= 0.0f) continue;
        for (int c = 0; c < 3; ++c) {
          float& v = img.at(0, c, y, x);
          v = (1.0f - m) * v + m * col[c];
        }
      }
  }

  std::normal_distribution<float> noise(0.0f, 0.01f + 0.02f * u(rng));
  for (auto& v : img.storage()) v = std::clamp(v + noise(rng), 0.0f, 1.0f);
  return quantize(img);
}

/// Writes `count` PNGs named img_00000.png ... into `dir`.
inline void write_synthetic_dataset(const std::filesystem::path& dir, int count, int size, std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  for (int i = 0; i < count; ++i) {
    std::ostringstream name;
    name << "img_" << std::setw(5) << std::setfill('0') << i << ".png";
    save_png(synth_image(size, size, seed * 1000003ULL + static_cast<std::uint64_t>(i)), dir / name.str());
  }
}

}  // namespace liso
