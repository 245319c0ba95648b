// SPDX-License-Identifier: Apache-2.0
#pragma once

// Images are (1, 3, H, W) float tensors with values in [0, 1]. Files go
// through libpng (lossless, 8 bits per channel) or libjpeg (baseline, 4:2:0).

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <utility>
#include <vector>

// jpeglib.h needs FILE and size_t declared first.
#include <jpeglib.h>

#include "liso/error.hpp"
#include "liso/tensor.hpp"

namespace liso {

using Image = Tensor<float>;

inline constexpr int kMinImageSide = 16;

inline void validate_image(const Image& img) {
  require(img.rank() == 4 && img.dim(0) == 1 && img.dim(1) == 3, ErrorCode::ShapeMismatch,
          "image must be (1,3,H,W), got " + img.shape().str());
  require(img.dim(2) >= kMinImageSide && img.dim(3) >= kMinImageSide, ErrorCode::TooSmall,
          "image sides must be >= " + std::to_string(kMinImageSide));
  for (float v : img.storage()) require(v >= 0.0f && v <= 1.0f, ErrorCode::InvalidArgument, "pixel outside [0,1]");
}

inline std::uint8_t to_byte(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

/// round(v * 255) / 255 elementwise.
template <class T>
Tensor<T> quantize(const Tensor<T>& img) {
  Tensor<T> out(img.shape());
  for (std::size_t i = 0; i < img.size(); ++i)
    out[i] = static_cast<T>(std::round(std::clamp(img[i], T{0}, T{1}) * T{255})) / T{255};
  return out;
}

/// Interleaved RGB bytes, row-major.
inline std::vector<std::uint8_t> to_rgb_bytes(const Image& img) {
  const int h = img.dim(2), w = img.dim(3);
  std::vector<std::uint8_t> rgb(static_cast<std::size_t>(h) * w * 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) rgb[(static_cast<std::size_t>(y) * w + x) * 3 + c] = to_byte(img.at(0, c, y, x));
  return rgb;
}

inline Image from_rgb_bytes(const std::uint8_t* rgb, int h, int w) {
  Image img(Shape{1, 3, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) img.at(0, c, y, x) = rgb[(static_cast<std::size_t>(y) * w + x) * 3 + c] / 255.0f;
  return img;
}

namespace detail {

struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

inline void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

inline void jpeg_silent(j_common_ptr, int) {}

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::DecodeError, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorCode::IoError, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(out), ErrorCode::IoError, "write failed for " + path.string());
}

}  // namespace detail

/// Baseline JPEG with 4:2:0 chroma subsampling.
inline std::vector<std::uint8_t> encode_jpeg(const Image& img, int quality) {
  require(quality >= 1 && quality <= 100, ErrorCode::InvalidArgument, "JPEG quality must be in [1,100]");
  require(img.rank() == 4 && img.dim(0) == 1 && img.dim(1) == 3, ErrorCode::ShapeMismatch, "encode_jpeg shape");
  const int h = img.dim(2), w = img.dim(3);
  const std::vector<std::uint8_t> rgb = to_rgb_bytes(img);

  jpeg_compress_struct cinfo{};
  detail::JpegErrorManager err{};
  unsigned char* buffer = nullptr;
  unsigned long size = 0;
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = detail::jpeg_error_exit;
  err.base.emit_message = detail::jpeg_silent;
  if (setjmp(err.jump)) {
    jpeg_destroy_compress(&cinfo);
    std::free(buffer);
    fail(ErrorCode::CodecError, std::string("JPEG encode: ") + err.message);
  }
  jpeg_create_compress(&cinfo);
  jpeg_mem_dest(&cinfo, &buffer, &size);
  cinfo.image_width = static_cast<JDIMENSION>(w);
  cinfo.image_height = static_cast<JDIMENSION>(h);
  cinfo.input_components = 3;
  cinfo.in_color_space = JCS_RGB;
  jpeg_set_defaults(&cinfo);
  jpeg_set_quality(&cinfo, quality, TRUE);
  cinfo.dct_method = JDCT_ISLOW;
  cinfo.comp_info[0].h_samp_factor = 2;
  cinfo.comp_info[0].v_samp_factor = 2;
  cinfo.comp_info[1].h_samp_factor = cinfo.comp_info[1].v_samp_factor = 1;
  cinfo.comp_info[2].h_samp_factor = cinfo.comp_info[2].v_samp_factor = 1;
  jpeg_start_compress(&cinfo, TRUE);
  while (cinfo.next_scanline < cinfo.image_height) {
    JSAMPROW row = const_cast<JSAMPROW>(rgb.data() + static_cast<std::size_t>(cinfo.next_scanline) * w * 3);
    jpeg_write_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_compress(&cinfo);
  std::vector<std::uint8_t> out(buffer, buffer + size);
  jpeg_destroy_compress(&cinfo);
  std::free(buffer);
  return out;
}

inline Image decode_jpeg(const std::vector<std::uint8_t>& bytes) {
  jpeg_decompress_struct cinfo{};
  detail::JpegErrorManager err{};
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = detail::jpeg_error_exit;
  err.base.emit_message = detail::jpeg_silent;
  std::vector<std::uint8_t> rgb;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    fail(ErrorCode::DecodeError, std::string("JPEG decode: ") + err.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  cinfo.dct_method = JDCT_ISLOW;
  jpeg_start_decompress(&cinfo);
  const int w = static_cast<int>(cinfo.output_width), h = static_cast<int>(cinfo.output_height);
  rgb.resize(static_cast<std::size_t>(w) * h * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = rgb.data() + static_cast<std::size_t>(cinfo.output_scanline) * w * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return from_rgb_bytes(rgb.data(), h, w);
}

inline Image decode_png(const std::vector<std::uint8_t>& bytes) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size()))
    fail(ErrorCode::DecodeError, std::string("PNG decode: ") + image.message);
  image.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> rgb(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, rgb.data(), 0, nullptr)) {
    png_image_free(&image);
    fail(ErrorCode::DecodeError, std::string("PNG decode: ") + image.message);
  }
  return from_rgb_bytes(rgb.data(), static_cast<int>(image.height), static_cast<int>(image.width));
}

/// Decodes a PNG or JPEG file into [0,1] floats (v / 255).
inline Image load_image(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  require(bytes.size() >= 4, ErrorCode::DecodeError, "file too short: " + path.string());
  Image img;
  if (bytes[0] == 0x89 && bytes[1] == 'P' && bytes[2] == 'N' && bytes[3] == 'G')
    img = decode_png(bytes);
  else if (bytes[0] == 0xFF && bytes[1] == 0xD8)
    img = decode_jpeg(bytes);
  else
    fail(ErrorCode::DecodeError, "not a PNG or JPEG file: " + path.string());
  validate_image(img);
  return img;
}

inline void save_png(const Image& img, const std::filesystem::path& path) {
  require(img.rank() == 4 && img.dim(0) == 1 && img.dim(1) == 3, ErrorCode::ShapeMismatch, "save_png shape");
  const auto rgb = to_rgb_bytes(img);
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.dim(3));
  image.height = static_cast<png_uint_32>(img.dim(2));
  image.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.string().c_str(), 0, rgb.data(), 0, nullptr))
    fail(ErrorCode::IoError, std::string("PNG write: ") + image.message);
}

inline void save_jpeg(const Image& img, const std::filesystem::path& path, int quality) {
  detail::write_file(path, encode_jpeg(img, quality));
}

struct DatasetSplit {
  std::vector<std::filesystem::path> validation;
  std::vector<std::filesystem::path> training;
};

inline bool is_image_file(const std::filesystem::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

inline std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir) {
  require(std::filesystem::is_directory(dir), ErrorCode::EmptyDataset, "not a directory: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && is_image_file(e.path())) files.push_back(e.path());
  std::sort(files.begin(), files.end(),
            [](const auto& a, const auto& b) { return a.filename().string() < b.filename().string(); });
  return files;
}

/// Lexicographic split: the first k_val files validate, the next k_train
/// train. Short directories keep at least one file on each side.
inline DatasetSplit make_split(const std::filesystem::path& dir, std::size_t k_val = 1000,
                               std::size_t k_train = 1000) {
  const auto files = list_images(dir);
  require(files.size() >= 2, ErrorCode::EmptyDataset,
          "need at least 2 images in " + dir.string() + ", found " + std::to_string(files.size()));
  require(k_val >= 1 && k_train >= 1, ErrorCode::InvalidArgument, "split sizes must be >= 1");
  const std::size_t nval = std::min(k_val, files.size() - 1);
  const std::size_t ntrain = std::min(k_train, files.size() - nval);
  DatasetSplit s;
  s.validation.assign(files.begin(), files.begin() + static_cast<std::ptrdiff_t>(nval));
  s.training.assign(files.begin() + static_cast<std::ptrdiff_t>(nval),
                    files.begin() + static_cast<std::ptrdiff_t>(nval + ntrain));
  return s;
}

namespace detail {
inline float cubic_weight(float t) {
  constexpr float a = -0.5f;
  t = std::abs(t);
  if (t <= 1.0f) return ((a + 2.0f) * t - (a + 3.0f)) * t * t + 1.0f;
  if (t < 2.0f) return ((a * t - 5.0f * a) * t + 8.0f * a) * t - 4.0f * a;
  return 0.0f;
}
}  // namespace detail

/// Bicubic resampling (Keys, a = -0.5) with edge clamping; output clipped
/// to [0,1].
inline Image resize_bicubic(const Image& img, int out_h, int out_w) {
  const int h = img.dim(2), w = img.dim(3), c = img.dim(1);
  if (h == out_h && w == out_w) return img;
  Image out(Shape{1, c, out_h, out_w});
  const float sy = static_cast<float>(h) / out_h, sx = static_cast<float>(w) / out_w;
  for (int y = 0; y < out_h; ++y) {
    const float fy = (y + 0.5f) * sy - 0.5f;
    const int iy = static_cast<int>(std::floor(fy));
    for (int x = 0; x < out_w; ++x) {
      const float fx = (x + 0.5f) * sx - 0.5f;
      const int ix = static_cast<int>(std::floor(fx));
      for (int ch = 0; ch < c; ++ch) {
        float acc = 0.0f, wsum = 0.0f;
        for (int m = -1; m <= 2; ++m) {
          const float wy = detail::cubic_weight(fy - (iy + m));
          const int yy = std::clamp(iy + m, 0, h - 1);
          for (int n = -1; n <= 2; ++n) {
            const float wx = detail::cubic_weight(fx - (ix + n));
            const int xx = std::clamp(ix + n, 0, w - 1);
            acc += wy * wx * img.at(0, ch, yy, xx);
            wsum += wy * wx;
          }
        }
        out.at(0, ch, y, x) = std::clamp(acc / wsum, 0.0f, 1.0f);
      }
    }
  }
  return out;
}

inline Image crop(const Image& img, int top, int left, int h, int w) {
  require(top >= 0 && left >= 0 && top + h <= img.dim(2) && left + w <= img.dim(3), ErrorCode::InvalidArgument,
          "crop window outside image");
  Image out(Shape{1, img.dim(1), h, w});
  for (int c = 0; c < img.dim(1); ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out.at(0, c, y, x) = img.at(0, c, top + y, left + x);
  return out;
}

/// Resizes so the shorter side equals `size`, then center-crops a square.
inline Image fit_square(const Image& img, int size) {
  const int h = img.dim(2), w = img.dim(3);
  if (h == size && w == size) return img;
  const float s = static_cast<float>(size) / std::min(h, w);
  const int rh = std::max(size, static_cast<int>(std::lround(h * s)));
  const int rw = std::max(size, static_cast<int>(std::lround(w * s)));
  const Image r = resize_bicubic(img, rh, rw);
  return crop(r, (rh - size) / 2, (rw - size) / 2, size, size);
}


}  // namespace liso
