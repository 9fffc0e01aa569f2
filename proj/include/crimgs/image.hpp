#pragma once

// Image files: 8-bit sRGB PNG and a float32 sidecar ("CRMF" header, then
// channels, height, width as little-endian uint32, then row-major floats).
// In memory an image is a linear-RGB tensor [3, H, W].

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "crimgs/autodiff/tensor.hpp"
#include "crimgs/errors.hpp"

namespace crimgs {

template <typename Real>
[[nodiscard]] Real srgb_to_linear(Real c) {
  const double v = static_cast<double>(c);
  return static_cast<Real>(v <= 0.04045 ? v / 12.92 : std::pow((v + 0.055) / 1.055, 2.4));
}

template <typename Real>
[[nodiscard]] Real linear_to_srgb(Real l) {
  const double v = static_cast<double>(l);
  return static_cast<Real>(v <= 0.0031308 ? 12.92 * v : 1.055 * std::pow(v, 1.0 / 2.4) - 0.055);
}

namespace detail {

inline void check_image(const std::string& where, const ad::Shape& s) {
  if (s.size() != 3 || s[0] != 3 || s[1] == 0 || s[2] == 0) {
    throw ShapeError(where + ": expected an image of shape [3, H, W], got " + ad::to_string(s));
  }
}

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.string().c_str(), mode));
  if (!f) throw DataError("cannot open '" + path.string() + "'");
  return f;
}

constexpr std::array<char, 4> kFloatMagic{'C', 'R', 'M', 'F'};

}  // namespace detail

/// Writes linear RGB as 8-bit sRGB. Values are clamped to [0, 1].
template <typename Real>
void write_png(const std::filesystem::path& path, const ad::Tensor<Real>& image) {
  detail::check_image("write_png", image.shape());
  const std::size_t h = image.dim(1), w = image.dim(2), hw = h * w;
  std::vector<png_byte> rows(h * w * 3);
  const auto v = image.data();
  for (std::size_t p = 0; p < hw; ++p)
    for (std::size_t c = 0; c < 3; ++c) {
      const double s = linear_to_srgb(std::clamp(static_cast<double>(v[c * hw + p]), 0.0, 1.0));
      rows[p * 3 + c] = static_cast<png_byte>(std::lround(s * 255.0));
    }
  auto file = detail::open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw DataError("libpng initialisation failed for '" + path.string() + "'");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("failed to write PNG '" + path.string() + "'");
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_set_sRGB(png, info, PNG_sRGB_INTENT_PERCEPTUAL);
  png_write_info(png, info);
  for (std::size_t y = 0; y < h; ++y) png_write_row(png, rows.data() + y * w * 3);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

/// Reads an 8-bit PNG (RGB, RGBA, gray) as linear RGB.
template <typename Real>
[[nodiscard]] ad::Tensor<Real> read_png(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw DataError("image file not found: '" + path.string() + "'");
  auto file = detail::open_file(path, "rb");
  png_byte sig[8];
  if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw DataError("not a PNG file: '" + path.string() + "'");
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw DataError("libpng initialisation failed for '" + path.string() + "'");
  }
  std::vector<png_byte> pixels;
  png_uint_32 w = 0, h = 0;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("corrupt PNG '" + path.string() + "'");
  }
  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  w = png_get_image_width(png, info);
  h = png_get_image_height(png, info);
  const int depth = png_get_bit_depth(png, info);
  const int type = png_get_color_type(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (type == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (type == PNG_COLOR_TYPE_GRAY || type == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
  if (type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  pixels.resize(std::size_t(w) * h * 3);
  for (png_uint_32 y = 0; y < h; ++y) png_read_row(png, pixels.data() + std::size_t(y) * w * 3, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  const std::size_t hw = std::size_t(w) * h;
  std::array<Real, 256> lut;
  for (std::size_t i = 0; i < 256; ++i) lut[i] = srgb_to_linear(static_cast<Real>(static_cast<double>(i) / 255.0));
  std::vector<Real> v(3 * hw);
  for (std::size_t p = 0; p < hw; ++p)
    for (std::size_t c = 0; c < 3; ++c) v[c * hw + p] = lut[pixels[p * 3 + c]];
  return ad::Tensor<Real>({3, h, w}, std::move(v));
}

/// Float32 sidecar with exact linear values.
template <typename Real>
void write_float_image(const std::filesystem::path& path, const ad::Tensor<Real>& image) {
  detail::check_image("write_float_image", image.shape());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
  out.write(detail::kFloatMagic.data(), 4);
  for (std::size_t d = 0; d < 3; ++d) {
    const auto e = static_cast<std::uint32_t>(image.dim(d));
    out.write(reinterpret_cast<const char*>(&e), 4);
  }
  std::vector<float> f(image.data().begin(), image.data().end());
  out.write(reinterpret_cast<const char*>(f.data()), static_cast<std::streamsize>(f.size() * sizeof(float)));
  if (!out) throw DataError("failed to write '" + path.string() + "'");
}

template <typename Real>
[[nodiscard]] ad::Tensor<Real> read_float_image(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw DataError("image file not found: '" + path.string() + "'");
  std::ifstream in(path, std::ios::binary);
  std::array<char, 4> magic{};
  std::array<std::uint32_t, 3> dims{};
  in.read(magic.data(), 4);
  in.read(reinterpret_cast<char*>(dims.data()), 12);
  if (!in || magic != detail::kFloatMagic) throw DataError("not a float image: '" + path.string() + "'");
  if (dims[0] != 3 || dims[1] == 0 || dims[2] == 0 || dims[1] > 65536 || dims[2] > 65536) {
    throw DataError("bad float image dimensions in '" + path.string() + "'");
  }
  std::vector<float> f(std::size_t(dims[0]) * dims[1] * dims[2]);
  in.read(reinterpret_cast<char*>(f.data()), static_cast<std::streamsize>(f.size() * sizeof(float)));
  if (!in) throw DataError("truncated float image '" + path.string() + "'");
  return ad::Tensor<Real>({dims[0], dims[1], dims[2]}, std::vector<Real>(f.begin(), f.end()));
}

}  // namespace crimgs
