// Copyright 2026 The ego Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "ego/detail/binary_io.hpp"
#include "ego/error.hpp"

namespace ego {

// Synthetic image: height x width x channels floats, row-major (channel fastest).
struct ToyImage {
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::uint32_t channels = 0;
  std::vector<float> pixels;

  float at(std::uint32_t y, std::uint32_t x, std::uint32_t c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  float& at(std::uint32_t y, std::uint32_t x, std::uint32_t c) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }

  void validate() const {
    detail::require(height > 0 && width > 0 && channels > 0, ErrorCode::kInvalidArgument,
                    "image dimensions must be positive");
    detail::require(pixels.size() == static_cast<std::size_t>(height) * width * channels,
                    ErrorCode::kInvalidArgument, "pixel count does not match image header");
    for (float v : pixels) {
      detail::require(std::isfinite(v), ErrorCode::kInvalidArgument, "non-finite pixel value");
    }
  }

  friend bool operator==(const ToyImage&, const ToyImage&) = default;
};

inline ToyImage make_image(std::uint32_t height, std::uint32_t width, std::uint32_t channels, float fill = 0.0f) {
  return {height, width, channels, std::vector<float>(static_cast<std::size_t>(height) * width * channels, fill)};
}

inline constexpr char kImageMagic[4] = {'E', 'G', 'O', 'I'};

// EGOI: magic, u32 H, W, C, then H*W*C f32, all little-endian.
inline std::vector<std::uint8_t> encode_image_file(const ToyImage& image) {
  image.validate();
  detail::ByteWriter w;
  w.raw(std::string_view(kImageMagic, 4));
  w.u32(image.height);
  w.u32(image.width);
  w.u32(image.channels);
  w.f32s(image.pixels);
  return std::move(w.bytes());
}

inline ToyImage decode_image_file(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes);
  if (r.str(4) != std::string_view(kImageMagic, 4)) throw Error(ErrorCode::kBadMagic, "not an EGOI image");
  ToyImage img;
  img.height = r.u32();
  img.width = r.u32();
  img.channels = r.u32();
  const std::uint64_t count = static_cast<std::uint64_t>(img.height) * img.width * img.channels;
  img.pixels = r.f32s(static_cast<std::size_t>(count));
  if (r.remaining() != 0) throw Error(ErrorCode::kInvalidArgument, "trailing bytes after EGOI payload");
  img.validate();
  return img;
}

inline void save_image(const ToyImage& image, const std::filesystem::path& path) {
  detail::write_file_bytes(path, encode_image_file(image));
}

inline ToyImage load_image(const std::filesystem::path& path) {
  return decode_image_file(detail::read_file_bytes(path));
}

}  // namespace ego
