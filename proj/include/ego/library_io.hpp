// Copyright 2026 The ego Authors
// SPDX-License-Identifier: Apache-2.0

// Concept library file (EGOC), all integers little-endian:
//
//   "EGOC"  u32 version (major << 16 | minor)  u32 concept count
//   per concept:
//     u32 name length, UTF-8 name
//     u32 dim, u32 rows, rows * dim f32 (row-major)
//     u32 metadata length, UTF-8 JSON metadata (provenance, fingerprint)
//   u32 CRC-32 of every preceding byte
//
// Readers accept any minor version of a known major and ignore metadata
// fields they do not know.

#pragma once

#include <zlib.h>

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ego/backend.hpp"
#include "ego/detail/binary_io.hpp"
#include "ego/memory.hpp"

#if defined(__unix__) || defined(__APPLE__)
#include <fcntl.h>
#include <unistd.h>
#endif

namespace ego {

inline constexpr char kLibraryMagic[4] = {'E', 'G', 'O', 'C'};

inline std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks.
  std::size_t off = 0;
  while (off < bytes.size()) {
    const auto n = static_cast<uInt>(std::min<std::size_t>(bytes.size() - off, 1u << 30));
    crc = ::crc32(crc, bytes.data() + off, n);
    off += n;
  }
  return static_cast<std::uint32_t>(crc);
}

namespace detail {

inline nlohmann::json provenance_to_json(const ConceptMemory& c) {
  nlohmann::json views = nlohmann::json::array();
  for (const auto& v : c.views) {
    views.push_back({{"view_id", v.view_id},
                     {"k_c", v.k_c},
                     {"alpha", v.alpha},
                     {"indices", v.indices},
                     {"keywords", v.keywords}});
  }
  return {{"backend_fingerprint", fingerprint_hex(c.backend_fingerprint)}, {"views", views}};
}

inline void provenance_from_json(const nlohmann::json& j, ConceptMemory& c) {
  c.backend_fingerprint = std::stoull(j.at("backend_fingerprint").get<std::string>(), nullptr, 16);
  for (const auto& v : j.at("views")) {
    ViewProvenance p;
    p.view_id = v.at("view_id").get<std::string>();
    p.k_c = v.at("k_c").get<std::size_t>();
    p.alpha = v.at("alpha").get<double>();
    p.indices = v.at("indices").get<std::vector<std::size_t>>();
    p.keywords = v.at("keywords").get<std::vector<std::string>>();
    c.views.push_back(std::move(p));
  }
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_library(const ConceptLibrary& library) {
  detail::ByteWriter w;
  w.raw(std::string_view(kLibraryMagic, 4));
  w.u32(kLibraryFormatVersion);
  w.u32(static_cast<std::uint32_t>(library.size()));
  for (const auto& c : library.concepts()) {
    w.u32(static_cast<std::uint32_t>(c.name.size()));
    w.raw(c.name);
    w.u32(static_cast<std::uint32_t>(c.tokens.dim()));
    w.u32(static_cast<std::uint32_t>(c.tokens.rows()));
    w.f32s(c.tokens.values());
    const std::string meta = detail::provenance_to_json(c).dump();
    w.u32(static_cast<std::uint32_t>(meta.size()));
    w.raw(meta);
  }
  const std::uint32_t crc = crc32_of(w.bytes());
  w.u32(crc);
  return std::move(w.bytes());
}

// Throws kBadMagic, kUnsupportedVersion, kTruncated or kChecksumMismatch.
// Nothing is returned unless the whole file checks out.
inline ConceptLibrary decode_library(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes);
  if (bytes.size() < 4 || r.str(4) != std::string_view(kLibraryMagic, 4)) {
    throw Error(ErrorCode::kBadMagic, "not a concept library file");
  }
  const std::uint32_t version = r.u32();
  if ((version >> 16) != kLibraryFormatMajor) {
    throw Error(ErrorCode::kUnsupportedVersion,
                "library format major version " + std::to_string(version >> 16) + " is not supported");
  }
  const std::uint32_t count = r.u32();

  struct Raw {
    std::string name;
    std::uint32_t dim;
    std::uint32_t rows;
    std::vector<float> values;
    std::string meta;
  };
  std::vector<Raw> raws;
  for (std::uint32_t i = 0; i < count; ++i) {
    Raw raw;
    raw.name = r.str(r.u32());
    raw.dim = r.u32();
    raw.rows = r.u32();
    raw.values = r.f32s(static_cast<std::size_t>(raw.dim) * raw.rows);
    raw.meta = r.str(r.u32());
    raws.push_back(std::move(raw));
  }
  const std::size_t payload_size = r.position();
  const std::uint32_t stored_crc = r.u32();
  if (r.remaining() != 0) throw Error(ErrorCode::kChecksumMismatch, "trailing bytes after checksum");
  if (crc32_of(bytes.first(payload_size)) != stored_crc) {
    throw Error(ErrorCode::kChecksumMismatch, "library checksum does not match");
  }

  ConceptLibrary lib;
  lib.set_format_version(version);
  for (auto& raw : raws) {
    ConceptMemory c;
    c.name = std::move(raw.name);
    c.tokens = TokenMatrix(raw.rows, raw.dim, std::move(raw.values));
    try {
      detail::provenance_from_json(nlohmann::json::parse(raw.meta), c);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kChecksumMismatch, std::string("malformed concept metadata: ") + e.what());
    }
    lib.add(std::move(c));
  }
  return lib;
}

// Test seam: runs after the temporary file is complete and before it
// replaces the destination.
struct SaveHooks {
  std::function<void(const std::filesystem::path& temp)> before_commit;
};

// Writes to a temporary sibling, syncs it, then renames over `path`, so an
// interrupted save leaves any previous library untouched.
inline void save_library(const ConceptLibrary& library, const std::filesystem::path& path,
                         const SaveHooks& hooks = {}) {
  static std::atomic<unsigned> counter{0};
  const auto bytes = encode_library(library);
  auto temp = path;
  temp += ".tmp-" + std::to_string(
#if defined(__unix__) || defined(__APPLE__)
                        ::getpid()
#else
                        0
#endif
                        ) +
          "-" + std::to_string(counter++);
#if defined(__unix__) || defined(__APPLE__)
  const int fd = ::open(temp.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
  if (fd < 0) throw Error(ErrorCode::kIo, "cannot create " + temp.string());
  std::size_t written = 0;
  while (written < bytes.size()) {
    const auto n = ::write(fd, bytes.data() + written, bytes.size() - written);
    if (n <= 0) {
      ::close(fd);
      std::filesystem::remove(temp);
      throw Error(ErrorCode::kIo, "write failed for " + temp.string());
    }
    written += static_cast<std::size_t>(n);
  }
  ::fsync(fd);
  ::close(fd);
#else
  detail::write_file_bytes(temp, bytes);
#endif
  if (hooks.before_commit) hooks.before_commit(temp);
  std::error_code ec;
  std::filesystem::rename(temp, path, ec);
  if (ec) {
    std::filesystem::remove(temp);
    throw Error(ErrorCode::kIo, "cannot replace " + path.string() + ": " + ec.message());
  }
}

inline ConceptLibrary load_library(const std::filesystem::path& path) {
  return decode_library(detail::read_file_bytes(path));
}

}  // namespace ego
