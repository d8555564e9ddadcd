// Copyright 2026 The ego Authors
// SPDX-License-Identifier: Apache-2.0

// Tensor exchange files: a JSON manifest
//
//   {"version": 1, "tensors": [{"name": "tokens", "dtype": "f32",
//                               "shape": [64, 16], "file": "tokens.f32"}]}
//
// plus one headerless file per tensor of little-endian f32, row-major. Paths
// are relative to the manifest. Used for pre-encoded media and by adapters.

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ego/detail/binary_io.hpp"
#include "ego/error.hpp"
#include "ego/matrix.hpp"

namespace ego {

inline constexpr int kTensorManifestVersion = 1;

struct Tensor {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<float> values;

  std::size_t element_count() const {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

inline Tensor tensor_from_tokens(std::string name, const TokenMatrix& m) {
  return {std::move(name), {m.rows(), m.dim()}, std::vector<float>(m.values().begin(), m.values().end())};
}

inline TokenMatrix tokens_from_tensor(const Tensor& t) {
  detail::require(t.shape.size() == 2, ErrorCode::kInvalidArgument, "tensor '" + t.name + "' is not 2-D");
  return TokenMatrix(t.shape[0], t.shape[1], t.values);
}

inline std::vector<std::uint8_t> encode_f32_le(std::span<const float> values) {
  detail::ByteWriter w;
  w.f32s(values);
  return std::move(w.bytes());
}

inline std::vector<float> decode_f32_le(std::span<const std::uint8_t> bytes) {
  detail::require(bytes.size() % 4 == 0, ErrorCode::kTruncated, "f32 payload size is not a multiple of 4");
  detail::ByteReader r(bytes);
  return r.f32s(bytes.size() / 4);
}

// Writes `manifest` and one "<name>.f32" file per tensor next to it.
inline void write_tensor_set(const std::filesystem::path& manifest, const std::vector<Tensor>& tensors) {
  nlohmann::json entries = nlohmann::json::array();
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto& t = tensors[i];
    detail::require(!t.name.empty(), ErrorCode::kInvalidArgument, "tensor name must not be empty");
    for (std::size_t j = 0; j < i; ++j) {
      detail::require(tensors[j].name != t.name, ErrorCode::kInvalidArgument, "duplicate tensor name " + t.name);
    }
    detail::require(t.values.size() == t.element_count(), ErrorCode::kInvalidArgument,
                    "tensor '" + t.name + "' shape does not match its values");
    const std::string file = manifest.stem().string() + "." + t.name + ".f32";
    detail::write_file_bytes(manifest.parent_path() / file, encode_f32_le(t.values));
    entries.push_back({{"name", t.name}, {"dtype", "f32"}, {"shape", t.shape}, {"file", file}});
  }
  detail::write_file_text(manifest, nlohmann::json{{"version", kTensorManifestVersion}, {"tensors", entries}}.dump(2));
}

inline std::vector<Tensor> read_tensor_set(const std::filesystem::path& manifest) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(detail::read_file_text(manifest));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument, "bad tensor manifest " + manifest.string() + ": " + e.what());
  }
  std::vector<Tensor> out;
  try {
    for (const auto& e : j.at("tensors")) {
      Tensor t;
      t.name = e.at("name").get<std::string>();
      detail::require(e.value("dtype", std::string("f32")) == "f32", ErrorCode::kInvalidArgument,
                      "tensor '" + t.name + "' has unsupported dtype");
      for (const auto& prev : out) {
        detail::require(prev.name != t.name, ErrorCode::kInvalidArgument, "duplicate tensor name " + t.name);
      }
      t.shape = e.at("shape").get<std::vector<std::size_t>>();
      const auto bytes = detail::read_file_bytes(manifest.parent_path() / e.at("file").get<std::string>());
      if (bytes.size() != t.element_count() * 4) {
        throw Error(ErrorCode::kTruncated, "tensor '" + t.name + "' file size does not match its shape");
      }
      t.values = decode_f32_le(bytes);
      out.push_back(std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument, "bad tensor manifest " + manifest.string() + ": " + e.what());
  }
  return out;
}

// Visual tokens stored as a tensor set; takes the tensor named "tokens", or
// the only tensor when there is just one.
inline TokenMatrix load_token_tensor(const std::filesystem::path& manifest) {
  const auto set = read_tensor_set(manifest);
  for (const auto& t : set) {
    if (t.name == "tokens") return tokens_from_tensor(t);
  }
  detail::require(set.size() == 1, ErrorCode::kInvalidArgument,
                  "tensor manifest " + manifest.string() + " has no 'tokens' tensor");
  return tokens_from_tensor(set.front());
}

}  // namespace ego
