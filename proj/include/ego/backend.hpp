// Copyright 2026 The ego Authors
// SPDX-License-Identifier: Apache-2.0

// The contract every model runtime satisfies: encode an image into visual
// tokens, and generate text over an ordered context of text and visual
// segments while capturing per-layer attention rows.

#pragma once

#include <cstdint>
#include <cstdio>
#include <mutex>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "ego/attention.hpp"
#include "ego/error.hpp"
#include "ego/matrix.hpp"
#include "ego/toy_image.hpp"

namespace ego {

inline constexpr std::uint32_t kBackendContractVersion = 1;

struct PatchGrid {
  std::uint32_t rows = 8;
  std::uint32_t cols = 8;

  std::size_t count() const noexcept { return static_cast<std::size_t>(rows) * cols; }

  friend bool operator==(const PatchGrid&, const PatchGrid&) = default;
};

struct BackendConfig {
  std::string model = "toy";
  std::uint32_t layers = 4;
  std::uint32_t heads = 2;
  std::uint32_t dim = 16;
  std::uint32_t head_dim = 8;
  PatchGrid patch_grid;
  std::uint32_t vocab_size = 256;
  std::uint32_t max_context = 4096;
  std::uint64_t seed = 0;

  std::size_t visual_tokens() const noexcept { return patch_grid.count(); }

  void validate() const {
    detail::require(layers >= 1 && heads >= 1 && head_dim >= 1, ErrorCode::kInvalidArgument,
                    "layers, heads and head_dim must be positive");
    detail::require(dim == heads * head_dim, ErrorCode::kInvalidArgument, "dim must equal heads * head_dim");
    detail::require(patch_grid.rows >= 1 && patch_grid.cols >= 1, ErrorCode::kInvalidArgument,
                    "patch grid must be non-empty");
    detail::require(vocab_size >= 1, ErrorCode::kInvalidArgument, "vocab_size must be positive");
    detail::require(max_context >= visual_tokens() + 64, ErrorCode::kInvalidArgument,
                    "max_context must be at least N_r + 64");
  }

  // FNV-1a over the fields that define the embedding space. max_context is
  // excluded: it does not change what a token means.
  std::uint64_t fingerprint() const {
    const std::string canon = "model=" + model + ";layers=" + std::to_string(layers) +
                              ";heads=" + std::to_string(heads) + ";dim=" + std::to_string(dim) +
                              ";head_dim=" + std::to_string(head_dim) + ";grid=" + std::to_string(patch_grid.rows) +
                              "x" + std::to_string(patch_grid.cols) + ";vocab=" + std::to_string(vocab_size) +
                              ";seed=" + std::to_string(seed);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : canon) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    return h;
  }
};

inline std::string fingerprint_hex(std::uint64_t fp) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fp));
  return buf;
}

enum class SegmentKind { kText, kVisual };

inline std::string_view to_string(SegmentKind kind) { return kind == SegmentKind::kText ? "text" : "visual"; }

// One piece of model input: either text or a block of visual tokens.
class ContextSegment {
 public:
  static ContextSegment text(std::string s) { return ContextSegment(std::move(s)); }
  static ContextSegment visual(TokenMatrix tokens) { return ContextSegment(std::move(tokens)); }

  SegmentKind kind() const noexcept {
    return std::holds_alternative<std::string>(payload_) ? SegmentKind::kText : SegmentKind::kVisual;
  }
  const std::string& text_payload() const {
    detail::require(kind() == SegmentKind::kText, ErrorCode::kContractViolation, "segment is not text");
    return std::get<std::string>(payload_);
  }
  const TokenMatrix& visual_payload() const {
    detail::require(kind() == SegmentKind::kVisual, ErrorCode::kContractViolation, "segment is not visual");
    return std::get<TokenMatrix>(payload_);
  }

  friend bool operator==(const ContextSegment&, const ContextSegment&) = default;

 private:
  explicit ContextSegment(std::string s) : payload_(std::move(s)) {}
  explicit ContextSegment(TokenMatrix t) : payload_(std::move(t)) {}

  std::variant<std::string, TokenMatrix> payload_;
};

struct GenerationRequest {
  std::vector<ContextSegment> context;
  std::string instruction;
  std::vector<int> capture_layers;
  std::size_t max_new_tokens = 32;
  bool deterministic = true;
  // Toy backend only: also record the per-step query vector and key matrix.
  bool record_qk = false;
};

// Query vector and key matrix behind one captured attention row.
struct QkProbe {
  int layer = 0;
  std::size_t head = 0;
  std::size_t step = 0;
  TokenMatrix query;
  TokenMatrix keys;
};

struct GenerationTrace {
  std::vector<DecodedToken> tokens;
  // One range per context segment, in order, followed by the instruction.
  std::vector<PositionRange> segments;
  PositionRange instruction;
  std::size_t prompt_length = 0;
  CapturedAttention attention;
  std::vector<QkProbe> probes;

  std::string text() const {
    std::string s;
    for (const auto& t : tokens) s += t.text;
    return s;
  }
};

class Backend {
 public:
  virtual ~Backend() = default;

  virtual const BackendConfig& config() const = 0;
  virtual TokenMatrix encode_image(const ToyImage& image) const = 0;
  virtual GenerationTrace generate(const GenerationRequest& request) const = 0;

  // Token count of a text segment. The reference backends are byte-level.
  virtual std::size_t count_text_tokens(std::string_view text) const { return text.size(); }
  // Whether generate() may be called from several threads at once.
  virtual bool supports_concurrent_calls() const { return true; }

  std::uint64_t fingerprint() const { return config().fingerprint(); }
};

// Positions of each segment and of the instruction for a given backend's
// tokenization; returns the prompt length.
inline std::size_t layout_context(const Backend& backend, std::span<const ContextSegment> context,
                                  std::string_view instruction, std::vector<PositionRange>& segments,
                                  PositionRange& instruction_range) {
  segments.clear();
  std::size_t pos = 0;
  for (const auto& seg : context) {
    const std::size_t n = seg.kind() == SegmentKind::kText ? backend.count_text_tokens(seg.text_payload())
                                                           : seg.visual_payload().rows();
    segments.push_back({pos, pos + n});
    pos += n;
  }
  instruction_range = {pos, pos + backend.count_text_tokens(instruction)};
  return instruction_range.end;
}

// Prompt tokens plus the generation budget, checked against max_context.
inline void check_context_budget(const Backend& backend, std::size_t prompt_tokens, std::size_t max_new_tokens) {
  const std::size_t required = prompt_tokens + max_new_tokens;
  if (required > backend.config().max_context) throw ContextLimitError(required, backend.config().max_context);
}

// Serializes calls into a backend that cannot take concurrent requests.
class SerializedBackend final : public Backend {
 public:
  explicit SerializedBackend(const Backend& inner) : inner_(inner) {}

  const BackendConfig& config() const override { return inner_.config(); }
  TokenMatrix encode_image(const ToyImage& image) const override {
    std::lock_guard lock(mu_);
    return inner_.encode_image(image);
  }
  GenerationTrace generate(const GenerationRequest& request) const override {
    std::lock_guard lock(mu_);
    return inner_.generate(request);
  }
  std::size_t count_text_tokens(std::string_view text) const override { return inner_.count_text_tokens(text); }
  bool supports_concurrent_calls() const override { return true; }

 private:
  const Backend& inner_;
  mutable std::mutex mu_;
};

}  // namespace ego
