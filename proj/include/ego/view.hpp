// Copyright 2026 The ego Authors
// SPDX-License-Identifier: Apache-2.0

// Reference-view analysis shared by enrollment and calibration: encode a view,
// ask the model about it, and slice keyword-to-visual attention out of the
// generation.

#pragma once

#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include "ego/attention.hpp"
#include "ego/backend.hpp"
#include "ego/memory.hpp"
#include "ego/templates.hpp"
#include "ego/tensor_io.hpp"
#include "ego/toy_image.hpp"

namespace ego {

// An image for the backend to encode, or visual tokens encoded elsewhere.
using Media = std::variant<ToyImage, TokenMatrix>;

inline TokenMatrix encode_media(const Backend& backend, const Media& media) {
  if (const auto* img = std::get_if<ToyImage>(&media)) return backend.encode_image(*img);
  const auto& tokens = std::get<TokenMatrix>(media);
  detail::require(tokens.dim() == backend.config().dim, ErrorCode::kBackendMismatch,
                  "pre-encoded tokens have the wrong embedding dim");
  return tokens;
}

// ".json" paths are tensor manifests; anything else is an EGOI image.
inline Media load_media(const std::filesystem::path& path) {
  if (path.extension() == ".json") return load_token_tensor(path);
  return load_image(path);
}

inline constexpr std::size_t kSizeReplyTokens = 8;
inline constexpr std::size_t kKeywordReplyTokens = 48;

// Asks for the subject's share of the image area.
inline SizeEstimate query_subject_size(const Backend& backend, const TokenMatrix& visual,
                                       const PromptTemplateSet& templates) {
  GenerationRequest req;
  req.context.push_back(ContextSegment::visual(visual));
  req.instruction = templates.size_estimation;
  req.max_new_tokens = kSizeReplyTokens;
  return parse_size_reply(backend.generate(req).text());
}

struct KeywordCapture {
  GenerationTrace trace;
  KeywordSpan keywords;
  PositionRange visual;
  AttentionStack stack;
  // Attempts used, 1 or 2.
  int attempts = 1;
};

// Runs the keyword prompt over one view with attention captured on `layers`
// and returns the keyword-to-visual stack. An empty keyword reply is retried
// once with the same prompt; the second failure propagates kEmptyKeywords.
inline KeywordCapture capture_keyword_attention(const Backend& backend, const TokenMatrix& visual,
                                                const PromptTemplateSet& templates, std::span<const int> layers) {
  detail::require(!layers.empty(), ErrorCode::kInvalidArgument, "no layers to capture");
  GenerationRequest req;
  req.context.push_back(ContextSegment::visual(visual));
  req.instruction = templates.keyword_generation;
  req.capture_layers.assign(layers.begin(), layers.end());
  req.max_new_tokens = kKeywordReplyTokens;

  KeywordCapture out;
  for (int attempt = 1;; ++attempt) {
    out.trace = backend.generate(req);
    try {
      out.keywords = filter_keyword_tokens(out.trace.tokens);
      out.attempts = attempt;
      break;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kEmptyKeywords || attempt == 2) throw;
    }
  }
  out.visual = out.trace.segments.front();
  out.stack = extract_cross_attention(out.trace.attention, out.keywords, out.visual);
  return out;
}

}  // namespace ego
