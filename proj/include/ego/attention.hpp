// Copyright 2026 The ego Authors
// SPDX-License-Identifier: Apache-2.0

// Numerical kernels for attention-guided token selection: scaled dot-product
// attention, cross-modal attention slicing, per-token importance scores and
// order-preserving top-k selection. Everything here is a pure function.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ego/detail/punct_table.hpp"
#include "ego/error.hpp"
#include "ego/matrix.hpp"

namespace ego {

// ---------------------------------------------------------------------------
// Softmax attention
// ---------------------------------------------------------------------------

// Row-wise softmax of `logits`. With `causal`, row i sees columns
// j <= i + (cols - rows), so a square matrix is ordinary causal
// self-attention and a single trailing query row sees every key.
// Masked entries are exactly 0.
inline AttentionMatrix masked_softmax(const DenseMatrix<double>& logits, bool causal) {
  const std::size_t rows = logits.rows();
  const std::size_t cols = logits.cols();
  if (causal) {
    detail::require(cols >= rows, ErrorCode::kContractViolation,
                    "causal attention needs at least as many keys as queries");
  }
  const std::size_t offset = causal ? cols - rows : 0;
  AttentionMatrix out(rows, cols, 0.0f);
  for (std::size_t i = 0; i < rows; ++i) {
    const std::size_t visible = causal ? std::min(cols, i + offset + 1) : cols;
    auto in = logits.row(i);
    double peak = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < visible; ++j) peak = std::max(peak, in[j]);
    double total = 0.0;
    std::vector<double> expd(visible);
    for (std::size_t j = 0; j < visible; ++j) {
      expd[j] = std::exp(in[j] - peak);
      total += expd[j];
    }
    auto dst = out.row(i);
    for (std::size_t j = 0; j < visible; ++j) dst[j] = static_cast<float>(expd[j] / total);
  }
  return out;
}

// softmax(Q K^T / sqrt(d_k)), accumulated in double.
inline AttentionMatrix scaled_dot_attention(const TokenMatrix& queries, const TokenMatrix& keys,
                                            std::size_t d_k, bool causal) {
  detail::require(queries.dim() == keys.dim(), ErrorCode::kContractViolation,
                  "query and key dimensions differ");
  detail::require(d_k > 0, ErrorCode::kInvalidArgument, "d_k must be positive");
  const double scale = 1.0 / std::sqrt(static_cast<double>(d_k));
  DenseMatrix<double> logits(queries.rows(), keys.rows());
  for (std::size_t i = 0; i < queries.rows(); ++i) {
    auto q = queries.row(i);
    for (std::size_t j = 0; j < keys.rows(); ++j) {
      auto k = keys.row(j);
      double dot = 0.0;
      for (std::size_t d = 0; d < q.size(); ++d) dot += static_cast<double>(q[d]) * k[d];
      logits(i, j) = dot * scale;
    }
  }
  return masked_softmax(logits, causal);
}

// ---------------------------------------------------------------------------
// Keyword filtering
// ---------------------------------------------------------------------------

// One generated token: its absolute position in the sequence and decoded text.
struct DecodedToken {
  std::size_t position = 0;
  std::string text;

  friend bool operator==(const DecodedToken&, const DecodedToken&) = default;
};

// Positions (strictly increasing) of the keyword tokens of a generation, with
// the decoded text of each.
struct KeywordSpan {
  std::vector<std::size_t> token_positions;
  std::vector<std::string> decoded_words;

  std::size_t size() const noexcept { return token_positions.size(); }
  bool empty() const noexcept { return token_positions.empty(); }
};

namespace detail {

inline bool in_punctuation_table(std::uint32_t cp) {
  auto it = std::upper_bound(kPunctuationRanges.begin(), kPunctuationRanges.end(), cp,
                             [](std::uint32_t v, const CodePointRange& r) { return v < r.first; });
  if (it == kPunctuationRanges.begin()) return false;
  --it;
  return cp >= it->first && cp <= it->last;
}

inline bool is_ascii_punct(std::uint32_t cp) {
  return (cp >= 0x21 && cp <= 0x2F) || (cp >= 0x3A && cp <= 0x40) || (cp >= 0x5B && cp <= 0x60) ||
         (cp >= 0x7B && cp <= 0x7E);
}

inline bool is_space_code_point(std::uint32_t cp) {
  switch (cp) {
    case 0x09: case 0x0A: case 0x0B: case 0x0C: case 0x0D: case 0x20:
    case 0x85: case 0xA0: case 0x1680: case 0x2028: case 0x2029:
    case 0x202F: case 0x205F: case 0x3000:
      return true;
    default:
      return cp >= 0x2000 && cp <= 0x200A;
  }
}

// Decodes UTF-8; every byte of a malformed sequence comes out as 0xFFFFFFFF.
inline std::vector<std::uint32_t> decode_utf8(std::string_view text) {
  constexpr std::uint32_t kInvalid = 0xFFFFFFFFu;
  std::vector<std::uint32_t> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const auto b0 = static_cast<unsigned char>(text[i]);
    std::size_t len = 0;
    std::uint32_t cp = 0;
    if (b0 < 0x80) {
      len = 1;
      cp = b0;
    } else if ((b0 & 0xE0) == 0xC0) {
      len = 2;
      cp = b0 & 0x1F;
    } else if ((b0 & 0xF0) == 0xE0) {
      len = 3;
      cp = b0 & 0x0F;
    } else if ((b0 & 0xF8) == 0xF0) {
      len = 4;
      cp = b0 & 0x07;
    }
    bool ok = len > 0 && i + len <= text.size();
    for (std::size_t k = 1; ok && k < len; ++k) {
      const auto b = static_cast<unsigned char>(text[i + k]);
      if ((b & 0xC0) != 0x80) ok = false;
      cp = (cp << 6) | (b & 0x3F);
    }
    if (!ok) {
      out.push_back(kInvalid);
      ++i;
      continue;
    }
    out.push_back(cp);
    i += len;
  }
  return out;
}

}  // namespace detail

// True when the token text, with whitespace stripped, is empty or made only of
// ASCII punctuation and Unicode general-category P code points.
inline bool is_punctuation_token(std::string_view text) {
  for (std::uint32_t cp : detail::decode_utf8(text)) {
    if (detail::is_space_code_point(cp)) continue;
    if (detail::is_ascii_punct(cp) || detail::in_punctuation_table(cp)) continue;
    return false;
  }
  return true;
}

// Keeps every generated token that carries text other than punctuation.
// Throws kEmptyKeywords when nothing survives.
inline KeywordSpan filter_keyword_tokens(std::span<const DecodedToken> generated) {
  KeywordSpan span;
  for (const auto& tok : generated) {
    if (is_punctuation_token(tok.text)) continue;
    if (!span.token_positions.empty()) {
      detail::require(tok.position > span.token_positions.back(), ErrorCode::kContractViolation,
                      "generated token positions must be strictly increasing");
    }
    span.token_positions.push_back(tok.position);
    span.decoded_words.push_back(tok.text);
  }
  detail::require(!span.empty(), ErrorCode::kEmptyKeywords,
                  "generation contains no keyword tokens after punctuation filtering");
  return span;
}

// ---------------------------------------------------------------------------
// Captured attention and cross-modal slices
// ---------------------------------------------------------------------------

// Attention rows recorded during generation for one layer: rows[head][step]
// is the attention of the step's token over the full context at that step.
struct CapturedLayer {
  int layer = 0;
  std::vector<std::vector<std::vector<float>>> rows;

  friend bool operator==(const CapturedLayer&, const CapturedLayer&) = default;
};

struct CapturedAttention {
  std::size_t heads = 0;
  // Absolute sequence position of each captured step.
  std::vector<std::size_t> step_positions;
  // Sorted by layer index.
  std::vector<CapturedLayer> layers;

  bool empty() const noexcept { return layers.empty(); }

  friend bool operator==(const CapturedAttention&, const CapturedAttention&) = default;
};

// Half-open interval [begin, end) of context positions.
struct PositionRange {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const noexcept { return end - begin; }

  friend bool operator==(const PositionRange&, const PositionRange&) = default;
};

// Keyword-to-visual attention for a set of layers and heads:
// (layer, head) -> N_w x N_r matrix, stored contiguously.
class AttentionStack {
 public:
  AttentionStack() = default;
  AttentionStack(std::vector<int> layers, std::size_t heads, std::size_t keywords, std::size_t visual)
      : layers_(std::move(layers)),
        heads_(heads),
        keywords_(keywords),
        visual_(visual),
        data_(layers_.size() * heads * keywords * visual, 0.0f) {}

  const std::vector<int>& layers() const noexcept { return layers_; }
  std::size_t layer_count() const noexcept { return layers_.size(); }
  std::size_t heads() const noexcept { return heads_; }
  std::size_t keyword_count() const noexcept { return keywords_; }
  std::size_t visual_count() const noexcept { return visual_; }
  bool empty() const noexcept { return layers_.empty() || heads_ == 0 || keywords_ == 0; }

  float& at(std::size_t layer_slot, std::size_t head, std::size_t n, std::size_t j) {
    return data_[offset(layer_slot, head) + n * visual_ + j];
  }
  float at(std::size_t layer_slot, std::size_t head, std::size_t n, std::size_t j) const {
    return data_[offset(layer_slot, head) + n * visual_ + j];
  }

  std::span<float> row(std::size_t layer_slot, std::size_t head, std::size_t n) {
    return {data_.data() + offset(layer_slot, head) + n * visual_, visual_};
  }
  std::span<const float> row(std::size_t layer_slot, std::size_t head, std::size_t n) const {
    return {data_.data() + offset(layer_slot, head) + n * visual_, visual_};
  }

  // Sub-stack restricted to the given layer indices (in the given order).
  AttentionStack select_layers(std::span<const int> wanted) const {
    AttentionStack out(std::vector<int>(wanted.begin(), wanted.end()), heads_, keywords_, visual_);
    for (std::size_t s = 0; s < wanted.size(); ++s) {
      auto it = std::find(layers_.begin(), layers_.end(), wanted[s]);
      detail::require(it != layers_.end(), ErrorCode::kMissingCapture,
                      "layer " + std::to_string(wanted[s]) + " not present in attention stack");
      const auto src = static_cast<std::size_t>(it - layers_.begin());
      for (std::size_t h = 0; h < heads_; ++h) {
        std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(offset(src, h)), keywords_ * visual_,
                    out.data_.begin() + static_cast<std::ptrdiff_t>(out.offset(s, h)));
      }
    }
    return out;
  }

  // Checks non-negativity and row sums <= 1 + 1e-4.
  void validate() const {
    for (std::size_t s = 0; s < layers_.size(); ++s) {
      for (std::size_t h = 0; h < heads_; ++h) {
        for (std::size_t n = 0; n < keywords_; ++n) {
          double sum = 0.0;
          for (float v : row(s, h, n)) {
            detail::require(std::isfinite(v) && v >= 0.0f, ErrorCode::kInvalidArgument,
                            "attention entries must be finite and non-negative");
            sum += v;
          }
          detail::require(sum <= 1.0 + 1e-4, ErrorCode::kInvalidArgument,
                          "attention row sums to more than 1");
        }
      }
    }
  }

 private:
  std::size_t offset(std::size_t layer_slot, std::size_t head) const {
    return (layer_slot * heads_ + head) * keywords_ * visual_;
  }

  std::vector<int> layers_;
  std::size_t heads_ = 0;
  std::size_t keywords_ = 0;
  std::size_t visual_ = 0;
  std::vector<float> data_;
};

// Slices keyword rows over the visual columns out of captured attention, for
// every captured layer. Row n of each matrix belongs to
// keywords.token_positions[n]. The slice is copied raw: no renormalization.
inline AttentionStack extract_cross_attention(const CapturedAttention& captured, const KeywordSpan& keywords,
                                              PositionRange visual) {
  detail::require(!keywords.empty(), ErrorCode::kMissingCapture, "empty keyword span");
  detail::require(!captured.empty(), ErrorCode::kMissingCapture, "no attention was captured");
  detail::require(visual.end > visual.begin, ErrorCode::kInvalidArgument, "empty visual range");

  std::vector<std::size_t> steps;
  steps.reserve(keywords.size());
  for (std::size_t pos : keywords.token_positions) {
    auto it = std::find(captured.step_positions.begin(), captured.step_positions.end(), pos);
    detail::require(it != captured.step_positions.end(), ErrorCode::kMissingCapture,
                    "no captured attention row for keyword position " + std::to_string(pos));
    steps.push_back(static_cast<std::size_t>(it - captured.step_positions.begin()));
  }

  std::vector<int> layer_ids;
  for (const auto& cl : captured.layers) layer_ids.push_back(cl.layer);
  AttentionStack stack(layer_ids, captured.heads, keywords.size(), visual.size());
  for (std::size_t s = 0; s < captured.layers.size(); ++s) {
    const auto& cl = captured.layers[s];
    detail::require(cl.rows.size() == captured.heads, ErrorCode::kContractViolation,
                    "captured layer has wrong head count");
    for (std::size_t h = 0; h < captured.heads; ++h) {
      for (std::size_t n = 0; n < steps.size(); ++n) {
        detail::require(steps[n] < cl.rows[h].size(), ErrorCode::kMissingCapture,
                        "captured layer is missing a step row");
        const auto& src = cl.rows[h][steps[n]];
        detail::require(visual.end <= src.size(), ErrorCode::kContractViolation,
                        "visual range exceeds captured row length");
        std::copy(src.begin() + static_cast<std::ptrdiff_t>(visual.begin),
                  src.begin() + static_cast<std::ptrdiff_t>(visual.end), stack.row(s, h, n).begin());
      }
    }
  }
  return stack;
}

// ---------------------------------------------------------------------------
// Importance and selection
// ---------------------------------------------------------------------------

// Per-visual-token importance; finite and non-negative.
class ImportanceVector {
 public:
  ImportanceVector() = default;
  explicit ImportanceVector(std::vector<float> scores) : scores_(std::move(scores)) {
    for (float v : scores_) {
      detail::require(std::isfinite(v) && v >= 0.0f, ErrorCode::kInvalidArgument,
                      "importance scores must be finite and non-negative");
    }
  }

  std::size_t size() const noexcept { return scores_.size(); }
  float operator[](std::size_t i) const { return scores_[i]; }
  std::span<const float> values() const noexcept { return scores_; }

  friend bool operator==(const ImportanceVector&, const ImportanceVector&) = default;

 private:
  std::vector<float> scores_;
};

// How layer and head contributions are combined. Keyword rows are always
// averaged. kMean is the default and the tested path.
enum class LayerHeadReduction { kMean, kMax };

// I_j = mean over layers, heads and keyword rows of A[l, h][n, j].
inline ImportanceVector importance_scores(const AttentionStack& stack,
                                          LayerHeadReduction reduction = LayerHeadReduction::kMean) {
  detail::require(!stack.empty(), ErrorCode::kInvalidArgument,
                  "importance needs at least one layer, head and keyword row");
  const std::size_t n_r = stack.visual_count();
  const std::size_t n_w = stack.keyword_count();
  std::vector<double> acc(n_r, reduction == LayerHeadReduction::kMean ? 0.0 : -1.0);
  std::vector<double> keyword_mean(n_r);
  for (std::size_t s = 0; s < stack.layer_count(); ++s) {
    for (std::size_t h = 0; h < stack.heads(); ++h) {
      std::fill(keyword_mean.begin(), keyword_mean.end(), 0.0);
      for (std::size_t n = 0; n < n_w; ++n) {
        auto r = stack.row(s, h, n);
        for (std::size_t j = 0; j < n_r; ++j) keyword_mean[j] += r[j];
      }
      for (std::size_t j = 0; j < n_r; ++j) {
        const double m = keyword_mean[j] / static_cast<double>(n_w);
        if (reduction == LayerHeadReduction::kMean) {
          acc[j] += m;
        } else {
          acc[j] = std::max(acc[j], m);
        }
      }
    }
  }
  std::vector<float> out(n_r);
  const double denom =
      reduction == LayerHeadReduction::kMean ? static_cast<double>(stack.layer_count() * stack.heads()) : 1.0;
  for (std::size_t j = 0; j < n_r; ++j) out[j] = static_cast<float>(acc[j] / denom);
  return ImportanceVector(std::move(out));
}

// Indices of the k largest scores (ties: lower index first), returned in
// ascending index order. k >= size keeps everything.
template <typename T>
std::vector<std::size_t> top_k_ascending(std::span<const T> scores, std::size_t k) {
  detail::require(k >= 1, ErrorCode::kInvalidArgument, "k must be >= 1");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t keep = std::min(k, scores.size());
  auto by_score = [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  };
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(), by_score);
  order.resize(keep);
  std::sort(order.begin(), order.end());
  return order;
}

struct SelectionResult {
  std::vector<std::size_t> indices;
  TokenMatrix tokens;
};

// Keeps the min(k, N_r) most important rows of `source` in their original order.
inline SelectionResult select_top_tokens(const TokenMatrix& source, const ImportanceVector& importance,
                                         std::size_t k) {
  detail::require(importance.size() == source.rows(), ErrorCode::kContractViolation,
                  "importance length does not match token rows");
  SelectionResult out;
  out.indices = top_k_ascending(importance.values(), k);
  out.tokens = source.gather(out.indices);
  return out;
}

// Evenly spaced indices floor(i * n / k), i < min(k, n). Baseline selector that
// ignores attention.
inline std::vector<std::size_t> uniform_indices(std::size_t n, std::size_t k) {
  detail::require(k >= 1, ErrorCode::kInvalidArgument, "k must be >= 1");
  const std::size_t keep = std::min(k, n);
  std::vector<std::size_t> out(keep);
  for (std::size_t i = 0; i < keep; ++i) out[i] = i * n / keep;
  return out;
}

}  // namespace ego
