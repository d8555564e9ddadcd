// Copyright 2026 The ego Authors
// SPDX-License-Identifier: Apache-2.0

// Deterministic toy multimodal transformer used for desk-scale verification.
//
// Weights come from one SplitMix64 stream seeded with BackendConfig::seed
// (gamma 0x9E3779B97F4A7C15, mix constants 0xBF58476D1CE4E5B9 and
// 0x94D049BB133111EB). Stream element n maps to a uniform value in [-1, 1)
// and is scaled by 1/sqrt(dim). Element order:
//
//   token embedding      vocab x dim
//   per layer l:         Wq, Wk, Wv, Wo (dim x dim), W1 (dim x 4dim), W2 (4dim x dim)
//   patch projection     element 2^40 + i * dim + d for patch input i, output d
//
// The output head is tied to the token embedding. Blocks are pre-norm
// (RMSNorm, no gain) with causal multi-head attention and a GELU MLP; there
// is no positional encoding. Tokenization is byte-level and greedy decoding
// picks from kToyAlphabet (lowest byte wins ties).

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

#include "ego/attention.hpp"
#include "ego/backend.hpp"

namespace ego {

inline constexpr std::uint64_t kSplitMixGamma = 0x9E3779B97F4A7C15ULL;

inline std::uint64_t splitmix64_mix(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Element n (0-based) of the SplitMix64 stream seeded with `seed`.
inline std::uint64_t splitmix64_at(std::uint64_t seed, std::uint64_t n) {
  return splitmix64_mix(seed + (n + 1) * kSplitMixGamma);
}

class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}
  std::uint64_t next() {
    state_ += kSplitMixGamma;
    return splitmix64_mix(state_);
  }
  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  // Uniform in [-1, 1).
  double symmetric() { return uniform() * 2.0 - 1.0; }
  // Standard normal (Box-Muller, one draw per call).
  double normal() {
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

 private:
  std::uint64_t state_;
};

inline double to_symmetric_unit(std::uint64_t bits) {
  return static_cast<double>(bits >> 11) * 0x1.0p-53 * 2.0 - 1.0;
}

inline constexpr std::string_view kToyAlphabet = "abcdefghijklmnopqrstuvwxyz0123456789 ,";
inline constexpr std::uint64_t kPatchProjectionBase = 1ULL << 40;

// Linear patch projector: patch (r, c) becomes token row r * cols + c.
class ToyEncoder {
 public:
  explicit ToyEncoder(BackendConfig config) : config_(std::move(config)) {}

  TokenMatrix encode(const ToyImage& image) const {
    image.validate();
    const auto& grid = config_.patch_grid;
    detail::require(image.height % grid.rows == 0 && image.width % grid.cols == 0, ErrorCode::kInvalidArgument,
                    "image dimensions are not divisible by the patch grid");
    const std::uint32_t ph = image.height / grid.rows;
    const std::uint32_t pw = image.width / grid.cols;
    const std::size_t dim = config_.dim;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dim));
    const std::size_t patch_len = static_cast<std::size_t>(ph) * pw * image.channels;

    std::vector<double> weights(patch_len * dim);
    for (std::size_t i = 0; i < patch_len; ++i) {
      for (std::size_t d = 0; d < dim; ++d) {
        weights[i * dim + d] =
            to_symmetric_unit(splitmix64_at(config_.seed, kPatchProjectionBase + i * dim + d)) * scale;
      }
    }

    std::vector<float> out(grid.count() * dim);
    std::vector<double> acc(dim);
    for (std::uint32_t r = 0; r < grid.rows; ++r) {
      for (std::uint32_t c = 0; c < grid.cols; ++c) {
        std::fill(acc.begin(), acc.end(), 0.0);
        std::size_t i = 0;
        for (std::uint32_t y = 0; y < ph; ++y) {
          for (std::uint32_t x = 0; x < pw; ++x) {
            for (std::uint32_t ch = 0; ch < image.channels; ++ch, ++i) {
              const double px = image.at(r * ph + y, c * pw + x, ch);
              for (std::size_t d = 0; d < dim; ++d) acc[d] += weights[i * dim + d] * px;
            }
          }
        }
        const std::size_t row = static_cast<std::size_t>(r) * grid.cols + c;
        for (std::size_t d = 0; d < dim; ++d) out[row * dim + d] = static_cast<float>(acc[d]);
      }
    }
    return TokenMatrix(grid.count(), dim, std::move(out));
  }

  const BackendConfig& config() const noexcept { return config_; }

 private:
  BackendConfig config_;
};

class ToyBackend final : public Backend {
 public:
  explicit ToyBackend(BackendConfig config = {}) : config_(std::move(config)), encoder_(config_) {
    config_.validate();
    SplitMix64 rng(config_.seed);
    const std::size_t dim = config_.dim;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dim));
    auto draw = [&](std::size_t n) {
      std::vector<float> w(n);
      for (auto& v : w) v = static_cast<float>(rng.symmetric() * scale);
      return w;
    };
    embedding_ = draw(static_cast<std::size_t>(config_.vocab_size) * dim);
    blocks_.resize(config_.layers);
    for (auto& b : blocks_) {
      b.wq = draw(dim * dim);
      b.wk = draw(dim * dim);
      b.wv = draw(dim * dim);
      b.wo = draw(dim * dim);
      b.w1 = draw(dim * 4 * dim);
      b.w2 = draw(4 * dim * dim);
    }
  }

  const BackendConfig& config() const override { return config_; }

  TokenMatrix encode_image(const ToyImage& image) const override { return encoder_.encode(image); }

  GenerationTrace generate(const GenerationRequest& request) const override {
    detail::require(request.deterministic, ErrorCode::kInvalidArgument,
                    "the toy backend only supports greedy decoding");
    for (int layer : request.capture_layers) {
      detail::require(layer >= 0 && static_cast<std::uint32_t>(layer) < config_.layers,
                      ErrorCode::kInvalidArgument, "capture layer out of range");
    }
    for (const auto& seg : request.context) {
      if (seg.kind() == SegmentKind::kVisual) {
        detail::require(seg.visual_payload().dim() == config_.dim, ErrorCode::kInvalidArgument,
                        "visual segment dim does not match the backend");
      }
    }

    GenerationTrace trace;
    trace.prompt_length =
        layout_context(*this, request.context, request.instruction, trace.segments, trace.instruction);
    check_context_budget(*this, trace.prompt_length, request.max_new_tokens);
    detail::require(trace.prompt_length > 0, ErrorCode::kInvalidArgument, "empty prompt");

    std::vector<int> capture = request.capture_layers;
    std::sort(capture.begin(), capture.end());
    capture.erase(std::unique(capture.begin(), capture.end()), capture.end());
    trace.attention.heads = config_.heads;
    for (int layer : capture) {
      CapturedLayer cl;
      cl.layer = layer;
      cl.rows.resize(config_.heads);
      trace.attention.layers.push_back(std::move(cl));
    }

    State state(config_);
    std::vector<float> x(config_.dim);
    std::vector<float> logits;
    auto feed_text = [&](std::string_view text) {
      for (unsigned char byte : text) {
        embed(byte, x);
        forward(state, x, nullptr, request.record_qk, 0);
      }
    };
    for (const auto& seg : request.context) {
      if (seg.kind() == SegmentKind::kText) {
        feed_text(seg.text_payload());
      } else {
        const auto& tokens = seg.visual_payload();
        for (std::size_t r = 0; r < tokens.rows(); ++r) {
          auto row = tokens.row(r);
          std::copy(row.begin(), row.end(), x.begin());
          forward(state, x, nullptr, false, 0);
        }
      }
    }
    feed_text(request.instruction);

    if (request.max_new_tokens == 0) return trace;
    unsigned char next = pick(state.last_hidden);
    for (std::size_t k = 0; k < request.max_new_tokens; ++k) {
      const std::size_t position = trace.prompt_length + k;
      trace.tokens.push_back({position, std::string(1, static_cast<char>(next))});
      trace.attention.step_positions.push_back(position);
      embed(next, x);
      forward(state, x, &trace, request.record_qk, k);
      if (k + 1 < request.max_new_tokens) next = pick(state.last_hidden);
    }
    return trace;
  }

 private:
  struct Block {
    std::vector<float> wq, wk, wv, wo, w1, w2;
  };

  struct State {
    explicit State(const BackendConfig& cfg)
        : keys(cfg.layers * cfg.heads, TokenMatrix(0, cfg.head_dim)),
          values(cfg.layers * cfg.heads, TokenMatrix(0, cfg.head_dim)),
          last_hidden(cfg.dim) {}
    std::vector<TokenMatrix> keys;
    std::vector<TokenMatrix> values;
    std::vector<float> last_hidden;
    std::size_t length = 0;
  };

  void embed(unsigned char byte, std::vector<float>& x) const {
    const std::size_t dim = config_.dim;
    const std::size_t id = byte % config_.vocab_size;
    std::copy_n(embedding_.begin() + static_cast<std::ptrdiff_t>(id * dim), dim, x.begin());
  }

  static std::vector<float> rms_norm(std::span<const float> x) {
    double ss = 0.0;
    for (float v : x) ss += static_cast<double>(v) * v;
    const double inv = 1.0 / std::sqrt(ss / static_cast<double>(x.size()) + 1e-6);
    std::vector<float> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = static_cast<float>(x[i] * inv);
    return out;
  }

  // out = in (1 x rows) * w (rows x cols)
  static std::vector<float> matvec(std::span<const float> in, const std::vector<float>& w, std::size_t cols) {
    std::vector<float> out(cols);
    for (std::size_t c = 0; c < cols; ++c) {
      double acc = 0.0;
      for (std::size_t r = 0; r < in.size(); ++r) acc += static_cast<double>(in[r]) * w[r * cols + c];
      out[c] = static_cast<float>(acc);
    }
    return out;
  }

  static float gelu(float v) {
    const double x = v;
    return static_cast<float>(0.5 * x * (1.0 + std::tanh(0.7978845608028654 * (x + 0.044715 * x * x * x))));
  }

  // Runs one position through every block. When `trace` is set, the
  // attention rows of captured layers are recorded as generation step `step`.
  void forward(State& state, std::vector<float> x, GenerationTrace* trace, bool record_qk, std::size_t step) const {
    const std::size_t dim = config_.dim;
    const std::size_t hd = config_.head_dim;
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
      const auto& b = blocks_[l];
      const auto h = rms_norm(x);
      const auto q = matvec(h, b.wq, dim);
      const auto k = matvec(h, b.wk, dim);
      const auto v = matvec(h, b.wv, dim);

      CapturedLayer* captured = nullptr;
      if (trace != nullptr) {
        for (auto& cl : trace->attention.layers) {
          if (cl.layer == static_cast<int>(l)) captured = &cl;
        }
      }

      std::vector<float> mixed(dim, 0.0f);
      for (std::size_t head = 0; head < config_.heads; ++head) {
        auto& kc = state.keys[l * config_.heads + head];
        auto& vc = state.values[l * config_.heads + head];
        kc.append(TokenMatrix(1, hd, std::vector<float>(k.begin() + head * hd, k.begin() + (head + 1) * hd)));
        vc.append(TokenMatrix(1, hd, std::vector<float>(v.begin() + head * hd, v.begin() + (head + 1) * hd)));
        TokenMatrix qh(1, hd, std::vector<float>(q.begin() + head * hd, q.begin() + (head + 1) * hd));
        const auto attn = scaled_dot_attention(qh, kc, hd, /*causal=*/true);
        auto weights = attn.row(0);
        for (std::size_t d = 0; d < hd; ++d) {
          double acc = 0.0;
          for (std::size_t j = 0; j < vc.rows(); ++j) acc += static_cast<double>(weights[j]) * vc(j, d);
          mixed[head * hd + d] = static_cast<float>(acc);
        }
        if (captured != nullptr) {
          captured->rows[head].emplace_back(weights.begin(), weights.end());
          if (record_qk) trace->probes.push_back({static_cast<int>(l), head, step, qh, kc});
        }
      }
      const auto o = matvec(mixed, b.wo, dim);
      for (std::size_t d = 0; d < dim; ++d) x[d] += o[d];
      const auto h2 = rms_norm(x);
      auto m = matvec(h2, b.w1, 4 * dim);
      for (auto& val : m) val = gelu(val);
      const auto o2 = matvec(m, b.w2, dim);
      for (std::size_t d = 0; d < dim; ++d) x[d] += o2[d];
    }
    state.last_hidden = rms_norm(x);
    ++state.length;
  }

  unsigned char pick(const std::vector<float>& hidden) const {
    const std::size_t dim = config_.dim;
    unsigned char best = static_cast<unsigned char>(kToyAlphabet.front());
    double best_score = -std::numeric_limits<double>::infinity();
    std::array<unsigned char, kToyAlphabet.size()> sorted{};
    std::copy(kToyAlphabet.begin(), kToyAlphabet.end(), sorted.begin());
    std::sort(sorted.begin(), sorted.end());
    for (unsigned char byte : sorted) {
      const std::size_t id = byte % config_.vocab_size;
      double logit = 0.0;
      for (std::size_t d = 0; d < dim; ++d) logit += static_cast<double>(hidden[d]) * embedding_[id * dim + d];
      if (logit > best_score) {
        best_score = logit;
        best = byte;
      }
    }
    return best;
  }

  BackendConfig config_;
  ToyEncoder encoder_;
  std::vector<float> embedding_;
  std::vector<Block> blocks_;
};

}  // namespace ego
