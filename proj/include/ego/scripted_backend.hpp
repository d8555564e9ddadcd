// Copyright 2026 The ego Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "ego/attention.hpp"
#include "ego/backend.hpp"
#include "ego/detail/binary_io.hpp"
#include "ego/toy_backend.hpp"

namespace ego {

using ReplyFn = std::function<std::string(const GenerationRequest&)>;

// Replies `reply` to any instruction containing `pattern`.
struct ScriptRule {
  std::string pattern;
  std::variant<std::string, ReplyFn> reply;
};

struct AttentionSynthRequest {
  int layer = 0;
  std::size_t head = 0;
  std::size_t step = 0;
  // Absolute position of the generated token; the row has position + 1 entries.
  std::size_t position = 0;
  const GenerationRequest* request = nullptr;
  std::span<const PositionRange> segments;
  std::string_view token_text;
};

// Fills one captured attention row. Rows must be non-negative and sum to 1.
using AttentionSynth = std::function<void(const AttentionSynthRequest&, std::span<float>)>;

inline void uniform_attention(const AttentionSynthRequest&, std::span<float> row) {
  const float v = 1.0f / static_cast<float>(row.size());
  std::fill(row.begin(), row.end(), v);
}

// Splits text into one token per UTF-8 code point.
inline std::vector<std::string> split_code_points(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const auto b = static_cast<unsigned char>(text[i]);
    std::size_t len = b < 0x80 ? 1 : (b & 0xE0) == 0xC0 ? 2 : (b & 0xF0) == 0xE0 ? 3 : (b & 0xF8) == 0xF0 ? 4 : 1;
    len = std::min(len, text.size() - i);
    out.emplace_back(text.substr(i, len));
    i += len;
  }
  return out;
}

// Backend with canned replies and synthetic attention. Encoding uses the toy
// patch projector unless an encoder is supplied.
class ScriptedBackend : public Backend {
 public:
  using Encoder = std::function<TokenMatrix(const ToyImage&)>;

  ScriptedBackend(BackendConfig config, std::vector<ScriptRule> rules, AttentionSynth synth = uniform_attention,
                  Encoder encoder = {})
      : config_(std::move(config)), rules_(std::move(rules)), synth_(std::move(synth)), encoder_(std::move(encoder)) {
    config_.validate();
    if (!encoder_) {
      encoder_ = [toy = ToyEncoder(config_)](const ToyImage& img) { return toy.encode(img); };
    }
  }

  const BackendConfig& config() const override { return config_; }
  TokenMatrix encode_image(const ToyImage& image) const override { return encoder_(image); }

  GenerationTrace generate(const GenerationRequest& request) const override {
    for (int layer : request.capture_layers) {
      detail::require(layer >= 0 && static_cast<std::uint32_t>(layer) < config_.layers,
                      ErrorCode::kInvalidArgument, "capture layer out of range");
    }
    GenerationTrace trace;
    trace.prompt_length =
        layout_context(*this, request.context, request.instruction, trace.segments, trace.instruction);
    check_context_budget(*this, trace.prompt_length, request.max_new_tokens);

    const ScriptRule* match = nullptr;
    for (const auto& rule : rules_) {
      if (request.instruction.find(rule.pattern) == std::string::npos) continue;
      detail::require(match == nullptr, ErrorCode::kContractViolation,
                      "instruction matches more than one script rule");
      match = &rule;
    }
    if (match == nullptr) throw Error(ErrorCode::kNoScript, "no script rule matches the instruction");
    const std::string reply = std::holds_alternative<std::string>(match->reply)
                                  ? std::get<std::string>(match->reply)
                                  : std::get<ReplyFn>(match->reply)(request);

    const auto pieces = split_code_points(reply);
    for (std::size_t k = 0; k < pieces.size(); ++k) trace.tokens.push_back({trace.prompt_length + k, pieces[k]});

    std::vector<int> capture = request.capture_layers;
    std::sort(capture.begin(), capture.end());
    capture.erase(std::unique(capture.begin(), capture.end()), capture.end());
    trace.attention.heads = config_.heads;
    for (const auto& tok : trace.tokens) trace.attention.step_positions.push_back(tok.position);
    for (int layer : capture) {
      CapturedLayer cl;
      cl.layer = layer;
      cl.rows.resize(config_.heads);
      for (std::size_t h = 0; h < config_.heads; ++h) {
        for (std::size_t k = 0; k < trace.tokens.size(); ++k) {
          std::vector<float> row(trace.tokens[k].position + 1, 0.0f);
          AttentionSynthRequest req{layer, h, k, trace.tokens[k].position, &request, trace.segments,
                                    trace.tokens[k].text};
          synth_(req, row);
          cl.rows[h].push_back(std::move(row));
        }
      }
      trace.attention.layers.push_back(std::move(cl));
    }
    return trace;
  }

 private:
  BackendConfig config_;
  std::vector<ScriptRule> rules_;
  AttentionSynth synth_;
  Encoder encoder_;
};

// Script file: {"config": {...}, "rules": [{"match": "...", "reply": "..."}]}.
inline BackendConfig backend_config_from_json(const nlohmann::json& j, BackendConfig base = {}) {
  base.model = j.value("model", base.model);
  base.layers = j.value("layers", base.layers);
  base.heads = j.value("heads", base.heads);
  base.dim = j.value("dim", base.dim);
  base.head_dim = j.value("head_dim", base.head_dim);
  if (j.contains("patch_grid")) {
    base.patch_grid.rows = j.at("patch_grid").at(0).get<std::uint32_t>();
    base.patch_grid.cols = j.at("patch_grid").at(1).get<std::uint32_t>();
  }
  base.vocab_size = j.value("vocab_size", base.vocab_size);
  base.max_context = j.value("max_context", base.max_context);
  base.seed = j.value("seed", base.seed);
  base.validate();
  return base;
}

inline nlohmann::json backend_config_to_json(const BackendConfig& c) {
  return {{"model", c.model},       {"layers", c.layers},
          {"heads", c.heads},       {"dim", c.dim},
          {"head_dim", c.head_dim}, {"patch_grid", {c.patch_grid.rows, c.patch_grid.cols}},
          {"vocab_size", c.vocab_size}, {"max_context", c.max_context},
          {"seed", c.seed}};
}

inline ScriptedBackend load_scripted_backend(const std::filesystem::path& path, BackendConfig base = {}) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(detail::read_file_text(path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kBackend, "bad script file " + path.string() + ": " + e.what());
  }
  base.model = "scripted";
  BackendConfig config = j.contains("config") ? backend_config_from_json(j.at("config"), base) : base;
  std::vector<ScriptRule> rules;
  for (const auto& r : j.at("rules")) {
    rules.push_back({r.at("match").get<std::string>(), r.at("reply").get<std::string>()});
  }
  return ScriptedBackend(std::move(config), std::move(rules));
}

}  // namespace ego
