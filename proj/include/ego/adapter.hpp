// Copyright 2026 The ego Authors
// SPDX-License-Identifier: Apache-2.0

// Out-of-process backends over a session directory. Layout:
//
//   <session>/capabilities.json      written by the adapter at start-up
//   <session>/requests/<id>.json     request envelope (engine -> adapter)
//   <session>/requests/<id>.*        tensors and images the envelope names
//   <session>/responses/<id>.json    response envelope (adapter -> engine)
//   <session>/responses/<id>.*       tensors the response names
//
// Envelope files are written to a temporary name and renamed into place, so a
// reader never sees a partial envelope. Every envelope carries
// "protocol_version". See docs/adapter-protocol.md.

#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "ego/backend.hpp"
#include "ego/detail/binary_io.hpp"
#include "ego/scripted_backend.hpp"
#include "ego/tensor_io.hpp"
#include "ego/toy_image.hpp"

#if defined(__unix__) || defined(__APPLE__)
#include <unistd.h>
#endif

namespace ego {

inline constexpr int kAdapterProtocolVersion = 1;

struct AdapterCapabilities {
  BackendConfig config;
  bool supports_concurrent_calls = false;
  std::string notes;
};

inline nlohmann::json capabilities_to_json(const AdapterCapabilities& c) {
  auto j = backend_config_to_json(c.config);
  j["protocol_version"] = kAdapterProtocolVersion;
  j["backend_contract_version"] = kBackendContractVersion;
  j["supports_concurrent_calls"] = c.supports_concurrent_calls;
  j["notes"] = c.notes;
  return j;
}

inline AdapterCapabilities capabilities_from_json(const nlohmann::json& j) {
  detail::require(j.value("protocol_version", 0) == kAdapterProtocolVersion, ErrorCode::kBackend,
                  "adapter speaks an unsupported protocol version");
  AdapterCapabilities c;
  c.config = backend_config_from_json(j);
  c.supports_concurrent_calls = j.value("supports_concurrent_calls", false);
  c.notes = j.value("notes", std::string());
  return c;
}

namespace detail {

inline void write_json_atomic(const std::filesystem::path& path, const nlohmann::json& j) {
  auto temp = path;
  temp += ".partial";
  write_file_text(temp, j.dump());
  std::filesystem::rename(temp, path);
}

inline nlohmann::json read_json(const std::filesystem::path& path) {
  try {
    return nlohmann::json::parse(read_file_text(path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kBackend, "bad envelope " + path.string() + ": " + e.what());
  }
}

// Ragged attention rows (row k has step_positions[k] + 1 entries) packed into
// a [heads, steps, max_len] tensor, zero padded.
inline Tensor pack_layer_rows(const CapturedLayer& layer, const std::vector<std::size_t>& step_positions,
                              std::size_t heads, const std::string& name) {
  std::size_t max_len = 0;
  for (auto p : step_positions) max_len = std::max(max_len, p + 1);
  Tensor t{name, {heads, step_positions.size(), max_len}, {}};
  t.values.assign(heads * step_positions.size() * max_len, 0.0f);
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t k = 0; k < step_positions.size(); ++k) {
      const auto& row = layer.rows[h][k];
      std::copy(row.begin(), row.end(), t.values.begin() + static_cast<std::ptrdiff_t>((h * step_positions.size() + k) * max_len));
    }
  }
  return t;
}

inline CapturedLayer unpack_layer_rows(const Tensor& t, int layer, const std::vector<std::size_t>& step_positions) {
  require(t.shape.size() == 3 && t.shape[1] == step_positions.size(), ErrorCode::kBackend,
          "attention tensor shape does not match the trace");
  CapturedLayer out;
  out.layer = layer;
  const std::size_t heads = t.shape[0], steps = t.shape[1], max_len = t.shape[2];
  out.rows.resize(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t k = 0; k < steps; ++k) {
      const std::size_t len = step_positions[k] + 1;
      require(len <= max_len, ErrorCode::kBackend, "attention row longer than its tensor");
      auto begin = t.values.begin() + static_cast<std::ptrdiff_t>((h * steps + k) * max_len);
      out.rows[h].emplace_back(begin, begin + static_cast<std::ptrdiff_t>(len));
    }
  }
  return out;
}

inline nlohmann::json range_json(PositionRange r) { return nlohmann::json::array({r.begin, r.end}); }
inline PositionRange range_from(const nlohmann::json& j) {
  return {j.at(0).get<std::size_t>(), j.at(1).get<std::size_t>()};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Envelopes
// ---------------------------------------------------------------------------

// Writes an encode request for `image`; returns the envelope.
inline nlohmann::json write_encode_request(const std::filesystem::path& dir, const std::string& id,
                                           const ToyImage& image) {
  const std::string file = id + ".image.egoi";
  save_image(image, dir / file);
  return {{"protocol_version", kAdapterProtocolVersion}, {"id", id}, {"op", "encode"}, {"image", file}};
}

inline nlohmann::json write_generate_request(const std::filesystem::path& dir, const std::string& id,
                                             const GenerationRequest& req) {
  nlohmann::json context = nlohmann::json::array();
  for (std::size_t i = 0; i < req.context.size(); ++i) {
    const auto& seg = req.context[i];
    if (seg.kind() == SegmentKind::kText) {
      context.push_back({{"kind", "text"}, {"text", seg.text_payload()}});
    } else {
      const std::string manifest = id + ".seg" + std::to_string(i) + ".json";
      write_tensor_set(dir / manifest, {tensor_from_tokens("tokens", seg.visual_payload())});
      context.push_back({{"kind", "visual"}, {"tensor", manifest}});
    }
  }
  return {{"protocol_version", kAdapterProtocolVersion},
          {"id", id},
          {"op", "generate"},
          {"context", context},
          {"instruction", req.instruction},
          {"capture_layers", req.capture_layers},
          {"max_new_tokens", req.max_new_tokens},
          {"deterministic", req.deterministic}};
}

inline GenerationRequest read_generate_request(const std::filesystem::path& dir, const nlohmann::json& j) {
  GenerationRequest req;
  for (const auto& seg : j.at("context")) {
    if (seg.at("kind").get<std::string>() == "text") {
      req.context.push_back(ContextSegment::text(seg.at("text").get<std::string>()));
    } else {
      req.context.push_back(ContextSegment::visual(load_token_tensor(dir / seg.at("tensor").get<std::string>())));
    }
  }
  req.instruction = j.at("instruction").get<std::string>();
  req.capture_layers = j.at("capture_layers").get<std::vector<int>>();
  req.max_new_tokens = j.at("max_new_tokens").get<std::size_t>();
  req.deterministic = j.value("deterministic", true);
  return req;
}

inline nlohmann::json write_trace_response(const std::filesystem::path& dir, const std::string& id,
                                           const GenerationTrace& trace) {
  nlohmann::json tokens = nlohmann::json::array();
  for (const auto& t : trace.tokens) tokens.push_back({{"position", t.position}, {"text", t.text}});
  nlohmann::json segments = nlohmann::json::array();
  for (auto r : trace.segments) segments.push_back(detail::range_json(r));
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& cl : trace.attention.layers) {
    const std::string manifest = id + ".attn" + std::to_string(cl.layer) + ".json";
    write_tensor_set(dir / manifest,
                     {detail::pack_layer_rows(cl, trace.attention.step_positions, trace.attention.heads, "rows")});
    layers.push_back({{"layer", cl.layer}, {"tensor", manifest}});
  }
  return {{"protocol_version", kAdapterProtocolVersion},
          {"id", id},
          {"status", "ok"},
          {"tokens", tokens},
          {"segments", segments},
          {"instruction", detail::range_json(trace.instruction)},
          {"prompt_length", trace.prompt_length},
          {"attention",
           {{"heads", trace.attention.heads}, {"step_positions", trace.attention.step_positions}, {"layers", layers}}}};
}

inline GenerationTrace read_trace_response(const std::filesystem::path& dir, const nlohmann::json& j) {
  GenerationTrace trace;
  for (const auto& t : j.at("tokens")) {
    trace.tokens.push_back({t.at("position").get<std::size_t>(), t.at("text").get<std::string>()});
  }
  for (const auto& s : j.at("segments")) trace.segments.push_back(detail::range_from(s));
  trace.instruction = detail::range_from(j.at("instruction"));
  trace.prompt_length = j.at("prompt_length").get<std::size_t>();
  const auto& a = j.at("attention");
  trace.attention.heads = a.at("heads").get<std::size_t>();
  trace.attention.step_positions = a.at("step_positions").get<std::vector<std::size_t>>();
  for (const auto& l : a.at("layers")) {
    const auto set = read_tensor_set(dir / l.at("tensor").get<std::string>());
    detail::require(set.size() == 1, ErrorCode::kBackend, "attention manifest must hold one tensor");
    trace.attention.layers.push_back(
        detail::unpack_layer_rows(set.front(), l.at("layer").get<int>(), trace.attention.step_positions));
  }
  return trace;
}

inline nlohmann::json error_response(const std::string& id, const Error& e) {
  nlohmann::json j = {{"protocol_version", kAdapterProtocolVersion},
                      {"id", id},
                      {"status", "error"},
                      {"error", {{"code", std::string(to_string(e.code()))}, {"message", e.what()}}}};
  if (const auto* cl = dynamic_cast<const ContextLimitError*>(&e)) {
    j["error"]["required"] = cl->required();
    j["error"]["limit"] = cl->limit();
  }
  return j;
}

// Throws the error an envelope carries, if any.
inline void raise_if_error(const nlohmann::json& j) {
  if (j.value("status", std::string("error")) == "ok") return;
  const auto& e = j.at("error");
  if (e.value("code", std::string()) == "context-limit" && e.contains("required")) {
    throw ContextLimitError(e.at("required").get<std::size_t>(), e.at("limit").get<std::size_t>());
  }
  throw Error(ErrorCode::kBackend, "adapter error: " + e.value("message", std::string("unknown")));
}

// ---------------------------------------------------------------------------
// Engine side
// ---------------------------------------------------------------------------

class AdapterBackend final : public Backend {
 public:
  explicit AdapterBackend(std::filesystem::path session,
                          std::chrono::milliseconds timeout = std::chrono::milliseconds(120000))
      : session_(std::move(session)), timeout_(timeout) {
    caps_ = capabilities_from_json(detail::read_json(session_ / "capabilities.json"));
    std::filesystem::create_directories(session_ / "requests");
    std::filesystem::create_directories(session_ / "responses");
  }

  const BackendConfig& config() const override { return caps_.config; }
  bool supports_concurrent_calls() const override { return caps_.supports_concurrent_calls; }
  const AdapterCapabilities& capabilities() const { return caps_; }

  TokenMatrix encode_image(const ToyImage& image) const override {
    const auto id = next_id();
    const auto env = write_encode_request(session_ / "requests", id, image);
    const auto resp = round_trip(id, env);
    return load_token_tensor(session_ / "responses" / resp.at("tokens").get<std::string>());
  }

  GenerationTrace generate(const GenerationRequest& request) const override {
    const auto id = next_id();
    const auto env = write_generate_request(session_ / "requests", id, request);
    return read_trace_response(session_ / "responses", round_trip(id, env));
  }

 private:
  std::string next_id() const {
#if defined(__unix__) || defined(__APPLE__)
    const long pid = static_cast<long>(::getpid());
#else
    const long pid = 0;
#endif
    // Shared across instances so two engines on one session never collide.
    static std::atomic<unsigned> counter{0};
    char buf[48];
    std::snprintf(buf, sizeof buf, "%ld-%06u", pid, counter++);
    return buf;
  }

  nlohmann::json round_trip(const std::string& id, const nlohmann::json& envelope) const {
    detail::write_json_atomic(session_ / "requests" / (id + ".json"), envelope);
    const auto path = session_ / "responses" / (id + ".json");
    const auto deadline = std::chrono::steady_clock::now() + timeout_;
    while (!std::filesystem::exists(path)) {
      if (std::chrono::steady_clock::now() > deadline) throw Error(ErrorCode::kBackend, "adapter timed out on " + id);
      std::this_thread::sleep_for(std::chrono::milliseconds(2));
    }
    auto resp = detail::read_json(path);
    detail::require(resp.value("protocol_version", 0) == kAdapterProtocolVersion, ErrorCode::kBackend,
                    "response has an unsupported protocol version");
    raise_if_error(resp);
    return resp;
  }

  std::filesystem::path session_;
  std::chrono::milliseconds timeout_;
  AdapterCapabilities caps_;
};

// ---------------------------------------------------------------------------
// Adapter side (reference implementation over any in-process backend)
// ---------------------------------------------------------------------------

inline void write_capabilities(const std::filesystem::path& session, const Backend& backend, std::string notes = {}) {
  std::filesystem::create_directories(session / "requests");
  std::filesystem::create_directories(session / "responses");
  detail::write_json_atomic(session / "capabilities.json",
                            capabilities_to_json({backend.config(), backend.supports_concurrent_calls(), notes}));
}

// Answers one request envelope; returns the response envelope (already
// written).
inline nlohmann::json serve_request(const std::filesystem::path& session, const std::filesystem::path& request_path,
                                    const Backend& backend) {
  const auto req_dir = session / "requests";
  const auto resp_dir = session / "responses";
  const auto env = detail::read_json(request_path);
  const std::string id = env.value("id", request_path.stem().string());
  nlohmann::json resp;
  try {
    detail::require(env.value("protocol_version", 0) == kAdapterProtocolVersion, ErrorCode::kBackend,
                    "request has an unsupported protocol version");
    const auto op = env.at("op").get<std::string>();
    if (op == "encode") {
      const auto tokens = backend.encode_image(load_image(req_dir / env.at("image").get<std::string>()));
      const std::string manifest = id + ".tokens.json";
      write_tensor_set(resp_dir / manifest, {tensor_from_tokens("tokens", tokens)});
      resp = {{"protocol_version", kAdapterProtocolVersion}, {"id", id}, {"status", "ok"}, {"tokens", manifest}};
    } else if (op == "generate") {
      resp = write_trace_response(resp_dir, id, backend.generate(read_generate_request(req_dir, env)));
    } else {
      throw Error(ErrorCode::kBackend, "unknown op '" + op + "'");
    }
  } catch (const Error& e) {
    resp = error_response(id, e);
  } catch (const std::exception& e) {
    resp = error_response(id, Error(ErrorCode::kBackend, e.what()));
  }
  detail::write_json_atomic(resp_dir / (id + ".json"), resp);
  return resp;
}

// Serves requests that have no response yet until `stop` is set or
// `max_requests` have been answered.
inline std::size_t serve_session(const std::filesystem::path& session, const Backend& backend,
                                 const std::atomic<bool>& stop, std::size_t max_requests = SIZE_MAX) {
  std::size_t served = 0;
  while (!stop.load() && served < max_requests) {
    bool idle = true;
    std::vector<std::filesystem::path> pending;
    for (const auto& e : std::filesystem::directory_iterator(session / "requests")) {
      const auto& p = e.path();
      if (p.extension() != ".json" || p.stem().extension() != "") continue;
      if (std::filesystem::exists(session / "responses" / p.filename())) continue;
      pending.push_back(p);
    }
    std::sort(pending.begin(), pending.end());
    for (const auto& p : pending) {
      serve_request(session, p, backend);
      ++served;
      idle = false;
      if (served >= max_requests) break;
    }
    if (idle) std::this_thread::sleep_for(std::chrono::milliseconds(2));
  }
  return served;
}

}  // namespace ego
