// Copyright 2026 The ego Authors
// SPDX-License-Identifier: Apache-2.0

// HTTP transport for ChatCompletionJudge (cpp-httplib, plain http only).

#pragma once

#include <string>

#include <httplib.h>

#include "ego/error.hpp"
#include "ego/judge.hpp"

namespace ego {

// `endpoint` is "http://host:port/path"; the API key, when set, is sent as a
// bearer token.
inline ChatCompletionJudge::Transport http_transport(const std::string& endpoint, const std::string& api_key) {
  const auto scheme_end = endpoint.find("://");
  detail::require(scheme_end != std::string::npos && endpoint.substr(0, scheme_end) == "http",
                  ErrorCode::kInvalidArgument, "judge endpoint must be an http:// URL");
  const auto path_start = endpoint.find('/', scheme_end + 3);
  const std::string host = endpoint.substr(0, path_start);
  const std::string path = path_start == std::string::npos ? "/v1/chat/completions" : endpoint.substr(path_start);
  return [host, path, api_key](const std::string& body) {
    httplib::Client client(host);
    client.set_read_timeout(60, 0);
    httplib::Headers headers;
    if (!api_key.empty()) headers.emplace("Authorization", "Bearer " + api_key);
    auto res = client.Post(path, headers, body, "application/json");
    if (!res) throw Error(ErrorCode::kBackend, "judge endpoint unreachable: " + httplib::to_string(res.error()));
    if (res->status != 200) throw Error(ErrorCode::kBackend, "judge endpoint returned HTTP " + std::to_string(res->status));
    return res->body;
  };
}

}  // namespace ego
