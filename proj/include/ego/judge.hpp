// Copyright 2026 The ego Authors
// SPDX-License-Identifier: Apache-2.0

// Graders for open-ended VQA answers.

#pragma once

#include <functional>
#include <memory>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "ego/error.hpp"
#include "ego/templates.hpp"

namespace ego {

class Judge {
 public:
  virtual ~Judge() = default;
  // Raw grader reply for a rendered grading prompt.
  virtual std::string complete(const std::string& prompt) const = 0;
  virtual bool supports_concurrent_calls() const { return true; }
};

// True when the grader reply starts with "yes" (any case, leading
// punctuation or whitespace ignored).
inline bool judge_says_yes(std::string_view reply) {
  std::size_t i = 0;
  while (i < reply.size() && !std::isalpha(static_cast<unsigned char>(reply[i]))) ++i;
  std::string word;
  while (i < reply.size() && std::isalpha(static_cast<unsigned char>(reply[i]))) {
    word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(reply[i++]))));
  }
  return word == "yes";
}

inline bool judge_answer(const Judge& judge, const PromptTemplateSet& templates, const std::string& question,
                         const std::string& gold, const std::string& pred) {
  TemplateValues v;
  v.question = question;
  v.answer = gold;
  v.pred = pred;
  return judge_says_yes(judge.complete(render_template(templates.judge, v)));
}

class ScriptedJudge final : public Judge {
 public:
  explicit ScriptedJudge(std::function<std::string(const std::string&)> fn) : fn_(std::move(fn)) {}
  std::string complete(const std::string& prompt) const override { return fn_(prompt); }

 private:
  std::function<std::string(const std::string&)> fn_;
};

// Chat-completion grader: POST {"model", "temperature": 0, "messages":
// [{"role": "user", "content": prompt}]} and read
// choices[0].message.content. The transport is injected so this header does
// not pull in an HTTP client; see http_judge.hpp.
class ChatCompletionJudge final : public Judge {
 public:
  using Transport = std::function<std::string(const std::string& body)>;

  ChatCompletionJudge(Transport transport, std::string model)
      : transport_(std::move(transport)), model_(std::move(model)) {}

  static std::string request_body(const std::string& model, const std::string& prompt) {
    nlohmann::json body = {{"model", model},
                           {"temperature", 0},
                           {"messages", nlohmann::json::array({{{"role", "user"}, {"content", prompt}}})}};
    return body.dump();
  }

  static std::string parse_response(const std::string& response) {
    try {
      return nlohmann::json::parse(response).at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kBackend, std::string("bad judge response: ") + e.what());
    }
  }

  std::string complete(const std::string& prompt) const override {
    return parse_response(transport_(request_body(model_, prompt)));
  }

 private:
  Transport transport_;
  std::string model_;
};

}  // namespace ego
