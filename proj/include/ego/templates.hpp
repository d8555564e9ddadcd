// Copyright 2026 The ego Authors
// SPDX-License-Identifier: Apache-2.0

// Prompt templates. Placeholders:
//   <i>      1-based index of a concept in the in-context list
//   <c>      concept name (joined with ", " when a task offers several)
//   <I+1>    index of the query image: concept count + 1
//   <N+1>    same as <I+1>
//   {media}  "Image" or "Video"
//   {question} {answer} {pred}
// Any other text, including angle-bracket examples such as
// "<characteristic 0>", is left untouched.

#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "ego/detail/binary_io.hpp"
#include "ego/error.hpp"

namespace ego {

struct PromptTemplateSet {
  std::string size_estimation;
  std::string keyword_generation;
  std::string in_context_concept;
  std::string recognition;
  std::string vqa;
  std::string captioning;
  std::string judge;

  friend bool operator==(const PromptTemplateSet&, const PromptTemplateSet&) = default;
};

inline PromptTemplateSet default_templates() {
  PromptTemplateSet t;
  t.size_estimation =
      "Please analyze the image and estimate the percentage of the total image area that the main subject "
      "occupies. If you can not answer, say 0";
  t.keyword_generation =
      "Give me a list of important words to describe the **main** subject of the image (e.g. blue wheels, green "
      "eyes, zigzag pattern, tinted windows...). Provide the list in this exact format: <characteristic 0>, "
      "<characteristic 1>, <characteristic 2>,... . Do not answer anything else than the list of important "
      "words. Do not mention anything about the background or other objects in the image.";
  t.in_context_concept = "Image <i> shows the entity <c>. Image <i>:";
  t.recognition =
      "Focusing on each subject's distinctive features, check the presence of the subjects **one by one** in "
      "the **new** {media}. Answer with the following template: subject_name: yes/no.";
  t.vqa = "Answer the following question about Image <I+1>: {question}";
  t.captioning =
      "Generate a detailed caption describing what you see in Image <I+1>. If an entity was detected, include "
      "its given name in the caption.";
  t.judge =
      "You are an intelligent chatbot designed for evaluating the correctness of generative outputs for "
      "question-answer pairs. Your task is to compare the predicted answer with the correct answer and "
      "determine if they match meaningfully. Here's how you can accomplish the task:\n"
      "INSTRUCTIONS: \n"
      "- Focus on the meaningful match between the predicted answer and the correct answer.\n"
      "- Consider synonyms or paraphrases as valid matches.\n"
      "- Evaluate the correctness of the prediction compared to the answer.\n"
      "Please evaluate the following question-answer pair:\n"
      "Question: {question}\n"
      "Correct Answer: {answer}\n"
      "Predicted Answer: {pred}\n"
      "Provide your evaluation only as a Yes/No.\n"
      "DO NOT PROVIDE ANY OTHER OUTPUT TEXT OR EXPLANATION.";
  return t;
}

struct TemplateValues {
  std::string index;      // <i>
  std::string names;      // <c>
  std::string query_index;  // <I+1>, <N+1>
  std::string media = "Image";
  std::string question;
  std::string answer;
  std::string pred;
};

inline std::string render_template(std::string_view tmpl, const TemplateValues& v) {
  struct Sub {
    std::string_view key;
    const std::string* value;
  };
  const Sub subs[] = {{"<I+1>", &v.query_index}, {"<N+1>", &v.query_index}, {"<i>", &v.index},
                      {"<c>", &v.names},         {"{media}", &v.media},     {"{question}", &v.question},
                      {"{answer}", &v.answer},   {"{pred}", &v.pred}};
  std::string out;
  std::size_t i = 0;
  while (i < tmpl.size()) {
    bool replaced = false;
    for (const auto& s : subs) {
      if (tmpl.compare(i, s.key.size(), s.key) == 0) {
        out += *s.value;
        i += s.key.size();
        replaced = true;
        break;
      }
    }
    if (!replaced) out.push_back(tmpl[i++]);
  }
  return out;
}

inline void validate_templates(const PromptTemplateSet& t) {
  auto need = [](const std::string& tmpl, std::string_view key, std::string_view field) {
    if (tmpl.find(key) == std::string::npos) {
      throw Error(ErrorCode::kInvalidArgument,
                  "template '" + std::string(field) + "' is missing placeholder " + std::string(key));
    }
  };
  auto non_empty = [](const std::string& tmpl, std::string_view field) {
    if (tmpl.empty()) throw Error(ErrorCode::kInvalidArgument, "template '" + std::string(field) + "' is empty");
  };
  non_empty(t.size_estimation, "size_estimation");
  non_empty(t.keyword_generation, "keyword_generation");
  non_empty(t.recognition, "recognition");
  non_empty(t.captioning, "captioning");
  need(t.in_context_concept, "<i>", "in_context_concept");
  need(t.in_context_concept, "<c>", "in_context_concept");
  need(t.vqa, "{question}", "vqa");
  need(t.judge, "{question}", "judge");
  need(t.judge, "{answer}", "judge");
  need(t.judge, "{pred}", "judge");
}

inline nlohmann::json templates_to_json(const PromptTemplateSet& t) {
  return {{"version", 1},
          {"size_estimation", t.size_estimation},
          {"keyword_generation", t.keyword_generation},
          {"in_context_concept", t.in_context_concept},
          {"recognition", t.recognition},
          {"vqa", t.vqa},
          {"captioning", t.captioning},
          {"judge", t.judge}};
}

// Missing keys fall back to the defaults.
inline PromptTemplateSet templates_from_json(const nlohmann::json& j) {
  auto t = default_templates();
  auto take = [&](const char* key, std::string& field) {
    if (j.contains(key)) field = j.at(key).get<std::string>();
  };
  take("size_estimation", t.size_estimation);
  take("keyword_generation", t.keyword_generation);
  take("in_context_concept", t.in_context_concept);
  take("recognition", t.recognition);
  take("vqa", t.vqa);
  take("captioning", t.captioning);
  take("judge", t.judge);
  validate_templates(t);
  return t;
}

inline PromptTemplateSet load_templates(const std::filesystem::path& path) {
  try {
    return templates_from_json(nlohmann::json::parse(detail::read_file_text(path)));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument, "bad template file " + path.string() + ": " + e.what());
  }
}

}  // namespace ego
