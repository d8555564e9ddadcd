// Copyright 2026 The ego Authors
// SPDX-License-Identifier: Apache-2.0

// Enrollment (reference views -> concept memory) and personalized inference
// (concept memories in context -> recognition, VQA or captioning reply).

#pragma once

#include <algorithm>
#include <cctype>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ego/attention.hpp"
#include "ego/backend.hpp"
#include "ego/memory.hpp"
#include "ego/templates.hpp"
#include "ego/view.hpp"

namespace ego {

// ---------------------------------------------------------------------------
// Enrollment
// ---------------------------------------------------------------------------

// kUniform keeps K_c evenly spaced patches instead of the most attended ones
// (ablation baseline). Keywords are still generated for provenance.
enum class SelectionMode { kAttention, kUniform };

struct EnrollmentRequest {
  std::string name;
  std::vector<Media> views;
  // Optional ids for the views; defaults to "view0", "view1", ...
  std::vector<std::string> view_ids;
  MemoryBudget budget;
  std::vector<int> layers;
  SelectionMode selection = SelectionMode::kAttention;
};

struct ViewReport {
  std::string view_id;
  SizeEstimate alpha;
  std::size_t k_c = 0;
  std::vector<std::size_t> indices;
  std::vector<std::string> keywords;
  int keyword_attempts = 1;
};

struct EnrollmentResult {
  ConceptMemory memory;
  std::vector<ViewReport> views;
};

// Builds the memory for one concept. Does not touch the library.
inline EnrollmentResult build_enrollment(const EnrollmentRequest& request, const Backend& backend,
                                         const PromptTemplateSet& templates) {
  detail::require(!request.name.empty(), ErrorCode::kInvalidArgument, "concept name must not be empty");
  detail::require(!request.views.empty(), ErrorCode::kInvalidArgument, "enrollment needs at least one view");
  detail::require(request.view_ids.empty() || request.view_ids.size() == request.views.size(),
                  ErrorCode::kInvalidArgument, "view id count does not match view count");
  detail::require(!request.layers.empty(), ErrorCode::kInvalidArgument, "enrollment needs a layer set");

  EnrollmentResult result;
  std::vector<ViewSelection> selections;
  for (std::size_t v = 0; v < request.views.size(); ++v) {
    const std::string view_id = request.view_ids.empty() ? "view" + std::to_string(v) : request.view_ids[v];
    const TokenMatrix visual = encode_media(backend, request.views[v]);
    const SizeEstimate alpha = query_subject_size(backend, visual, templates);
    KeywordCapture capture;
    try {
      capture = capture_keyword_attention(backend, visual, templates, request.layers);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kEmptyKeywords && e.code() != ErrorCode::kMissingCapture) throw;
      throw Error(ErrorCode::kEnrollment, "view '" + view_id + "' of concept '" + request.name +
                                              "' produced no keywords: " + e.what());
    }
    const auto importance = importance_scores(capture.stack);
    const std::size_t k_c = dynamic_k(alpha, visual.rows(), request.budget);
    SelectionResult picked;
    if (request.selection == SelectionMode::kUniform) {
      picked.indices = uniform_indices(visual.rows(), k_c);
      picked.tokens = visual.gather(picked.indices);
    } else {
      picked = select_top_tokens(visual, importance, k_c);
    }
    ViewSelection sel{view_id, std::move(picked), alpha, split_keywords(capture.trace.text())};
    result.views.push_back({view_id, alpha, k_c, sel.selection.indices, sel.keywords, capture.attempts});
    selections.push_back(std::move(sel));
  }
  result.memory = build_concept_memory(request.name, selections, backend.fingerprint());
  return result;
}

// Builds the memory and adds it to the library. Throws kConflict on a
// duplicate name (before any model call) and kBackendMismatch when the
// library belongs to another backend.
inline EnrollmentResult enroll(const EnrollmentRequest& request, const Backend& backend, ConceptLibrary& library,
                               const PromptTemplateSet& templates = default_templates()) {
  if (library.find(request.name) != nullptr) {
    throw Error(ErrorCode::kConflict, "concept '" + request.name + "' already exists");
  }
  library.check_compatible(backend.fingerprint(), backend.config().dim);
  auto result = build_enrollment(request, backend, templates);
  library.add(result.memory);
  return result;
}

// ---------------------------------------------------------------------------
// Inference
// ---------------------------------------------------------------------------

enum class TaskKind { kRecognition, kVqa, kCaptioning };

inline std::string_view to_string(TaskKind t) {
  switch (t) {
    case TaskKind::kRecognition: return "recognition";
    case TaskKind::kVqa: return "vqa";
    case TaskKind::kCaptioning: return "captioning";
  }
  return "unknown";
}

inline TaskKind parse_task_kind(std::string_view s) {
  if (s == "recognition") return TaskKind::kRecognition;
  if (s == "vqa") return TaskKind::kVqa;
  if (s == "captioning") return TaskKind::kCaptioning;
  throw Error(ErrorCode::kInvalidArgument, "unknown task '" + std::string(s) + "'");
}

struct TaskQuery {
  TaskKind task = TaskKind::kRecognition;
  // One image, or the frames of a video in temporal order.
  std::vector<Media> media;
  std::optional<std::string> question;
  std::vector<const ConceptMemory*> concepts;
  std::size_t max_new_tokens = 64;
};

inline std::string join_names(const std::vector<const ConceptMemory*>& concepts) {
  std::string out;
  for (std::size_t i = 0; i < concepts.size(); ++i) {
    if (i > 0) out += ", ";
    out += concepts[i]->name;
  }
  return out;
}

inline std::string task_instruction(TaskKind task, const PromptTemplateSet& templates,
                                    const std::vector<const ConceptMemory*>& concepts, bool video,
                                    const std::optional<std::string>& question) {
  TemplateValues v;
  v.names = join_names(concepts);
  v.query_index = std::to_string(concepts.size() + 1);
  v.media = video ? "Video" : "Image";
  v.question = question.value_or("");
  switch (task) {
    case TaskKind::kRecognition: return render_template(templates.recognition, v);
    case TaskKind::kVqa: return render_template(templates.vqa, v);
    case TaskKind::kCaptioning: return render_template(templates.captioning, v);
  }
  return {};
}

// [text, visual] per concept, then one visual segment per query frame, then
// the instruction as a final text segment.
inline std::vector<ContextSegment> build_incontext_context(const std::vector<const ConceptMemory*>& concepts,
                                                           const PromptTemplateSet& templates,
                                                           const std::vector<TokenMatrix>& query_visuals,
                                                           const std::string& instruction) {
  std::vector<ContextSegment> out;
  for (std::size_t i = 0; i < concepts.size(); ++i) {
    TemplateValues v;
    v.index = std::to_string(i + 1);
    v.names = concepts[i]->name;
    v.query_index = std::to_string(concepts.size() + 1);
    out.push_back(ContextSegment::text(render_template(templates.in_context_concept, v)));
    out.push_back(ContextSegment::visual(concepts[i]->tokens));
  }
  for (const auto& q : query_visuals) out.push_back(ContextSegment::visual(q));
  out.push_back(ContextSegment::text(instruction));
  return out;
}

struct RecognitionAnswer {
  std::string concept_name;
  bool present = false;
  // The reply had no usable yes/no for this concept; present is false.
  bool flagged = false;
  std::string diagnostic;
};

namespace detail {

inline std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

// Lower-cased with ASCII punctuation and whitespace removed; used to compare
// names ("My-Mug!" and "my-mug" agree).
inline std::string name_key(std::string_view s) {
  std::string out;
  for (char c : s) {
    const auto u = static_cast<unsigned char>(c);
    if (u < 0x80 && !std::isalnum(u)) continue;
    out.push_back(static_cast<char>(std::tolower(u)));
  }
  return out;
}

// "yes", "no" or "" for the first word of an answer.
inline std::string yes_no(std::string_view answer) {
  std::string word;
  for (char c : answer) {
    const auto u = static_cast<unsigned char>(c);
    if (std::isalpha(u)) {
      word.push_back(static_cast<char>(std::tolower(u)));
    } else if (!word.empty()) {
      break;
    }
  }
  return word == "yes" || word == "no" ? word : std::string();
}

inline std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto nl = text.find('\n', start);
    const auto end = nl == std::string_view::npos ? text.size() : nl;
    out.push_back(text.substr(start, end - start));
    if (nl == std::string_view::npos) break;
    start = nl + 1;
  }
  return out;
}

}  // namespace detail

// Reads "name: yes/no" lines. Matching is case- and punctuation-insensitive
// and splits each line at its last ':'. A concept with no line, or with
// conflicting lines, is reported as a flagged "no". With one offered concept
// a bare "yes"/"no" (or "Final Answer: yes") is also accepted.
inline std::vector<RecognitionAnswer> parse_recognition_reply(std::string_view reply,
                                                              const std::vector<std::string>& offered) {
  std::vector<RecognitionAnswer> out;
  for (const auto& name : offered) out.push_back({name, false, true, "no answer line for concept"});
  std::vector<int> seen(offered.size(), 0);
  std::string bare;
  for (auto line : detail::split_lines(reply)) {
    const auto colon = line.rfind(':');
    const std::string_view head = colon == std::string_view::npos ? std::string_view() : line.substr(0, colon);
    const std::string_view tail = colon == std::string_view::npos ? line : line.substr(colon + 1);
    const std::string answer = detail::yes_no(tail);
    if (answer.empty()) continue;
    const std::string key = detail::name_key(head);
    bool matched = false;
    for (std::size_t i = 0; i < offered.size(); ++i) {
      if (key.empty() || key != detail::name_key(offered[i])) continue;
      matched = true;
      const bool present = answer == "yes";
      if (seen[i]++ == 0) {
        out[i] = {offered[i], present, false, {}};
      } else if (!out[i].flagged && out[i].present != present) {
        out[i] = {offered[i], false, true, "conflicting answers for concept"};
      }
    }
    if (!matched) bare = answer;
  }
  if (offered.size() == 1 && seen[0] == 0 && !bare.empty()) out[0] = {offered[0], bare == "yes", false, {}};
  return out;
}

struct TaskResult {
  TaskKind task = TaskKind::kRecognition;
  std::string raw;
  std::vector<std::string> offered;
  std::vector<RecognitionAnswer> recognition;
  // VQA answer or caption: the raw reply.
  std::string answer;
  std::size_t prompt_tokens = 0;

  std::size_t flagged() const {
    return static_cast<std::size_t>(
        std::count_if(recognition.begin(), recognition.end(), [](const auto& a) { return a.flagged; }));
  }
};

inline void validate_task_query(const TaskQuery& query) {
  detail::require(!query.media.empty(), ErrorCode::kInvalidArgument, "task needs query media");
  if (query.task == TaskKind::kVqa) {
    detail::require(query.question.has_value() && !query.question->empty(), ErrorCode::kInvalidArgument,
                    "vqa needs a question");
  } else {
    detail::require(!query.question.has_value(), ErrorCode::kInvalidArgument,
                    std::string(to_string(query.task)) + " does not take a question");
  }
  for (const auto* c : query.concepts) detail::require(c != nullptr, ErrorCode::kInvalidArgument, "null concept");
}

inline std::vector<TokenMatrix> encode_query_media(const Backend& backend, const std::vector<Media>& media) {
  std::vector<TokenMatrix> out;
  for (const auto& m : media) out.push_back(encode_media(backend, m));
  return out;
}

// Runs one task with already-encoded query frames.
inline TaskResult run_task_encoded(const TaskQuery& query, const std::vector<TokenMatrix>& query_visuals,
                                   const Backend& backend, const PromptTemplateSet& templates) {
  validate_task_query(query);
  for (const auto* c : query.concepts) {
    detail::require(c->backend_fingerprint == backend.fingerprint() && c->dim() == backend.config().dim,
                    ErrorCode::kBackendMismatch, "concept '" + c->name + "' was built with a different backend");
  }
  GenerationRequest req;
  req.instruction = task_instruction(query.task, templates, query.concepts, query_visuals.size() > 1, query.question);
  req.context = build_incontext_context(query.concepts, templates, query_visuals, req.instruction);
  // The trailing instruction segment goes in the request's instruction slot.
  req.context.pop_back();
  req.max_new_tokens = query.max_new_tokens;

  TaskResult result;
  result.task = query.task;
  for (const auto* c : query.concepts) result.offered.push_back(c->name);
  std::vector<PositionRange> segments;
  PositionRange instr;
  result.prompt_tokens = layout_context(backend, req.context, req.instruction, segments, instr);
  check_context_budget(backend, result.prompt_tokens, req.max_new_tokens);

  result.raw = backend.generate(req).text();
  if (query.task == TaskKind::kRecognition) {
    result.recognition = parse_recognition_reply(result.raw, result.offered);
  } else {
    result.answer = result.raw;
  }
  return result;
}

inline TaskResult run_task(const TaskQuery& query, const Backend& backend,
                           const PromptTemplateSet& templates = default_templates()) {
  validate_task_query(query);
  return run_task_encoded(query, encode_query_media(backend, query.media), backend, templates);
}

// Concepts to offer for a query: the whole library in order, or the m most
// similar to the pooled query frames.
inline std::vector<const ConceptMemory*> concepts_for_query(const ConceptLibrary& library,
                                                            const std::vector<TokenMatrix>& query_visuals,
                                                            std::optional<std::size_t> filter_m) {
  std::vector<const ConceptMemory*> out;
  if (!filter_m) {
    for (const auto& c : library.concepts()) out.push_back(&c);
    return out;
  }
  if (library.empty()) return out;
  TokenMatrix pooled(0, query_visuals.front().dim());
  for (const auto& q : query_visuals) pooled.append(q);
  for (const auto& s : filter_concepts_by_similarity(library, pooled, *filter_m)) {
    out.push_back(&library.concepts()[s.index]);
  }
  return out;
}

}  // namespace ego
