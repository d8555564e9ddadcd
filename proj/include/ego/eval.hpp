// Copyright 2026 The ego Authors
// SPDX-License-Identifier: Apache-2.0

// Evaluation over a dataset manifest: recognition P/R/F1 (single concept and
// concept pairs), VQA accuracy and captioning recall.
//
// Manifest (paths relative to the manifest file):
//   {"version": 1,
//    "concepts":   [{"name": "mug", "views": {"1": ["a.egoi"], "5": [...]}}],
//    "recognition":[{"id": "q0", "media": ["q0.egoi"], "concepts": ["mug"]}],
//    "multi":      [{"id": "p0", "media": [...], "pair": ["mug", "pen"],
//                    "present": true}],
//    "vqa":        [{"id": "v0", "media": [...], "concepts": ["mug"],
//                    "question": "...", "answer": "A",
//                    "choices": {"A": "red", "B": "blue"}}],
//    "captioning": [{"id": "c0", "media": [...], "concepts": ["mug"]}]}
//
// A recognition item lists the concepts it shows (possibly none); it is
// asked about every concept in the manifest. VQA items without "choices" are
// open-ended and need a judge.

#pragma once

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "ego/backend.hpp"
#include "ego/judge.hpp"
#include "ego/memory.hpp"
#include "ego/pipeline.hpp"
#include "ego/templates.hpp"
#include "ego/view.hpp"

namespace ego {

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

struct ConfusionCounts {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
  std::uint64_t tn = 0;

  void add(bool actual, bool predicted) {
    if (actual) {
      predicted ? ++tp : ++fn;
    } else {
      predicted ? ++fp : ++tn;
    }
  }

  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }

  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

// 0/0 is 0 throughout.
inline double safe_ratio(double num, double den) { return den == 0.0 ? 0.0 : num / den; }
inline double precision(const ConfusionCounts& c) { return safe_ratio(double(c.tp), double(c.tp + c.fp)); }
inline double recall(const ConfusionCounts& c) { return safe_ratio(double(c.tp), double(c.tp + c.fn)); }
inline double f1_score(double p, double r) { return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r); }

struct ConceptMetrics {
  std::string name;
  ConfusionCounts counts;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct AggregateMetrics {
  std::vector<ConceptMetrics> per_concept;  // sorted by name
  double avg_precision = 0.0;
  double avg_recall = 0.0;
  // F1 of the averaged precision and recall.
  double f1 = 0.0;
};

inline AggregateMetrics aggregate(const std::map<std::string, ConfusionCounts>& counts) {
  AggregateMetrics out;
  for (const auto& [name, c] : counts) {
    const double p = precision(c);
    const double r = recall(c);
    out.per_concept.push_back({name, c, p, r, f1_score(p, r)});
    out.avg_precision += p;
    out.avg_recall += r;
  }
  if (!out.per_concept.empty()) {
    out.avg_precision /= static_cast<double>(out.per_concept.size());
    out.avg_recall /= static_cast<double>(out.per_concept.size());
  }
  out.f1 = f1_score(out.avg_precision, out.avg_recall);
  return out;
}

// Lower-case, ASCII punctuation dropped, whitespace runs collapsed to one
// space, trimmed.
inline std::string normalize_text(std::string_view s) {
  std::string out;
  bool pending_space = false;
  for (char ch : s) {
    const auto u = static_cast<unsigned char>(ch);
    if (u < 0x80 && std::isspace(u)) {
      pending_space = !out.empty();
      continue;
    }
    if (u < 0x80 && std::ispunct(u)) continue;
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(std::tolower(u)));
  }
  return out;
}

inline bool caption_mentions(std::string_view caption, std::string_view name) {
  const auto n = normalize_text(name);
  return !n.empty() && normalize_text(caption).find(n) != std::string::npos;
}

enum class ChoiceMatch { kCorrect, kIncorrect, kAmbiguous };

// Multiple-choice grading: the reply may give the option letter ("A", "A.",
// "(A) red") or the option text. Letter and text that disagree, or text that
// matches several options, is ambiguous.
inline ChoiceMatch match_choice(std::string_view reply, const std::string& gold,
                                const std::map<std::string, std::string>& choices) {
  std::string trimmed(reply);
  const auto b = trimmed.find_first_not_of(" \t\r\n(\"'*");
  trimmed = b == std::string::npos ? std::string() : trimmed.substr(b);
  std::optional<std::string> by_letter;
  for (const auto& [letter, text] : choices) {
    if (trimmed.size() < letter.size()) continue;
    if (detail::lower(trimmed.substr(0, letter.size())) != detail::lower(letter)) continue;
    if (trimmed.size() == letter.size() || !std::isalnum(static_cast<unsigned char>(trimmed[letter.size()]))) {
      by_letter = letter;
      break;
    }
  }
  std::set<std::string> by_text;
  const auto norm_reply = normalize_text(reply);
  for (const auto& [letter, text] : choices) {
    const auto t = normalize_text(text);
    if (!t.empty() && norm_reply.find(t) != std::string::npos) by_text.insert(letter);
  }
  std::optional<std::string> pick = by_letter;
  if (!by_letter) {
    if (by_text.size() > 1) return ChoiceMatch::kAmbiguous;
    if (by_text.size() == 1) pick = *by_text.begin();
  } else if (!by_text.empty() && !by_text.contains(*by_letter)) {
    return ChoiceMatch::kAmbiguous;
  }
  return pick && detail::lower(*pick) == detail::lower(gold) ? ChoiceMatch::kCorrect : ChoiceMatch::kIncorrect;
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

struct ManifestConcept {
  std::string name;
  std::map<std::string, std::vector<std::filesystem::path>> views;
};

struct ManifestItem {
  std::string id;
  std::vector<std::filesystem::path> media;
  std::vector<std::string> concepts;  // shown (recognition, captioning) or offered (vqa)
  std::vector<std::string> pair;      // multi only
  bool present = false;               // multi only
  std::string question;
  std::string answer;
  std::map<std::string, std::string> choices;
};

struct DatasetManifest {
  std::filesystem::path base;
  std::vector<ManifestConcept> concepts;
  std::vector<ManifestItem> recognition;
  std::vector<ManifestItem> multi;
  std::vector<ManifestItem> vqa;
  std::vector<ManifestItem> captioning;

  const ManifestConcept* find(std::string_view name) const {
    for (const auto& c : concepts) {
      if (c.name == name) return &c;
    }
    return nullptr;
  }
};

inline DatasetManifest dataset_manifest_from_json(const nlohmann::json& j, std::filesystem::path base) {
  DatasetManifest m;
  m.base = std::move(base);
  try {
    if (j.value("version", 1) != 1) throw Error(ErrorCode::kManifest, "unsupported dataset manifest version");
    std::set<std::filesystem::path> reference_paths;
    for (const auto& c : j.at("concepts")) {
      ManifestConcept mc;
      mc.name = c.at("name").get<std::string>();
      if (mc.name.empty()) throw Error(ErrorCode::kManifest, "concept name must not be empty");
      if (m.find(mc.name)) throw Error(ErrorCode::kManifest, "duplicate concept '" + mc.name + "'");
      for (const auto& [split, paths] : c.at("views").items()) {
        for (const auto& p : paths) {
          mc.views[split].emplace_back(p.get<std::string>());
          reference_paths.insert(mc.views[split].back());
        }
      }
      m.concepts.push_back(std::move(mc));
    }
    auto read_items = [&](const char* key, std::vector<ManifestItem>& out) {
      if (!j.contains(key)) return;
      std::size_t n = 0;
      for (const auto& it : j.at(key)) {
        ManifestItem item;
        item.id = it.value("id", std::string(key) + std::to_string(n++));
        for (const auto& p : it.at("media")) item.media.emplace_back(p.get<std::string>());
        if (item.media.empty()) throw Error(ErrorCode::kManifest, "item '" + item.id + "' has no media");
        for (const auto& p : item.media) {
          if (reference_paths.contains(p)) {
            throw Error(ErrorCode::kManifest, "item '" + item.id + "' reuses reference view " + p.string());
          }
        }
        item.concepts = it.value("concepts", std::vector<std::string>{});
        item.pair = it.value("pair", std::vector<std::string>{});
        item.present = it.value("present", false);
        item.question = it.value("question", std::string());
        item.answer = it.value("answer", std::string());
        item.choices = it.value("choices", std::map<std::string, std::string>{});
        for (const auto& name : item.concepts) {
          if (!m.find(name)) throw Error(ErrorCode::kManifest, "item '" + item.id + "' names unknown concept " + name);
        }
        for (const auto& name : item.pair) {
          if (!m.find(name)) throw Error(ErrorCode::kManifest, "item '" + item.id + "' names unknown concept " + name);
        }
        out.push_back(std::move(item));
      }
    };
    read_items("recognition", m.recognition);
    read_items("multi", m.multi);
    read_items("vqa", m.vqa);
    read_items("captioning", m.captioning);
    for (const auto& item : m.multi) {
      if (item.pair.size() < 2) throw Error(ErrorCode::kManifest, "multi item '" + item.id + "' needs a pair");
    }
    for (const auto& item : m.vqa) {
      if (item.question.empty()) throw Error(ErrorCode::kManifest, "vqa item '" + item.id + "' has no question");
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kManifest, std::string("bad dataset manifest: ") + e.what());
  }
  return m;
}

inline DatasetManifest load_dataset_manifest(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(detail::read_file_text(path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kManifest, "bad dataset manifest " + path.string() + ": " + e.what());
  } catch (const Error&) {
    throw Error(ErrorCode::kManifest, "cannot read dataset manifest " + path.string());
  }
  return dataset_manifest_from_json(j, path.parent_path());
}

// ---------------------------------------------------------------------------
// Running
// ---------------------------------------------------------------------------

struct EvalOptions {
  std::set<TaskKind> tasks = {TaskKind::kRecognition, TaskKind::kVqa, TaskKind::kCaptioning};
  bool multi = true;
  std::string split = "1";
  MemoryBudget budget;
  std::vector<int> layers;
  SelectionMode selection = SelectionMode::kAttention;
  PromptTemplateSet templates = default_templates();
  const Judge* judge = nullptr;
  std::size_t jobs = 1;
};

struct EvalReport {
  std::string split;
  std::size_t concepts = 0;
  std::optional<AggregateMetrics> recognition;
  std::optional<AggregateMetrics> multi;
  std::optional<double> vqa_accuracy;
  std::size_t vqa_scored = 0;
  std::size_t vqa_needs_judge = 0;
  std::size_t vqa_ambiguous = 0;
  std::optional<double> captioning_recall;
  std::size_t flagged_parses = 0;
  std::size_t items_total = 0;
  std::size_t items_evaluated = 0;
  std::vector<std::string> load_errors;  // sorted
};

// Enrolls every manifest concept from the chosen split into `library`.
inline void enroll_manifest_concepts(const DatasetManifest& manifest, const Backend& backend, ConceptLibrary& library,
                                     const EvalOptions& options) {
  for (const auto& c : manifest.concepts) {
    auto it = c.views.find(options.split);
    if (it == c.views.end() || it->second.empty()) {
      throw Error(ErrorCode::kManifest, "concept '" + c.name + "' has no views in split " + options.split);
    }
    EnrollmentRequest req;
    req.name = c.name;
    req.budget = options.budget;
    req.layers = options.layers;
    req.selection = options.selection;
    for (const auto& p : it->second) {
      try {
        req.views.push_back(load_media(manifest.base / p));
      } catch (const Error& e) {
        throw Error(ErrorCode::kManifest, std::string(e.what()));
      }
      req.view_ids.push_back(p.generic_string());
    }
    enroll(req, backend, library, options.templates);
  }
}

namespace detail {

// One model call of the evaluation.
struct EvalJob {
  TaskKind task;
  bool multi = false;
  const ManifestItem* item = nullptr;
  std::vector<std::string> offered;
};

struct EvalOutcome {
  bool loaded = false;
  std::string load_error;
  TaskResult result;
};

template <typename Fn>
void parallel_for(std::size_t n, std::size_t jobs, Fn fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < jobs; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace detail

// Runs the selected tasks over a library that already holds the manifest's
// concepts. Results are independent of item order and of `jobs`.
inline EvalReport evaluate(const DatasetManifest& manifest, const Backend& backend, const ConceptLibrary& library,
                           const EvalOptions& options) {
  std::vector<detail::EvalJob> jobs;
  std::vector<std::string> all_names;
  for (const auto& c : manifest.concepts) all_names.push_back(c.name);
  const bool want_rec = options.tasks.contains(TaskKind::kRecognition);
  if (want_rec) {
    for (const auto& item : manifest.recognition) {
      for (const auto& name : all_names) jobs.push_back({TaskKind::kRecognition, false, &item, {name}});
    }
    if (options.multi) {
      for (const auto& item : manifest.multi) jobs.push_back({TaskKind::kRecognition, true, &item, item.pair});
    }
  }
  if (options.tasks.contains(TaskKind::kVqa)) {
    for (const auto& item : manifest.vqa) jobs.push_back({TaskKind::kVqa, false, &item, item.concepts});
  }
  if (options.tasks.contains(TaskKind::kCaptioning)) {
    for (const auto& item : manifest.captioning) jobs.push_back({TaskKind::kCaptioning, false, &item, item.concepts});
  }

  std::vector<detail::EvalOutcome> outcomes(jobs.size());
  const std::size_t threads = backend.supports_concurrent_calls() ? options.jobs : 1;
  detail::parallel_for(jobs.size(), threads, [&](std::size_t i) {
    const auto& job = jobs[i];
    TaskQuery q;
    q.task = job.task;
    for (const auto& name : job.offered) {
      const auto* c = library.find(name);
      detail::require(c != nullptr, ErrorCode::kManifest, "concept '" + name + "' is not enrolled");
      q.concepts.push_back(c);
    }
    if (job.task == TaskKind::kVqa) q.question = job.item->question;
    try {
      for (const auto& p : job.item->media) q.media.push_back(load_media(manifest.base / p));
    } catch (const Error& e) {
      outcomes[i].load_error = job.item->id + ": " + e.what();
      return;
    }
    outcomes[i].result = run_task(q, backend, options.templates);
    outcomes[i].loaded = true;
  });

  EvalReport report;
  report.split = options.split;
  report.concepts = manifest.concepts.size();
  std::map<std::string, ConfusionCounts> rec_counts;
  std::map<std::string, ConfusionCounts> multi_counts;
  std::size_t vqa_correct = 0;
  std::map<std::string, std::pair<std::size_t, std::size_t>> caption_groups;  // hits, total
  std::set<std::string> failed_items;
  std::set<const ManifestItem*> seen_items;
  std::set<const ManifestItem*> evaluated_items;

  if (want_rec) {
    for (const auto& name : all_names) rec_counts[name];
  }
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    const auto& job = jobs[i];
    const auto& out = outcomes[i];
    seen_items.insert(job.item);
    if (!out.loaded) {
      report.load_errors.push_back(out.load_error);
      continue;
    }
    evaluated_items.insert(job.item);
    const auto& res = out.result;
    report.flagged_parses += res.flagged();
    if (job.task == TaskKind::kRecognition && !job.multi) {
      const auto& name = job.offered.front();
      const bool actual = std::find(job.item->concepts.begin(), job.item->concepts.end(), name) != job.item->concepts.end();
      rec_counts[name].add(actual, res.recognition.front().present);
    } else if (job.task == TaskKind::kRecognition) {
      bool all = true;
      for (const auto& a : res.recognition) all = all && a.present;
      std::string key;
      for (const auto& n : job.item->pair) key += (key.empty() ? "" : "+") + n;
      multi_counts[key].add(job.item->present, all);
    } else if (job.task == TaskKind::kVqa) {
      if (!job.item->choices.empty()) {
        const auto m = match_choice(res.answer, job.item->answer, job.item->choices);
        report.vqa_ambiguous += m == ChoiceMatch::kAmbiguous;
        vqa_correct += m == ChoiceMatch::kCorrect;
        ++report.vqa_scored;
      } else if (options.judge == nullptr) {
        ++report.vqa_needs_judge;
      } else {
        vqa_correct += judge_answer(*options.judge, options.templates, job.item->question, job.item->answer, res.answer);
        ++report.vqa_scored;
      }
    } else {
      bool hit = true;
      for (const auto& n : job.item->concepts) hit = hit && caption_mentions(res.answer, n);
      std::string key;
      for (const auto& n : job.item->concepts) key += (key.empty() ? "" : "+") + n;
      auto& g = caption_groups[key];
      g.first += hit;
      ++g.second;
    }
  }

  report.items_total = seen_items.size();
  report.items_evaluated = evaluated_items.size();
  std::sort(report.load_errors.begin(), report.load_errors.end());
  report.load_errors.erase(std::unique(report.load_errors.begin(), report.load_errors.end()), report.load_errors.end());
  if (want_rec && !manifest.recognition.empty()) report.recognition = aggregate(rec_counts);
  if (want_rec && options.multi && !manifest.multi.empty()) report.multi = aggregate(multi_counts);
  if (options.tasks.contains(TaskKind::kVqa) && !manifest.vqa.empty()) {
    report.vqa_accuracy = safe_ratio(double(vqa_correct), double(report.vqa_scored));
  }
  if (options.tasks.contains(TaskKind::kCaptioning) && !manifest.captioning.empty()) {
    double sum = 0.0;
    for (const auto& [key, g] : caption_groups) sum += safe_ratio(double(g.first), double(g.second));
    report.captioning_recall = caption_groups.empty() ? 0.0 : sum / double(caption_groups.size());
  }
  return report;
}

// Enrolls the manifest's concepts into a fresh library and evaluates.
inline EvalReport run_evaluation(const DatasetManifest& manifest, const Backend& backend, const EvalOptions& options) {
  ConceptLibrary library;
  enroll_manifest_concepts(manifest, backend, library, options);
  return evaluate(manifest, backend, library, options);
}

// ---------------------------------------------------------------------------
// Report output
// ---------------------------------------------------------------------------

inline nlohmann::json metrics_to_json(const AggregateMetrics& m) {
  nlohmann::json per = nlohmann::json::array();
  for (const auto& c : m.per_concept) {
    per.push_back({{"name", c.name},
                   {"tp", c.counts.tp},
                   {"fp", c.counts.fp},
                   {"fn", c.counts.fn},
                   {"tn", c.counts.tn},
                   {"precision", c.precision},
                   {"recall", c.recall},
                   {"f1", c.f1}});
  }
  return {{"per_concept", per},
          {"avg_precision", m.avg_precision},
          {"avg_recall", m.avg_recall},
          {"f1", m.f1}};
}

inline nlohmann::json report_to_json(const EvalReport& r) {
  nlohmann::json j = {{"version", 1},
                      {"split", r.split},
                      {"concepts", r.concepts},
                      {"flagged_parses", r.flagged_parses},
                      {"items_total", r.items_total},
                      {"items_evaluated", r.items_evaluated},
                      {"load_errors", r.load_errors}};
  if (r.recognition) j["recognition"] = metrics_to_json(*r.recognition);
  if (r.multi) j["multi"] = metrics_to_json(*r.multi);
  if (r.vqa_accuracy) {
    j["vqa"] = {{"accuracy", *r.vqa_accuracy},
                {"scored", r.vqa_scored},
                {"needs_judge", r.vqa_needs_judge},
                {"ambiguous", r.vqa_ambiguous}};
  }
  if (r.captioning_recall) j["captioning"] = {{"recall", *r.captioning_recall}};
  return j;
}

// Fixed-width summary: one row per metric family, then per-concept counts.
inline std::string report_table(const EvalReport& r) {
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof line, "%-24s %9s %9s %9s\n", "Task", "Precision", "Recall", "F1");
  os << line;
  auto row = [&](const char* name, const AggregateMetrics& m) {
    std::snprintf(line, sizeof line, "%-24s %9.3f %9.3f %9.3f\n", name, m.avg_precision, m.avg_recall, m.f1);
    os << line;
  };
  if (r.recognition) row("recognition", *r.recognition);
  if (r.multi) row("recognition (multi)", *r.multi);
  if (r.vqa_accuracy) {
    std::snprintf(line, sizeof line, "%-24s %9s %9s %9.3f  (accuracy, %zu needs judge)\n", "vqa", "-", "-",
                  *r.vqa_accuracy, r.vqa_needs_judge);
    os << line;
  }
  if (r.captioning_recall) {
    std::snprintf(line, sizeof line, "%-24s %9s %9.3f %9s\n", "captioning", "-", *r.captioning_recall, "-");
    os << line;
  }
  if (r.recognition) {
    os << "\n";
    std::snprintf(line, sizeof line, "%-24s %5s %5s %5s %5s %9s %9s %9s\n", "Concept", "TP", "FP", "FN", "TN",
                  "Precision", "Recall", "F1");
    os << line;
    for (const auto& c : r.recognition->per_concept) {
      std::snprintf(line, sizeof line, "%-24s %5llu %5llu %5llu %5llu %9.3f %9.3f %9.3f\n", c.name.c_str(),
                    static_cast<unsigned long long>(c.counts.tp), static_cast<unsigned long long>(c.counts.fp),
                    static_cast<unsigned long long>(c.counts.fn), static_cast<unsigned long long>(c.counts.tn),
                    c.precision, c.recall, c.f1);
      os << line;
    }
  }
  std::snprintf(line, sizeof line, "\nitems %zu/%zu evaluated, %zu flagged parses\n", r.items_evaluated, r.items_total,
                r.flagged_parses);
  os << line;
  return os.str();
}

}  // namespace ego
