// Copyright 2026 The ego Authors
// SPDX-License-Identifier: Apache-2.0

// ego: calibrate layers, enroll concepts, run tasks, evaluate, inspect.
//
// Exit codes: 0 ok, 1 usage, 2 manifest, 3 backend, 4 duplicate concept,
// 5 enrollment failure, 6 context overflow, 7 library or file I/O.

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ego.hpp"
#include "ego/http_judge.hpp"

namespace {

using namespace ego;

enum Exit { kOk = 0, kUsage = 1, kManifestExit = 2, kBackendExit = 3, kDuplicate = 4, kEnrollExit = 5,
            kOverflow = 6, kLibraryExit = 7 };

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return kUsage;
    case ErrorCode::kManifest: return kManifestExit;
    case ErrorCode::kContractViolation:
    case ErrorCode::kMissingCapture:
    case ErrorCode::kNoScript:
    case ErrorCode::kBackend:
    case ErrorCode::kCalibration: return kBackendExit;
    case ErrorCode::kConflict: return kDuplicate;
    case ErrorCode::kEmptyKeywords:
    case ErrorCode::kEnrollment: return kEnrollExit;
    case ErrorCode::kContextLimit: return kOverflow;
    case ErrorCode::kBadMagic:
    case ErrorCode::kUnsupportedVersion:
    case ErrorCode::kTruncated:
    case ErrorCode::kChecksumMismatch:
    case ErrorCode::kBackendMismatch:
    case ErrorCode::kIo: return kLibraryExit;
  }
  return kBackendExit;
}

// Thrown for usage problems found after parsing.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Effective configuration. Precedence: flags > environment > config file >
// defaults.
struct RunConfig {
  std::string backend = "toy";
  std::string script;
  std::uint64_t seed = 0;
  std::optional<std::size_t> k_max;
  std::optional<double> fraction;
  std::vector<int> layers;
  std::string calibration;
  std::string templates;
  std::string library = "ego-library.egoc";
  std::size_t top_l = kDefaultTopL;
  std::optional<std::size_t> filter_m;
  std::size_t jobs = 1;
  std::string judge_endpoint;
  std::string judge_model = "gpt-3.5-turbo";
  std::string judge_key;
  bool verbose = false;

  nlohmann::json to_json() const {
    nlohmann::json j = {{"backend", backend},   {"script", script},       {"seed", seed},
                        {"layers", layers},     {"calibration", calibration}, {"templates", templates},
                        {"library", library},   {"top_l", top_l},         {"jobs", jobs},
                        {"judge_endpoint", judge_endpoint}, {"judge_model", judge_model}};
    if (k_max) j["k_max"] = *k_max;
    if (fraction) j["fraction"] = *fraction;
    if (filter_m) j["filter_m"] = *filter_m;
    j["judge_key"] = judge_key.empty() ? "" : "<set>";
    return j;
  }
};

void apply_config_file(RunConfig& c, const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(detail::read_file_text(path));
  } catch (const nlohmann::json::exception& e) {
    throw UsageError("bad config file " + path + ": " + e.what());
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  try {
    c.backend = j.value("backend", c.backend);
    c.script = j.value("script", c.script);
    c.seed = j.value("seed", c.seed);
    if (j.contains("k_max")) c.k_max = j.at("k_max").get<std::size_t>();
    if (j.contains("fraction")) c.fraction = j.at("fraction").get<double>();
    c.layers = j.value("layers", c.layers);
    c.calibration = j.value("calibration", c.calibration);
    c.templates = j.value("templates", c.templates);
    c.library = j.value("library", c.library);
    c.top_l = j.value("top_l", c.top_l);
    if (j.contains("filter_m")) c.filter_m = j.at("filter_m").get<std::size_t>();
    c.jobs = j.value("jobs", c.jobs);
    c.judge_endpoint = j.value("judge_endpoint", c.judge_endpoint);
    c.judge_model = j.value("judge_model", c.judge_model);
    c.verbose = j.value("verbose", c.verbose);
  } catch (const nlohmann::json::exception& e) {
    throw UsageError("bad config file " + path + ": " + e.what());
  }
}

void apply_environment(RunConfig& c) {
  if (const char* v = std::getenv("EGO_LIBRARY"); v && *v) c.library = v;
  if (const char* v = std::getenv("EGO_TEMPLATES"); v && *v) c.templates = v;
  if (const char* v = std::getenv("EGO_JUDGE_KEY"); v && *v) c.judge_key = v;
}

// Raw flag values; an option only overrides the config when it was given.
struct Flags {
  std::string config;
  std::string backend, script, calibration, templates, library, judge_endpoint, judge_model;
  std::uint64_t seed = 0;
  std::size_t k_max = 0, top_l = 0, filter_m = 0, jobs = 0;
  double fraction = 0.0;
  std::string layers;
  bool verbose = false;
};

std::vector<int> parse_layers(const std::string& s) {
  std::vector<int> out;
  std::stringstream in(s);
  std::string part;
  while (std::getline(in, part, ',')) {
    if (part.empty()) continue;
    try {
      std::size_t used = 0;
      const int v = std::stoi(part, &used);
      if (used != part.size() || v < 0) throw std::invalid_argument(part);
      out.push_back(v);
    } catch (const std::exception&) {
      throw UsageError("--layers expects comma-separated layer indices, got '" + s + "'");
    }
  }
  if (out.empty()) throw UsageError("--layers is empty");
  return out;
}

// --- backends ----------------------------------------------------------------

std::unique_ptr<Backend> make_backend(const RunConfig& c) {
  BackendConfig base;
  base.seed = c.seed;
  if (c.backend == "toy") return std::make_unique<ToyBackend>(base);
  if (c.backend == "scripted") {
    if (c.script.empty()) throw UsageError("--backend scripted needs --script FILE");
    return std::make_unique<ScriptedBackend>(load_scripted_backend(c.script, base));
  }
  if (c.backend == "planted") return std::make_unique<ScriptedBackend>(make_planted_backend(c.seed));
  if (c.backend.rfind("adapter:", 0) == 0) return std::make_unique<AdapterBackend>(c.backend.substr(8));
  throw UsageError("unknown backend '" + c.backend + "' (toy, scripted, planted, adapter:<session dir>)");
}

PromptTemplateSet templates_for(const RunConfig& c) {
  return c.templates.empty() ? default_templates() : load_templates(c.templates);
}

MemoryBudget budget_for(const RunConfig& c) {
  if (c.k_max && c.fraction) throw UsageError("--k-max and --fraction are mutually exclusive");
  if (c.fraction) {
    if (!(*c.fraction > 0.0 && *c.fraction <= 100.0)) throw UsageError("--fraction must be in (0, 100]");
    return MemoryBudget::fraction(*c.fraction);
  }
  if (c.k_max) {
    if (*c.k_max < 1) throw UsageError("--k-max must be >= 1");
    return MemoryBudget::absolute(*c.k_max);
  }
  return {};
}

std::vector<int> layers_for(const RunConfig& c, const Backend& backend) {
  if (!c.layers.empty() && !c.calibration.empty()) throw UsageError("--layers and --calibration are mutually exclusive");
  std::vector<int> layers = c.layers;
  if (!c.calibration.empty()) {
    const auto cal = load_calibration(c.calibration);
    const auto fp = fingerprint_hex(backend.fingerprint());
    if (!cal.backend_fingerprint.empty() && cal.backend_fingerprint != fp) {
      std::cerr << "warning: " << c.calibration << " was calibrated on backend " << cal.backend_fingerprint
                << ", current backend is " << fp << "\n";
    }
    layers = cal.selected;
  }
  if (layers.empty()) throw UsageError("a layer set is required: pass --layers or --calibration");
  for (int l : layers) {
    if (l < 0 || static_cast<std::uint32_t>(l) >= backend.config().layers) {
      throw UsageError("layer " + std::to_string(l) + " is out of range for a " +
                       std::to_string(backend.config().layers) + "-layer backend");
    }
  }
  return layers;
}

ConceptLibrary open_library(const std::string& path, bool must_exist) {
  if (!std::filesystem::exists(path)) {
    if (must_exist) throw Error(ErrorCode::kIo, "library " + path + " does not exist");
    return {};
  }
  return load_library(path);
}

std::string join_indices(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? " " : "") + std::to_string(v[i]);
  return out;
}

std::string format_alpha(double a) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", a);
  return buf;
}

// --- commands ----------------------------------------------------------------

struct CalibrateArgs {
  std::string manifest;
  std::string out = "calibration.json";
  std::size_t max_samples = kDefaultCalibrationSamples;
  std::string candidates;
};

int cmd_calibrate(const RunConfig& c, const CalibrateArgs& a) {
  const auto samples = load_calibration_manifest(a.manifest, a.max_samples);
  auto backend = make_backend(c);
  CalibrationOptions opt;
  opt.budget = c.k_max || c.fraction ? budget_for(c) : opt.budget;
  if (!a.candidates.empty()) opt.candidate_layers = parse_layers(a.candidates);
  opt.templates = templates_for(c);
  opt.jobs = c.jobs;
  CalibrationResult result;
  result.ranking = rank_layers(*backend, samples, opt);
  if (c.top_l < 1) throw UsageError("--top-l must be >= 1");
  const std::size_t l = std::min(c.top_l, result.ranking.order.size());
  if (l < c.top_l) std::cerr << "note: only " << l << " candidate layers, keeping all of them\n";
  result.selected = select_top_l(result.ranking, l);
  result.backend_fingerprint = fingerprint_hex(backend->fingerprint());
  detail::write_file_text(a.out, calibration_to_json(result).dump(2) + "\n");

  std::printf("%-6s %-6s %s\n", "rank", "layer", "mean overlap");
  for (std::size_t i = 0; i < result.ranking.order.size(); ++i) {
    const int layer = result.ranking.order[i];
    std::printf("%-6zu %-6d %.4f\n", i + 1, layer, result.ranking.score(layer));
  }
  std::printf("samples used %zu, skipped %zu\n", result.ranking.samples_used, result.ranking.samples_skipped);
  std::string chosen;
  for (int v : result.selected) chosen += (chosen.empty() ? "" : ",") + std::to_string(v);
  std::printf("selected layers %s -> %s\n", chosen.c_str(), a.out.c_str());
  return kOk;
}

struct EnrollArgs {
  std::string name;
  std::vector<std::string> views;
  std::string dump_selection;
  bool uniform = false;
};

void write_selection_dump(const std::string& path, const EnrollmentResult& r, const PatchGrid& grid) {
  std::ostringstream os;
  os << "# concept " << r.memory.name << "\n# grid " << grid.rows << "x" << grid.cols << "\n";
  for (const auto& v : r.views) {
    os << "view " << v.view_id << " k_c " << v.k_c << " alpha " << format_alpha(v.alpha.alpha) << "\n";
    os << "indices " << join_indices(v.indices) << "\n";
    std::vector<char> cells(grid.count(), '.');
    for (auto i : v.indices) {
      if (i < cells.size()) cells[i] = '#';
    }
    for (std::uint32_t row = 0; row < grid.rows; ++row) {
      os << std::string(cells.begin() + row * grid.cols, cells.begin() + (row + 1) * grid.cols) << "\n";
    }
  }
  detail::write_file_text(path, os.str());
}

int cmd_enroll(const RunConfig& c, const EnrollArgs& a) {
  auto library = open_library(c.library, false);
  if (library.find(a.name) != nullptr) {
    std::cerr << "error: concept '" << a.name << "' already exists in " << c.library << "\n";
    return kDuplicate;
  }
  auto backend = make_backend(c);
  EnrollmentRequest req;
  req.name = a.name;
  req.budget = budget_for(c);
  req.layers = layers_for(c, *backend);
  req.selection = a.uniform ? SelectionMode::kUniform : SelectionMode::kAttention;
  for (const auto& v : a.views) {
    req.views.push_back(load_media(v));
    req.view_ids.push_back(std::filesystem::path(v).filename().string());
  }
  const auto result = enroll(req, *backend, library, templates_for(c));
  save_library(library, c.library);

  for (const auto& v : result.views) {
    std::printf("view %s: alpha %s, K_c %zu, kept [%s]\n", v.view_id.c_str(), format_alpha(v.alpha.alpha).c_str(),
                v.k_c, join_indices(v.indices).c_str());
  }
  std::printf("enrolled '%s': %zu tokens from %zu view(s); library %s now holds %zu concept(s)\n", a.name.c_str(),
              result.memory.tokens.rows(), result.views.size(), c.library.c_str(), library.size());
  if (!a.dump_selection.empty()) write_selection_dump(a.dump_selection, result, backend->config().patch_grid);
  return kOk;
}

struct RunArgs {
  std::string task = "recognition";
  std::vector<std::string> media;
  std::optional<std::string> question;
  bool no_concepts = false;
  std::size_t max_new_tokens = 64;
};

int cmd_run(const RunConfig& c, const RunArgs& a) {
  const TaskKind task = parse_task_kind(a.task);
  if (task == TaskKind::kVqa && (!a.question || a.question->empty())) throw UsageError("vqa needs --question");
  if (task != TaskKind::kVqa && a.question) throw UsageError("--question is only valid with --task vqa");
  ConceptLibrary library;
  if (!a.no_concepts) {
    library = open_library(c.library, true);
    if (library.empty()) throw Error(ErrorCode::kIo, "library " + c.library + " is empty (use --no-concepts)");
  }
  auto backend = make_backend(c);
  const auto templates = templates_for(c);
  TaskQuery query;
  query.task = task;
  query.question = a.question;
  query.max_new_tokens = a.max_new_tokens;
  for (const auto& m : a.media) query.media.push_back(load_media(m));
  const auto visuals = encode_query_media(*backend, query.media);
  if (!a.no_concepts) query.concepts = concepts_for_query(library, visuals, c.filter_m);

  const auto result = run_task_encoded(query, visuals, *backend, templates);
  if (c.verbose) std::cerr << "prompt tokens " << result.prompt_tokens << "\n";
  std::istringstream raw(result.raw);
  for (std::string line; std::getline(raw, line);) std::printf("> %s\n", line.c_str());
  if (task == TaskKind::kRecognition) {
    for (const auto& r : result.recognition) {
      std::printf("%s: %s%s\n", r.concept_name.c_str(), r.present ? "yes" : "no", r.flagged ? " (unparsed)" : "");
    }
  } else {
    std::printf("answer: %s\n", result.answer.c_str());
  }
  return kOk;
}

struct EvalArgs {
  std::string manifest;
  std::vector<std::string> tasks;
  std::string split = "1";
  std::string out = "ego-report";
  bool no_multi = false;
  bool uniform = false;
};

int cmd_eval(const RunConfig& c, const EvalArgs& a) {
  const auto manifest = load_dataset_manifest(a.manifest);
  auto backend = make_backend(c);
  EvalOptions opt;
  if (!a.tasks.empty()) {
    opt.tasks.clear();
    for (const auto& t : a.tasks) opt.tasks.insert(parse_task_kind(t));
  }
  opt.multi = !a.no_multi;
  opt.split = a.split;
  opt.budget = budget_for(c);
  opt.layers = layers_for(c, *backend);
  opt.selection = a.uniform ? SelectionMode::kUniform : SelectionMode::kAttention;
  opt.templates = templates_for(c);
  opt.jobs = std::max<std::size_t>(1, c.jobs);
  std::unique_ptr<Judge> judge;
  if (!c.judge_endpoint.empty()) {
    judge = std::make_unique<ChatCompletionJudge>(http_transport(c.judge_endpoint, c.judge_key), c.judge_model);
    opt.judge = judge.get();
  }
  const auto report = run_evaluation(manifest, *backend, opt);
  const auto table = report_table(report);
  std::filesystem::create_directories(a.out);
  detail::write_file_text(std::filesystem::path(a.out) / "report.json", report_to_json(report).dump(2) + "\n");
  detail::write_file_text(std::filesystem::path(a.out) / "report.txt", table);
  std::fputs(table.c_str(), stdout);
  for (const auto& e : report.load_errors) std::cerr << "load error: " << e << "\n";
  return kOk;
}

struct InspectArgs {
  bool json = false;
};

int cmd_inspect(const RunConfig& c, const InspectArgs& a) {
  const auto library = open_library(c.library, true);
  if (a.json) {
    nlohmann::json out = {{"library", c.library}, {"format_version", library.format_version()}};
    nlohmann::json concepts = nlohmann::json::array();
    for (const auto& m : library.concepts()) {
      nlohmann::json views = nlohmann::json::array();
      for (const auto& v : m.views) {
        views.push_back({{"view", v.view_id}, {"k_c", v.k_c}, {"alpha", v.alpha}, {"indices", v.indices},
                         {"keywords", v.keywords}});
      }
      concepts.push_back({{"name", m.name}, {"rows", m.tokens.rows()}, {"dim", m.dim()},
                          {"backend", fingerprint_hex(m.backend_fingerprint)}, {"views", views}});
    }
    out["concepts"] = concepts;
    std::printf("%s\n", out.dump(2).c_str());
    return kOk;
  }
  std::printf("library %s: %zu concept(s), format %u.%u\n", c.library.c_str(), library.size(),
              library.format_version() >> 16, library.format_version() & 0xffffu);
  for (const auto& m : library.concepts()) {
    std::printf("%s: %zu tokens x %zu, %zu view(s), backend %s\n", m.name.c_str(), m.tokens.rows(), m.dim(),
                m.views.size(), fingerprint_hex(m.backend_fingerprint).c_str());
    for (const auto& v : m.views) {
      std::string kw;
      for (const auto& k : v.keywords) kw += (kw.empty() ? "" : ", ") + k;
      std::printf("  %s: alpha %s, K_c %zu, kept [%s], keywords [%s]\n", v.view_id.c_str(),
                  format_alpha(v.alpha).c_str(), v.k_c, join_indices(v.indices).c_str(), kw.c_str());
    }
  }
  return kOk;
}

struct SynthArgs {
  std::string dir;
  PlantedSuiteOptions options;
};

int cmd_synth(const RunConfig& c, SynthArgs a, bool seed_given) {
  if (seed_given) a.options.seed = c.seed;
  std::filesystem::create_directories(a.dir);
  write_planted_suite(make_planted_suite(a.options), a.dir);
  std::printf("wrote planted suite (%zu concepts, %zu views, seed %llu) to %s\n", a.options.concepts,
              a.options.views, static_cast<unsigned long long>(a.options.seed), a.dir.c_str());
  std::printf("  dataset     %s\n  calibration %s\n",
              (std::filesystem::path(a.dir) / "dataset.json").string().c_str(),
              (std::filesystem::path(a.dir) / "calibration.json").string().c_str());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ego: personalized concept memories from attention-selected visual tokens"};
  app.require_subcommand(1);
  app.fallthrough();
  app.footer(
      "Exit codes: 0 ok, 1 usage, 2 manifest, 3 backend, 4 duplicate concept, 5 enrollment failure,\n"
      "6 context overflow, 7 library or file I/O.\n"
      "Environment: EGO_LIBRARY, EGO_TEMPLATES, EGO_JUDGE_KEY. Precedence: flags > environment >\n"
      "--config file > defaults.");

  Flags f;
  auto* o_config = app.add_option("--config", f.config, "JSON config file mirroring the run configuration");
  auto* o_backend =
      app.add_option("--backend", f.backend, "toy | scripted | planted | adapter:<session dir> (default toy)");
  auto* o_script = app.add_option("--script", f.script, "Reply script for --backend scripted");
  auto* o_seed = app.add_option("--seed", f.seed, "Seed for the backend and synthetic data");
  auto* o_kmax = app.add_option("--k-max", f.k_max, "Per-view token cap K (default 50)");
  auto* o_fraction = app.add_option("--fraction", f.fraction, "Per-view cap as a percentage of visual tokens");
  o_kmax->excludes(o_fraction);
  auto* o_layers = app.add_option("--layers", f.layers, "Comma-separated layer set, e.g. 2,5,7");
  auto* o_calibration = app.add_option("--calibration", f.calibration, "Calibration file supplying the layer set");
  o_layers->excludes(o_calibration);
  auto* o_templates = app.add_option("--templates", f.templates, "Prompt template file (env EGO_TEMPLATES)");
  auto* o_library = app.add_option("--library", f.library, "Concept library file (env EGO_LIBRARY)");
  auto* o_topl = app.add_option("--top-l", f.top_l, "Layers kept by calibrate (default 5)");
  auto* o_filter = app.add_option("--filter-m", f.filter_m, "Offer only the m concepts most similar to the query");
  auto* o_jobs = app.add_option("--jobs", f.jobs, "Parallel queries for calibrate and eval");
  auto* o_judge = app.add_option("--judge-endpoint", f.judge_endpoint,
                                 "http:// chat-completion endpoint grading open-ended VQA (key: EGO_JUDGE_KEY)");
  auto* o_judge_model = app.add_option("--judge-model", f.judge_model, "Model name sent to the judge endpoint");
  app.add_flag("-v,--verbose", f.verbose, "Print the effective configuration");

  CalibrateArgs calibrate;
  auto* sc_cal = app.add_subcommand("calibrate", "Rank layers by mask overlap and write a calibration file");
  sc_cal->add_option("manifest", calibrate.manifest, "Calibration manifest")->required();
  sc_cal->add_option("-o,--out", calibrate.out, "Output file")->capture_default_str();
  sc_cal->add_option("--max-samples", calibrate.max_samples, "Use at most this many samples")->capture_default_str();
  sc_cal->add_option("--candidates", calibrate.candidates, "Candidate layers (default: all)");

  EnrollArgs enroll_args;
  auto* sc_enroll = app.add_subcommand("enroll", "Add a concept to the library from one or more views");
  sc_enroll->add_option("name", enroll_args.name, "Concept name")->required();
  sc_enroll->add_option("views", enroll_args.views, "View images (.egoi) or token tensors (.json)")->required();
  sc_enroll->add_option("--dump-selection", enroll_args.dump_selection, "Write the kept patch indices per view");
  sc_enroll->add_flag("--uniform", enroll_args.uniform, "Keep evenly spaced patches instead of attended ones");

  RunArgs run_args;
  std::string question;
  auto* sc_run = app.add_subcommand("run", "Run one task over an image or the frames of a video");
  sc_run->add_option("media", run_args.media, "Image, or video frames in order")->required();
  sc_run->add_option("--task", run_args.task, "recognition | vqa | captioning")
      ->check(CLI::IsMember({"recognition", "vqa", "captioning"}))
      ->capture_default_str();
  auto* o_question = sc_run->add_option("--question", question, "Question for --task vqa");
  sc_run->add_flag("--no-concepts", run_args.no_concepts, "Offer no concepts (plain model)");
  sc_run->add_option("--max-new-tokens", run_args.max_new_tokens, "Reply length cap")->capture_default_str();

  EvalArgs eval_args;
  auto* sc_eval = app.add_subcommand("eval", "Evaluate a dataset manifest and write report files");
  sc_eval->add_option("manifest", eval_args.manifest, "Dataset manifest")->required();
  sc_eval->add_option("--task", eval_args.tasks, "Limit to these tasks (repeatable)")
      ->check(CLI::IsMember({"recognition", "vqa", "captioning"}));
  sc_eval->add_option("--split", eval_args.split, "Reference-view split")->capture_default_str();
  sc_eval->add_option("-o,--out", eval_args.out, "Report directory")->capture_default_str();
  sc_eval->add_flag("--no-multi", eval_args.no_multi, "Skip multi-concept recognition");
  sc_eval->add_flag("--uniform", eval_args.uniform, "Uniform patch selection baseline");

  InspectArgs inspect_args;
  auto* sc_inspect = app.add_subcommand("inspect", "Describe the concepts in a library");
  sc_inspect->add_flag("--json", inspect_args.json, "JSON output");

  SynthArgs synth_args;
  auto* sc_synth = app.add_subcommand("synth", "Write the planted-concept suite (use with --backend planted)");
  sc_synth->add_option("dir", synth_args.dir, "Output directory")->required();
  sc_synth->add_option("--concepts", synth_args.options.concepts, "2 to 4")->capture_default_str();
  sc_synth->add_option("--views", synth_args.options.views, "Reference views per concept")->capture_default_str();
  sc_synth->add_option("--queries", synth_args.options.queries, "Held-out images per concept")->capture_default_str();
  sc_synth->add_option("--negatives", synth_args.options.negatives, "Images with no concept")->capture_default_str();
  sc_synth->add_option("--samples", synth_args.options.calibration_samples, "Calibration samples")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }

  try {
    RunConfig config;
    if (*o_config) apply_config_file(config, f.config);
    apply_environment(config);
    if (*o_backend) config.backend = f.backend;
    if (*o_script) config.script = f.script;
    if (*o_seed) config.seed = f.seed;
    if (*o_kmax) config.k_max = f.k_max, config.fraction.reset();
    if (*o_fraction) config.fraction = f.fraction, config.k_max.reset();
    if (*o_layers) config.layers = parse_layers(f.layers), config.calibration.clear();
    if (*o_calibration) config.calibration = f.calibration, config.layers.clear();
    if (*o_templates) config.templates = f.templates;
    if (*o_library) config.library = f.library;
    if (*o_topl) config.top_l = f.top_l;
    if (*o_filter) config.filter_m = f.filter_m;
    if (*o_jobs) config.jobs = f.jobs;
    if (*o_judge) config.judge_endpoint = f.judge_endpoint;
    if (*o_judge_model) config.judge_model = f.judge_model;
    if (f.verbose) config.verbose = true;
    if (config.verbose) std::cerr << "effective config: " << config.to_json().dump() << "\n";

    if (*sc_cal) return cmd_calibrate(config, calibrate);
    if (*sc_enroll) return cmd_enroll(config, enroll_args);
    if (*sc_run) {
      if (*o_question) run_args.question = question;
      return cmd_run(config, run_args);
    }
    if (*sc_eval) return cmd_eval(config, eval_args);
    if (*sc_inspect) return cmd_inspect(config, inspect_args);
    if (*sc_synth) return cmd_synth(config, synth_args, static_cast<bool>(*o_seed));
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const ContextLimitError& e) {
    std::cerr << "error: context overflow: prompt needs " << e.required() << " tokens, limit " << e.limit()
              << ", over by " << e.overflow() << "\n";
    return kOverflow;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kLibraryExit;
  }
  return kUsage;
}
