// Copyright 2026 The ego Authors
// SPDX-License-Identifier: Apache-2.0

// Layer calibration: for samples with known subject masks, measure how well
// each layer's keyword attention lands on the subject and rank the layers.

#pragma once

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <numeric>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "ego/attention.hpp"
#include "ego/backend.hpp"
#include "ego/detail/binary_io.hpp"
#include "ego/memory.hpp"
#include "ego/templates.hpp"
#include "ego/view.hpp"

namespace ego {

// Boolean grid at patch resolution; true marks a subject patch.
class PatchMask {
 public:
  PatchMask() = default;
  PatchMask(std::uint32_t rows, std::uint32_t cols, std::vector<std::uint8_t> cells = {})
      : rows_(rows), cols_(cols), cells_(std::move(cells)) {
    if (cells_.empty()) cells_.assign(static_cast<std::size_t>(rows) * cols, 0);
    detail::require(cells_.size() == static_cast<std::size_t>(rows) * cols, ErrorCode::kInvalidArgument,
                    "mask cell count does not match its shape");
    for (auto c : cells_) {
      detail::require(c <= 1, ErrorCode::kInvalidArgument, "mask cells must be 0 or 1");
    }
  }

  std::uint32_t rows() const noexcept { return rows_; }
  std::uint32_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return cells_.size(); }
  bool operator[](std::size_t index) const { return cells_[index] != 0; }
  bool at(std::uint32_t r, std::uint32_t c) const { return cells_[static_cast<std::size_t>(r) * cols_ + c] != 0; }
  void set(std::uint32_t r, std::uint32_t c, bool v) { cells_[static_cast<std::size_t>(r) * cols_ + c] = v ? 1 : 0; }
  std::size_t count() const { return static_cast<std::size_t>(std::count(cells_.begin(), cells_.end(), 1)); }
  std::span<const std::uint8_t> cells() const noexcept { return cells_; }

  friend bool operator==(const PatchMask&, const PatchMask&) = default;

 private:
  std::uint32_t rows_ = 0;
  std::uint32_t cols_ = 0;
  std::vector<std::uint8_t> cells_;
};

inline constexpr char kMaskMagic[4] = {'E', 'G', 'O', 'M'};

inline std::vector<std::uint8_t> encode_mask_file(const PatchMask& mask) {
  detail::ByteWriter w;
  w.raw(std::string_view(kMaskMagic, 4));
  w.u32(mask.rows());
  w.u32(mask.cols());
  w.raw(mask.cells());
  return std::move(w.bytes());
}

inline PatchMask decode_mask_file(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes);
  if (bytes.size() < 4 || r.str(4) != std::string_view(kMaskMagic, 4)) {
    throw Error(ErrorCode::kBadMagic, "not a mask file");
  }
  const std::uint32_t rows = r.u32();
  const std::uint32_t cols = r.u32();
  const auto cells = r.bytes(static_cast<std::size_t>(rows) * cols);
  detail::require(r.remaining() == 0, ErrorCode::kInvalidArgument, "trailing bytes in mask file");
  return PatchMask(rows, cols, {cells.begin(), cells.end()});
}

inline void save_mask(const PatchMask& mask, const std::filesystem::path& path) {
  detail::write_file_bytes(path, encode_mask_file(mask));
}

inline PatchMask load_mask(const std::filesystem::path& path) { return decode_mask_file(detail::read_file_bytes(path)); }

// Pixel mask (height x width, row-major, nonzero = subject) to patch
// resolution: a patch is in the mask when at least half its pixels are.
inline PatchMask downsample_mask(std::span<const std::uint8_t> pixels, std::uint32_t height, std::uint32_t width,
                                 PatchGrid grid) {
  detail::require(pixels.size() == static_cast<std::size_t>(height) * width, ErrorCode::kInvalidArgument,
                  "pixel mask size does not match its shape");
  detail::require(height % grid.rows == 0 && width % grid.cols == 0, ErrorCode::kInvalidArgument,
                  "mask dimensions are not divisible by the patch grid");
  const std::uint32_t ph = height / grid.rows;
  const std::uint32_t pw = width / grid.cols;
  PatchMask out(grid.rows, grid.cols);
  for (std::uint32_t r = 0; r < grid.rows; ++r) {
    for (std::uint32_t c = 0; c < grid.cols; ++c) {
      std::size_t on = 0;
      for (std::uint32_t y = r * ph; y < (r + 1) * ph; ++y) {
        for (std::uint32_t x = c * pw; x < (c + 1) * pw; ++x) on += pixels[static_cast<std::size_t>(y) * width + x] != 0;
      }
      out.set(r, c, 2 * on >= static_cast<std::size_t>(ph) * pw);
    }
  }
  return out;
}

// |selected and in mask| / |selected|.
inline double patch_mask_overlap(std::span<const std::size_t> selected, const PatchMask& mask) {
  detail::require(!selected.empty(), ErrorCode::kInvalidArgument, "empty selection");
  std::size_t hits = 0;
  for (std::size_t idx : selected) {
    detail::require(idx < mask.size(), ErrorCode::kContractViolation, "selected index outside the patch grid");
    hits += mask[idx];
  }
  return static_cast<double>(hits) / static_cast<double>(selected.size());
}

struct CalibrationSample {
  Media media;
  PatchMask mask;
  std::string category;
};

struct LayerRanking {
  // Candidate layers, ascending, with their mean overlap.
  std::vector<int> layers;
  std::vector<double> mean_overlap;
  // Layers by descending score; ties go to the lower layer.
  std::vector<int> order;
  std::size_t samples_used = 0;
  std::size_t samples_skipped = 0;
  // Overlap per used sample (in sample order) and candidate layer.
  std::vector<std::vector<double>> per_sample;

  double score(int layer) const {
    auto it = std::find(layers.begin(), layers.end(), layer);
    detail::require(it != layers.end(), ErrorCode::kInvalidArgument, "layer not in ranking");
    return mean_overlap[static_cast<std::size_t>(it - layers.begin())];
  }
};

inline constexpr std::size_t kDefaultCalibrationSamples = 64;
inline constexpr std::size_t kDefaultTopL = 5;

struct CalibrationOptions {
  MemoryBudget budget = MemoryBudget::fraction(20.0);
  // Empty means every layer of the backend.
  std::vector<int> candidate_layers;
  PromptTemplateSet templates = default_templates();
  std::size_t jobs = 1;
};

// Overlap of each candidate layer's top-K selection with the sample's mask,
// scoring every layer on its own. Returns nullopt when the sample yields no
// usable keywords.
inline std::optional<std::vector<double>> sample_layer_overlaps(const Backend& backend,
                                                                const CalibrationSample& sample,
                                                                std::span<const int> layers,
                                                                const CalibrationOptions& options) {
  const auto& grid = backend.config().patch_grid;
  detail::require(sample.mask.rows() == grid.rows && sample.mask.cols() == grid.cols, ErrorCode::kInvalidArgument,
                  "mask shape does not match the patch grid");
  detail::require(sample.mask.count() >= 1, ErrorCode::kInvalidArgument, "mask has no subject patch");
  const TokenMatrix visual = encode_media(backend, sample.media);
  KeywordCapture capture;
  try {
    capture = capture_keyword_attention(backend, visual, options.templates, layers);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kEmptyKeywords || e.code() == ErrorCode::kMissingCapture) return std::nullopt;
    throw;
  }
  const std::size_t k = options.budget.cap(visual.rows());
  std::vector<double> out;
  for (int layer : layers) {
    const int one[] = {layer};
    const auto importance = importance_scores(capture.stack.select_layers(one));
    out.push_back(patch_mask_overlap(top_k_ascending(importance.values(), k), sample.mask));
  }
  return out;
}

// Mean overlap per layer over all usable samples, accumulated in sample order.
inline LayerRanking rank_layers(const Backend& backend, std::span<const CalibrationSample> samples,
                                const CalibrationOptions& options = {}) {
  detail::require(!samples.empty(), ErrorCode::kCalibration, "calibration needs at least one sample");
  std::vector<int> layers = options.candidate_layers;
  if (layers.empty()) {
    layers.resize(backend.config().layers);
    std::iota(layers.begin(), layers.end(), 0);
  }
  std::sort(layers.begin(), layers.end());
  layers.erase(std::unique(layers.begin(), layers.end()), layers.end());
  for (int l : layers) {
    detail::require(l >= 0 && static_cast<std::uint32_t>(l) < backend.config().layers, ErrorCode::kInvalidArgument,
                    "candidate layer out of range");
  }

  std::vector<std::optional<std::vector<double>>> results(samples.size());
  const std::size_t jobs =
      backend.supports_concurrent_calls() ? std::max<std::size_t>(1, std::min(options.jobs, samples.size())) : 1;
  if (jobs == 1) {
    for (std::size_t i = 0; i < samples.size(); ++i) results[i] = sample_layer_overlaps(backend, samples[i], layers, options);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(samples.size());
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < jobs; ++t) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < samples.size(); i = next++) {
          try {
            results[i] = sample_layer_overlaps(backend, samples[i], layers, options);
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

  LayerRanking ranking;
  ranking.layers = layers;
  std::vector<double> sum(layers.size(), 0.0);
  for (const auto& r : results) {
    if (!r) {
      ++ranking.samples_skipped;
      continue;
    }
    ++ranking.samples_used;
    for (std::size_t i = 0; i < layers.size(); ++i) sum[i] += (*r)[i];
    ranking.per_sample.push_back(*r);
  }
  if (ranking.samples_used == 0) throw Error(ErrorCode::kCalibration, "every calibration sample failed");
  for (double s : sum) ranking.mean_overlap.push_back(s / static_cast<double>(ranking.samples_used));

  std::vector<std::size_t> idx(layers.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return ranking.mean_overlap[a] > ranking.mean_overlap[b]; });
  for (auto i : idx) ranking.order.push_back(layers[i]);
  return ranking;
}

// The l best layers, ascending.
inline std::vector<int> select_top_l(const LayerRanking& ranking, std::size_t l) {
  detail::require(l >= 1 && l <= ranking.order.size(), ErrorCode::kInvalidArgument,
                  "top-l must be between 1 and the number of ranked layers");
  std::vector<int> out(ranking.order.begin(), ranking.order.begin() + static_cast<std::ptrdiff_t>(l));
  std::sort(out.begin(), out.end());
  return out;
}

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

// Calibration manifest:
//   {"version": 1, "samples": [{"image": "a.egoi" | "tensor": "a.json",
//     "mask": "a.egom", "category": "dog", "instances": 1}]}
// Paths are relative to the manifest. Samples with more than one instance
// are skipped; "instances" defaults to 1.
inline std::vector<CalibrationSample> load_calibration_manifest(const std::filesystem::path& path,
                                                                std::size_t max_samples = kDefaultCalibrationSamples) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(detail::read_file_text(path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kManifest, "bad calibration manifest " + path.string() + ": " + e.what());
  } catch (const Error&) {
    throw Error(ErrorCode::kManifest, "cannot read calibration manifest " + path.string());
  }
  const auto base = path.parent_path();
  std::vector<CalibrationSample> out;
  try {
    if (j.value("version", 1) != 1) throw Error(ErrorCode::kManifest, "unsupported calibration manifest version");
    for (const auto& s : j.at("samples")) {
      if (out.size() >= max_samples) break;
      if (s.value("instances", 1) != 1) continue;
      CalibrationSample sample;
      const bool has_image = s.contains("image");
      const bool has_tensor = s.contains("tensor");
      if (has_image == has_tensor) {
        throw Error(ErrorCode::kManifest, "each sample needs exactly one of 'image' or 'tensor'");
      }
      const auto media_path = base / s.at(has_image ? "image" : "tensor").get<std::string>();
      const auto mask_path = base / s.at("mask").get<std::string>();
      try {
        sample.media = has_image ? Media(load_image(media_path)) : Media(load_token_tensor(media_path));
        sample.mask = load_mask(mask_path);
      } catch (const Error& e) {
        throw Error(ErrorCode::kManifest, std::string(e.what()));
      }
      sample.category = s.value("category", std::string());
      out.push_back(std::move(sample));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kManifest, "bad calibration manifest " + path.string() + ": " + e.what());
  }
  if (out.empty()) throw Error(ErrorCode::kManifest, "calibration manifest " + path.string() + " has no single-instance samples");
  return out;
}

struct CalibrationResult {
  LayerRanking ranking;
  std::vector<int> selected;
  std::string backend_fingerprint;
};

inline nlohmann::json calibration_to_json(const CalibrationResult& r) {
  nlohmann::json scores = nlohmann::json::array();
  for (std::size_t i = 0; i < r.ranking.layers.size(); ++i) {
    scores.push_back({{"layer", r.ranking.layers[i]}, {"mean_overlap", r.ranking.mean_overlap[i]}});
  }
  return {{"version", 1},
          {"backend_fingerprint", r.backend_fingerprint},
          {"layers", r.selected},
          {"order", r.ranking.order},
          {"scores", scores},
          {"samples_used", r.ranking.samples_used},
          {"samples_skipped", r.ranking.samples_skipped}};
}

inline CalibrationResult calibration_from_json(const nlohmann::json& j) {
  CalibrationResult r;
  r.backend_fingerprint = j.value("backend_fingerprint", std::string());
  r.selected = j.at("layers").get<std::vector<int>>();
  r.ranking.order = j.value("order", std::vector<int>{});
  for (const auto& s : j.value("scores", nlohmann::json::array())) {
    r.ranking.layers.push_back(s.at("layer").get<int>());
    r.ranking.mean_overlap.push_back(s.at("mean_overlap").get<double>());
  }
  r.ranking.samples_used = j.value("samples_used", std::size_t{0});
  r.ranking.samples_skipped = j.value("samples_skipped", std::size_t{0});
  detail::require(!r.selected.empty(), ErrorCode::kInvalidArgument, "calibration file selects no layers");
  return r;
}

inline CalibrationResult load_calibration(const std::filesystem::path& path) {
  try {
    return calibration_from_json(nlohmann::json::parse(detail::read_file_text(path)));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument, "bad calibration file " + path.string() + ": " + e.what());
  }
}

}  // namespace ego
