// Copyright 2026 The ego Authors
// SPDX-License-Identifier: Apache-2.0

// Planted-signal suite: synthetic images whose informative patches are known,
// and a scripted backend whose behaviour follows from the tokens it is shown.
//
// Images are 8 x 8 x 16: each pixel holds the visual token of its patch, and
// the planted encoder copies it through. Concept c (c < 4) is a 3 x 4 block
// of patches carrying a signature in dims 2c and 2c + 1; background patches
// live in dims 8..15. Every entry gets N(0, 0.03^2) noise.
//
// The planted backend
//   - estimates subject size as the share of patches with energy in dims 0..7,
//   - always lists the keywords "blue wheels, green eyes",
//   - on `planted_layer` puts 70% of each row's mass on visual tokens in
//     proportion to exp(8 * |x[0:8]|^2); other layers spread 10% on visual
//     tokens by a fixed hash,
//   - answers recognition by the mean, over memory rows, of the best cosine
//     against the query tokens (yes at >= 0.9).

#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ego/backend.hpp"
#include "ego/calibration.hpp"
#include "ego/scripted_backend.hpp"
#include "ego/toy_backend.hpp"
#include "ego/toy_image.hpp"

namespace ego {

inline constexpr std::uint32_t kPlantedGrid = 8;
inline constexpr std::uint32_t kPlantedDim = 16;
inline constexpr std::uint32_t kPlantedBlockRows = 3;
inline constexpr std::uint32_t kPlantedBlockCols = 4;
inline constexpr std::size_t kPlantedMaxConcepts = 4;
inline constexpr int kPlantedLayer = 2;
inline constexpr double kPlantedNoise = 0.03;
inline constexpr double kPlantedThreshold = 0.9;

inline const std::array<const char*, kPlantedMaxConcepts> kPlantedNames = {"mug", "pen", "dog", "bike"};

struct PlantedObject {
  std::size_t concept_index = 0;
  std::uint32_t row = 0;  // top-left patch
  std::uint32_t col = 0;
};

inline BackendConfig planted_backend_config(std::uint64_t seed = 0) {
  BackendConfig c;
  c.model = "planted";
  c.layers = 4;
  c.heads = 2;
  c.dim = kPlantedDim;
  c.head_dim = kPlantedDim / 2;
  c.patch_grid = {kPlantedGrid, kPlantedGrid};
  c.seed = seed;
  return c;
}

inline bool in_block(const PlantedObject& o, std::uint32_t r, std::uint32_t c) {
  return r >= o.row && r < o.row + kPlantedBlockRows && c >= o.col && c < o.col + kPlantedBlockCols;
}

// Tokens as an 8 x 8 x 16 image; `seed` drives background and noise.
inline ToyImage planted_image(const std::vector<PlantedObject>& objects, std::uint64_t seed) {
  SplitMix64 rng(seed);
  auto img = make_image(kPlantedGrid, kPlantedGrid, kPlantedDim);
  const double n = std::sqrt(1.0 + 0.3 * 0.3);
  for (std::uint32_t r = 0; r < kPlantedGrid; ++r) {
    for (std::uint32_t c = 0; c < kPlantedGrid; ++c) {
      std::array<double, kPlantedDim> v{};
      const PlantedObject* hit = nullptr;
      for (const auto& o : objects) {
        if (in_block(o, r, c)) hit = &o;
      }
      if (hit != nullptr) {
        const std::size_t d = 2 * hit->concept_index;
        const bool alt = ((r - hit->row) + (c - hit->col)) % 2 == 1;
        v[d] = (alt ? 0.3 : 1.0) / n;
        v[d + 1] = (alt ? 1.0 : 0.3) / n;
      } else {
        double norm = 0.0;
        for (std::size_t d = 8; d < kPlantedDim; ++d) {
          v[d] = rng.normal();
          norm += v[d] * v[d];
        }
        for (std::size_t d = 8; d < kPlantedDim; ++d) v[d] /= std::sqrt(norm);
      }
      for (std::size_t d = 0; d < kPlantedDim; ++d) {
        img.at(r, c, static_cast<std::uint32_t>(d)) = static_cast<float>(v[d] + kPlantedNoise * rng.normal());
      }
    }
  }
  return img;
}

inline PatchMask planted_mask(const std::vector<PlantedObject>& objects) {
  PatchMask m(kPlantedGrid, kPlantedGrid);
  for (std::uint32_t r = 0; r < kPlantedGrid; ++r) {
    for (std::uint32_t c = 0; c < kPlantedGrid; ++c) {
      for (const auto& o : objects) {
        if (in_block(o, r, c)) m.set(r, c, true);
      }
    }
  }
  return m;
}

// Random block position for one object.
inline PlantedObject random_object(std::size_t concept_index, SplitMix64& rng) {
  PlantedObject o;
  o.concept_index = concept_index;
  o.row = static_cast<std::uint32_t>(rng.next() % (kPlantedGrid - kPlantedBlockRows + 1));
  o.col = static_cast<std::uint32_t>(rng.next() % (kPlantedGrid - kPlantedBlockCols + 1));
  return o;
}

// Identity projection: pixel (r, c) channels become token row r * 8 + c.
inline TokenMatrix planted_encode(const ToyImage& image) {
  image.validate();
  detail::require(image.height == kPlantedGrid && image.width == kPlantedGrid && image.channels == kPlantedDim,
                  ErrorCode::kInvalidArgument, "planted images are 8 x 8 x 16");
  return TokenMatrix(kPlantedGrid * kPlantedGrid, kPlantedDim, image.pixels);
}

namespace detail {

inline double salience(std::span<const float> row) {
  double s = 0.0;
  for (std::size_t d = 0; d < 8 && d < row.size(); ++d) s += double(row[d]) * row[d];
  return s;
}

inline double row_cosine(std::span<const float> a, std::span<const float> b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += double(a[i]) * b[i];
    na += double(a[i]) * a[i];
    nb += double(b[i]) * b[i];
  }
  return na == 0.0 || nb == 0.0 ? 0.0 : dot / std::sqrt(na * nb);
}

struct PlantedContext {
  std::vector<std::pair<std::string, const TokenMatrix*>> concepts;
  TokenMatrix query;
};

// Concept memories are visual segments that follow a text segment; the
// remaining visual segments are the query.
inline PlantedContext read_planted_context(const GenerationRequest& req) {
  PlantedContext out;
  out.query = TokenMatrix(0, kPlantedDim);
  for (std::size_t i = 0; i < req.context.size(); ++i) {
    const auto& seg = req.context[i];
    if (seg.kind() != SegmentKind::kVisual) continue;
    if (i > 0 && req.context[i - 1].kind() == SegmentKind::kText) {
      const auto& text = req.context[i - 1].text_payload();
      const std::string key = "shows the entity ";
      const auto b = text.find(key);
      std::string name = b == std::string::npos ? text : text.substr(b + key.size());
      const auto e = name.find(". Image");
      if (e != std::string::npos) name = name.substr(0, e);
      out.concepts.emplace_back(name, &seg.visual_payload());
    } else {
      out.query.append(seg.visual_payload());
    }
  }
  return out;
}

}  // namespace detail

// Mean over memory rows of the best cosine against any query row.
inline double planted_match_score(const TokenMatrix& memory, const TokenMatrix& query) {
  if (memory.empty() || query.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < memory.rows(); ++i) {
    double best = -1.0;
    for (std::size_t j = 0; j < query.rows(); ++j) best = std::max(best, detail::row_cosine(memory.row(i), query.row(j)));
    sum += best;
  }
  return sum / static_cast<double>(memory.rows());
}

inline void planted_attention(const AttentionSynthRequest& req, std::span<float> row, int planted_layer) {
  std::vector<std::size_t> visual;
  std::vector<double> weight;
  std::size_t seg_index = 0;
  for (const auto& seg : req.request->context) {
    const auto range = req.segments[seg_index++];
    if (seg.kind() != SegmentKind::kVisual) continue;
    const auto& tokens = seg.visual_payload();
    for (std::size_t t = 0; t < tokens.rows(); ++t) {
      visual.push_back(range.begin + t);
      weight.push_back(req.layer == planted_layer
                           ? std::exp(8.0 * detail::salience(tokens.row(t)))
                           : 1.05 + to_symmetric_unit(splitmix64_at(0x5eed, (std::uint64_t(req.layer) << 48) ^
                                                                              (std::uint64_t(req.head) << 40) ^
                                                                              (std::uint64_t(req.step) << 20) ^ t)));
    }
  }
  const double visual_mass = visual.empty() ? 0.0 : (req.layer == planted_layer ? 0.7 : 0.1);
  const std::size_t other = row.size() - visual.size();
  const double rest = other == 0 ? 0.0 : (1.0 - visual_mass) / static_cast<double>(other);
  const double scale = visual.empty() ? 0.0 : (other == 0 ? 1.0 : visual_mass);
  double total = 0.0;
  for (double w : weight) total += w;
  std::fill(row.begin(), row.end(), static_cast<float>(rest));
  for (std::size_t i = 0; i < visual.size(); ++i) row[visual[i]] = static_cast<float>(scale * weight[i] / total);
}

// Scripted backend implementing the planted behaviour described above.
inline ScriptedBackend make_planted_backend(std::uint64_t seed = 0, int planted_layer = kPlantedLayer) {
  auto size_reply = [](const GenerationRequest& req) {
    const auto ctx = detail::read_planted_context(req);
    std::size_t salient = 0;
    for (std::size_t r = 0; r < ctx.query.rows(); ++r) salient += detail::salience(ctx.query.row(r)) > 0.5;
    const double pct = 100.0 * static_cast<double>(salient) / static_cast<double>(std::max<std::size_t>(1, ctx.query.rows()));
    return std::to_string(static_cast<long>(std::lround(pct)));
  };
  auto detected = [](const GenerationRequest& req) {
    const auto ctx = detail::read_planted_context(req);
    std::vector<std::pair<std::string, bool>> out;
    for (const auto& [name, mem] : ctx.concepts) {
      out.emplace_back(name, planted_match_score(*mem, ctx.query) >= kPlantedThreshold);
    }
    return out;
  };
  auto recognition = [detected](const GenerationRequest& req) {
    std::string out;
    for (const auto& [name, yes] : detected(req)) out += name + (yes ? ": yes\n" : ": no\n");
    if (!out.empty()) out.pop_back();
    return out;
  };
  auto caption = [detected](const GenerationRequest& req) {
    std::string names;
    for (const auto& [name, yes] : detected(req)) {
      if (yes) names += (names.empty() ? "" : " and ") + name;
    }
    return names.empty() ? std::string("a photo of an object") : "a photo of " + names;
  };
  auto vqa = [detected](const GenerationRequest& req) {
    const auto d = detected(req);
    return !d.empty() && d.front().second ? std::string("A") : std::string("B");
  };
  std::vector<ScriptRule> rules = {
      {"estimate the percentage of the total image area", ReplyFn(size_reply)},
      {"Give me a list of important words", std::string("blue wheels, green eyes")},
      {"check the presence of the subjects", ReplyFn(recognition)},
      {"Generate a detailed caption", ReplyFn(caption)},
      {"Answer the following question about Image", ReplyFn(vqa)},
  };
  return ScriptedBackend(
      planted_backend_config(seed), std::move(rules),
      [planted_layer](const AttentionSynthRequest& r, std::span<float> row) { planted_attention(r, row, planted_layer); },
      planted_encode);
}

// ---------------------------------------------------------------------------
// Suites
// ---------------------------------------------------------------------------

inline std::vector<CalibrationSample> planted_calibration_samples(std::size_t count, std::uint64_t seed) {
  SplitMix64 rng(seed);
  std::vector<CalibrationSample> out;
  for (std::size_t i = 0; i < count; ++i) {
    const auto obj = random_object(i % kPlantedMaxConcepts, rng);
    out.push_back({planted_image({obj}, rng.next()), planted_mask({obj}), kPlantedNames[obj.concept_index]});
  }
  return out;
}

struct PlantedSuiteOptions {
  std::size_t concepts = 4;
  std::size_t views = 5;
  std::size_t queries = 2;  // held-out images per concept
  std::size_t negatives = 2;
  std::size_t calibration_samples = 32;
  std::uint64_t seed = 7;
};

struct PlantedImage {
  std::string file;
  std::vector<PlantedObject> objects;
  ToyImage image;
};

struct PlantedSuite {
  nlohmann::json dataset;      // dataset manifest (relative file names)
  nlohmann::json calibration;  // calibration manifest
  std::vector<PlantedImage> images;
  std::vector<std::pair<std::string, PatchMask>> masks;
};

// Builds the dataset in memory. Multi-concept images hold two objects in
// non-overlapping rows.
inline PlantedSuite make_planted_suite(const PlantedSuiteOptions& opt) {
  detail::require(opt.concepts >= 2 && opt.concepts <= kPlantedMaxConcepts, ErrorCode::kInvalidArgument,
                  "planted suites hold 2 to 4 concepts");
  PlantedSuite s;
  SplitMix64 rng(opt.seed);
  auto add_image = [&](const std::string& file, std::vector<PlantedObject> objs) {
    s.images.push_back({file, objs, planted_image(objs, rng.next())});
    return file;
  };
  nlohmann::json concepts = nlohmann::json::array();
  nlohmann::json rec = nlohmann::json::array(), multi = nlohmann::json::array(), vqa = nlohmann::json::array(),
                 cap = nlohmann::json::array();
  for (std::size_t c = 0; c < opt.concepts; ++c) {
    const std::string name = kPlantedNames[c];
    std::vector<std::string> views;
    for (std::size_t v = 0; v < opt.views; ++v) {
      views.push_back(add_image(name + "_ref" + std::to_string(v) + ".egoi", {random_object(c, rng)}));
    }
    concepts.push_back({{"name", name}, {"views", {{"1", nlohmann::json::array({views.front()})}, {"5", views}}}});
    for (std::size_t q = 0; q < opt.queries; ++q) {
      const auto f = add_image(name + "_query" + std::to_string(q) + ".egoi", {random_object(c, rng)});
      rec.push_back({{"id", name + "_q" + std::to_string(q)}, {"media", nlohmann::json::array({f})}, {"concepts", nlohmann::json::array({name})}});
    }
    const auto vf = add_image(name + "_vqa.egoi", {random_object(c, rng)});
    vqa.push_back({{"id", name + "_vqa"},
                   {"media", nlohmann::json::array({vf})},
                   {"concepts", nlohmann::json::array({name})},
                   {"question", "Is " + name + " in this picture? A) yes B) no"},
                   {"answer", "A"},
                   {"choices", {{"A", "yes"}, {"B", "no"}}}});
    const auto cf = add_image(name + "_cap.egoi", {random_object(c, rng)});
    cap.push_back({{"id", name + "_cap"}, {"media", nlohmann::json::array({cf})}, {"concepts", nlohmann::json::array({name})}});
  }
  for (std::size_t n = 0; n < opt.negatives; ++n) {
    const auto f = add_image("negative" + std::to_string(n) + ".egoi", {});
    rec.push_back({{"id", "neg" + std::to_string(n)}, {"media", nlohmann::json::array({f})}, {"concepts", nlohmann::json::array()}});
  }
  for (std::size_t c = 0; c + 1 < opt.concepts; c += 2) {
    const std::string a = kPlantedNames[c], b = kPlantedNames[c + 1];
    PlantedObject oa{c, 0, static_cast<std::uint32_t>(rng.next() % 5)};
    PlantedObject ob{c + 1, 4, static_cast<std::uint32_t>(rng.next() % 5)};
    const auto f = add_image(a + "_" + b + "_pair.egoi", {oa, ob});
    multi.push_back({{"id", a + "_" + b}, {"media", nlohmann::json::array({f})}, {"pair", nlohmann::json::array({a, b})}, {"present", true}});
    const auto g = add_image(a + "_" + b + "_neg.egoi", {oa});
    multi.push_back({{"id", a + "_" + b + "_neg"}, {"media", nlohmann::json::array({g})}, {"pair", nlohmann::json::array({a, b})}, {"present", false}});
  }
  s.dataset = {{"version", 1},      {"concepts", concepts}, {"recognition", rec},
               {"multi", multi},    {"vqa", vqa},           {"captioning", cap}};

  nlohmann::json samples = nlohmann::json::array();
  for (std::size_t i = 0; i < opt.calibration_samples; ++i) {
    const auto obj = random_object(i % opt.concepts, rng);
    const std::string stem = "calib" + std::to_string(i);
    add_image(stem + ".egoi", {obj});
    s.masks.emplace_back(stem + ".egom", planted_mask({obj}));
    samples.push_back({{"image", stem + ".egoi"},
                       {"mask", stem + ".egom"},
                       {"category", kPlantedNames[obj.concept_index]},
                       {"instances", 1}});
  }
  s.calibration = {{"version", 1}, {"samples", samples}};
  return s;
}

// Writes dataset.json, calibration.json, images and masks into `dir`.
inline void write_planted_suite(const PlantedSuite& s, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& img : s.images) save_image(img.image, dir / img.file);
  for (const auto& [file, mask] : s.masks) save_mask(mask, dir / file);
  detail::write_file_text(dir / "dataset.json", s.dataset.dump(2) + "\n");
  detail::write_file_text(dir / "calibration.json", s.calibration.dump(2) + "\n");
}

}  // namespace ego
