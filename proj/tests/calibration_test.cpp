// Copyright 2026 The ego Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <random>

#include "ego/calibration.hpp"
#include "ego/synthetic.hpp"
#include "test_support.hpp"

namespace ego {
namespace {

using testing::TempDir;

PatchMask mask4x4(std::vector<std::size_t> on) {
  PatchMask m(4, 4);
  for (auto i : on) m.set(static_cast<std::uint32_t>(i / 4), static_cast<std::uint32_t>(i % 4), true);
  return m;
}

TEST(Overlap, Examples) {
  const auto m = mask4x4({0, 1, 4, 5});
  const std::vector<std::size_t> sel{0, 1, 4, 9};
  EXPECT_DOUBLE_EQ(patch_mask_overlap(sel, m), 0.75);
  const std::vector<std::size_t> inside{5, 0};
  EXPECT_DOUBLE_EQ(patch_mask_overlap(inside, m), 1.0);
  const std::vector<std::size_t> outside{2, 15};
  EXPECT_DOUBLE_EQ(patch_mask_overlap(outside, m), 0.0);
  EXPECT_THROW(patch_mask_overlap(std::vector<std::size_t>{}, m), Error);
  EXPECT_THROW(patch_mask_overlap(std::vector<std::size_t>{16}, m), Error);
}

TEST(Overlap, PermutationInvariantAndBounded) {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 100; ++t) {
    PatchMask m(8, 8);
    for (std::uint32_t i = 0; i < 64; ++i) m.set(i / 8, i % 8, rng() % 3 == 0);
    std::vector<std::size_t> sel;
    for (std::size_t i = 0; i < 64; ++i) {
      if (rng() % 4 == 0) sel.push_back(i);
    }
    if (sel.empty()) sel.push_back(0);
    const double a = patch_mask_overlap(sel, m);
    std::shuffle(sel.begin(), sel.end(), rng);
    EXPECT_EQ(a, patch_mask_overlap(sel, m));
    EXPECT_GE(a, 0.0);
    EXPECT_LE(a, 1.0);
  }
}

TEST(PatchMask, RejectsNonBinaryAndWrongSize) {
  EXPECT_THROW(PatchMask(2, 2, {0, 1, 2, 0}), Error);
  EXPECT_THROW(PatchMask(2, 2, {0, 1, 1}), Error);
}

TEST(PatchMask, FileRoundTripAndBadMagic) {
  TempDir dir;
  const auto m = mask4x4({3, 7, 8});
  save_mask(m, dir / "m.egom");
  EXPECT_EQ(load_mask(dir / "m.egom"), m);
  auto bytes = detail::read_file_bytes(dir / "m.egom");
  bytes[0] = 'Q';
  try {
    decode_mask_file(bytes);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kBadMagic);
  }
}

TEST(Downsample, HalfPatchIsIncluded) {
  // 4x4 pixels onto a 2x2 grid: patch (0,0) has 2 of 4 pixels, patch (1,1) has 1.
  std::vector<std::uint8_t> px(16, 0);
  px[0] = px[1] = 1;
  px[15] = 1;
  const auto m = downsample_mask(px, 4, 4, {2, 2});
  EXPECT_TRUE(m.at(0, 0));
  EXPECT_FALSE(m.at(0, 1));
  EXPECT_FALSE(m.at(1, 1));
  EXPECT_THROW(downsample_mask(px, 4, 4, {3, 3}), Error);
}

TEST(RankLayers, PlantedLayerFirstWithFullOverlap) {
  auto be = make_planted_backend();
  const auto samples = planted_calibration_samples(8, 3);
  const auto r = rank_layers(be, samples);
  EXPECT_EQ(r.order.front(), kPlantedLayer);
  EXPECT_DOUBLE_EQ(r.score(kPlantedLayer), 1.0);
  EXPECT_EQ(r.samples_used, 8u);
  EXPECT_EQ(r.layers, (std::vector<int>{0, 1, 2, 3}));
  for (double s : r.mean_overlap) {
    EXPECT_GE(s, 0.0);
    EXPECT_LE(s, 1.0);
  }
  const auto top = select_top_l(r, 1);
  EXPECT_EQ(top, std::vector<int>{kPlantedLayer});
}

TEST(RankLayers, PlantedLayerMovesWithConstruction) {
  auto be = make_planted_backend(0, 1);
  const auto r = rank_layers(be, planted_calibration_samples(4, 8));
  EXPECT_EQ(r.order.front(), 1);
}

TEST(RankLayers, MeanEqualsRecount) {
  auto be = make_planted_backend();
  const auto samples = planted_calibration_samples(6, 12);
  const auto r = rank_layers(be, samples);
  for (std::size_t li = 0; li < r.layers.size(); ++li) {
    double sum = 0.0;
    for (const auto& s : samples) {
      const auto visual = be.encode_image(std::get<ToyImage>(s.media));
      const auto cap = capture_keyword_attention(be, visual, default_templates(), std::vector<int>{r.layers[li]});
      const auto imp = importance_scores(cap.stack);
      sum += patch_mask_overlap(top_k_ascending(imp.values(), 12), s.mask);
    }
    EXPECT_NEAR(r.mean_overlap[li], sum / double(samples.size()), 1e-9);
  }
}

TEST(RankLayers, DuplicatedSamplesSameRanking) {
  auto be = make_planted_backend();
  const auto samples = planted_calibration_samples(5, 21);
  auto doubled = samples;
  doubled.insert(doubled.end(), samples.begin(), samples.end());
  const auto a = rank_layers(be, samples);
  const auto b = rank_layers(be, doubled);
  EXPECT_EQ(a.order, b.order);
  for (std::size_t i = 0; i < a.layers.size(); ++i) EXPECT_NEAR(a.mean_overlap[i], b.mean_overlap[i], 1e-12);
}

TEST(RankLayers, ParallelMatchesSerial) {
  auto be = make_planted_backend();
  const auto samples = planted_calibration_samples(9, 2);
  CalibrationOptions opt;
  opt.jobs = 4;
  const auto a = rank_layers(be, samples);
  const auto b = rank_layers(be, samples, opt);
  EXPECT_EQ(a.mean_overlap, b.mean_overlap);
  EXPECT_EQ(a.per_sample, b.per_sample);
}

TEST(RankLayers, OneSampleOneLayer) {
  auto be = make_planted_backend();
  CalibrationOptions opt;
  opt.candidate_layers = {0};
  const auto samples = planted_calibration_samples(1, 6);
  const auto r = rank_layers(be, samples, opt);
  ASSERT_EQ(r.order, std::vector<int>{0});
  EXPECT_EQ(r.per_sample.size(), 1u);
  EXPECT_EQ(r.mean_overlap[0], r.per_sample[0][0]);
}

ScriptedBackend custom_planted(ReplyFn keywords, AttentionSynth synth = uniform_attention) {
  return ScriptedBackend(planted_backend_config(), {{"important words", std::move(keywords)}}, std::move(synth),
                         planted_encode);
}

TEST(RankLayers, EqualScoresBreakToLowerLayer) {
  auto be = custom_planted([](const GenerationRequest&) { return std::string("red"); });
  CalibrationOptions opt;
  opt.candidate_layers = {3, 1};
  const auto r = rank_layers(be, planted_calibration_samples(3, 1), opt);
  EXPECT_EQ(r.mean_overlap[0], r.mean_overlap[1]);
  EXPECT_EQ(r.order, (std::vector<int>{1, 3}));
}

TEST(RankLayers, FailedSamplesSkippedThenAllFail) {
  // Keyword replies are punctuation-only for images whose first pixel is positive.
  auto be = custom_planted([](const GenerationRequest& req) {
    return req.context.front().visual_payload().row(0)[8] > 0 ? std::string(", .") : std::string("red");
  });
  const auto samples = planted_calibration_samples(16, 30);
  std::size_t bad = 0;
  for (const auto& s : samples) bad += std::get<ToyImage>(s.media).pixels[8] > 0;
  ASSERT_GT(bad, 0u);
  ASSERT_LT(bad, samples.size());
  const auto r = rank_layers(be, samples);
  EXPECT_EQ(r.samples_skipped, bad);
  EXPECT_EQ(r.samples_used + r.samples_skipped, samples.size());

  auto never = custom_planted([](const GenerationRequest&) { return std::string("..."); });
  try {
    rank_layers(never, samples);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kCalibration);
  }
}

TEST(RankLayers, RejectsBadInput) {
  auto be = make_planted_backend();
  EXPECT_THROW(rank_layers(be, std::vector<CalibrationSample>{}), Error);
  auto samples = planted_calibration_samples(1, 1);
  samples[0].mask = PatchMask(4, 4, std::vector<std::uint8_t>(16, 1));
  EXPECT_THROW(rank_layers(be, samples), Error);
  samples[0].mask = PatchMask(8, 8);
  EXPECT_THROW(rank_layers(be, samples), Error);
  CalibrationOptions opt;
  opt.candidate_layers = {4};
  EXPECT_THROW(rank_layers(be, planted_calibration_samples(1, 1), opt), Error);
}

TEST(SelectTopL, RangeAndOrder) {
  LayerRanking r;
  r.layers = {0, 1, 2, 3};
  r.order = {3, 0, 2, 1};
  EXPECT_EQ(select_top_l(r, 2), (std::vector<int>{0, 3}));
  EXPECT_EQ(select_top_l(r, 4), (std::vector<int>{0, 1, 2, 3}));
  EXPECT_THROW(select_top_l(r, 0), Error);
  EXPECT_THROW(select_top_l(r, 5), Error);
}

TEST(CalibrationManifest, LoadsSkipsMultiInstanceAndCaps) {
  TempDir dir;
  const auto samples = planted_calibration_samples(3, 5);
  nlohmann::json list = nlohmann::json::array();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    save_image(std::get<ToyImage>(samples[i].media), dir / ("s" + std::to_string(i) + ".egoi"));
    save_mask(samples[i].mask, dir / ("s" + std::to_string(i) + ".egom"));
    list.push_back({{"image", "s" + std::to_string(i) + ".egoi"},
                    {"mask", "s" + std::to_string(i) + ".egom"},
                    {"category", "x"},
                    {"instances", i == 1 ? 2 : 1}});
  }
  detail::write_file_text(dir / "cal.json", nlohmann::json{{"version", 1}, {"samples", list}}.dump());
  const auto loaded = load_calibration_manifest(dir / "cal.json");
  ASSERT_EQ(loaded.size(), 2u);
  EXPECT_EQ(loaded[1].mask, samples[2].mask);
  EXPECT_EQ(load_calibration_manifest(dir / "cal.json", 1).size(), 1u);
}

TEST(CalibrationManifest, Errors) {
  TempDir dir;
  auto code = [](const std::filesystem::path& p) {
    try {
      load_calibration_manifest(p);
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::kIo;
  };
  EXPECT_EQ(code(dir / "missing.json"), ErrorCode::kManifest);
  detail::write_file_text(dir / "bad.json", "{");
  EXPECT_EQ(code(dir / "bad.json"), ErrorCode::kManifest);
  detail::write_file_text(dir / "none.json",
                          R"({"samples": [{"image": "a.egoi", "mask": "a.egom", "instances": 3}]})");
  EXPECT_EQ(code(dir / "none.json"), ErrorCode::kManifest);
  detail::write_file_text(dir / "gone.json", R"({"samples": [{"image": "a.egoi", "mask": "a.egom"}]})");
  EXPECT_EQ(code(dir / "gone.json"), ErrorCode::kManifest);
}

TEST(CalibrationFile, JsonRoundTrip) {
  auto be = make_planted_backend();
  CalibrationResult r;
  r.ranking = rank_layers(be, planted_calibration_samples(2, 2));
  r.selected = select_top_l(r.ranking, 2);
  r.backend_fingerprint = fingerprint_hex(be.fingerprint());
  const auto back = calibration_from_json(calibration_to_json(r));
  EXPECT_EQ(back.selected, r.selected);
  EXPECT_EQ(back.ranking.order, r.ranking.order);
  EXPECT_EQ(back.ranking.mean_overlap, r.ranking.mean_overlap);
  EXPECT_EQ(back.backend_fingerprint, r.backend_fingerprint);
}

}  // namespace
}  // namespace ego
