// Copyright 2026 The ego Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <thread>

#include "ego/scripted_backend.hpp"
#include "ego/synthetic.hpp"
#include "ego/toy_backend.hpp"
#include "test_support.hpp"

namespace ego {
namespace {

ToyImage gradient_image(std::uint32_t h, std::uint32_t w, std::uint32_t ch, float bias = 0.0f) {
  auto img = make_image(h, w, ch);
  for (std::uint32_t y = 0; y < h; ++y)
    for (std::uint32_t x = 0; x < w; ++x)
      for (std::uint32_t c = 0; c < ch; ++c) img.at(y, x, c) = std::sin(0.3f * y + 0.7f * x + c) + bias;
  return img;
}

template <typename Fn>
ErrorCode code_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::kIo;
}

TEST(BackendConfig, DefaultsAndValidation) {
  BackendConfig c;
  EXPECT_EQ(c.visual_tokens(), 64u);
  EXPECT_EQ(c.head_dim, 8u);
  c.dim = 15;
  EXPECT_EQ(code_of([&] { c.validate(); }), ErrorCode::kInvalidArgument);
  c = {};
  c.max_context = 100;
  EXPECT_EQ(code_of([&] { c.validate(); }), ErrorCode::kInvalidArgument);
}

TEST(BackendConfig, FingerprintIgnoresMaxContext) {
  BackendConfig a, b;
  b.max_context = 9999;
  EXPECT_EQ(a.fingerprint(), b.fingerprint());
  b.seed = 1;
  EXPECT_NE(a.fingerprint(), b.fingerprint());
}

TEST(ToyEncoder, ShapeAndDeterminism) {
  ToyBackend be;
  const auto img = gradient_image(16, 16, 1);
  const auto a = be.encode_image(img);
  EXPECT_EQ(a.rows(), 64u);
  EXPECT_EQ(a.dim(), 16u);
  EXPECT_EQ(a, ToyBackend().encode_image(img));
}

TEST(ToyEncoder, NonDivisibleRejected) {
  ToyBackend be;
  EXPECT_EQ(code_of([&] { be.encode_image(make_image(15, 16, 1)); }), ErrorCode::kInvalidArgument);
}

TEST(ToyEncoder, ChangeIsLocalToOnePatch) {
  ToyBackend be;
  auto img = gradient_image(16, 16, 1);
  const auto before = be.encode_image(img);
  img.at(5, 9, 0) += 1.0f;  // patch row 2, col 4
  const auto after = be.encode_image(img);
  // Independent recomputation of the touched patch embedding.
  const std::size_t dim = 16;
  const double scale = 1.0 / std::sqrt(double(dim));
  std::vector<double> expect(dim, 0.0);
  for (std::uint32_t y = 0; y < 2; ++y)
    for (std::uint32_t x = 0; x < 2; ++x) {
      const std::size_t i = y * 2 + x;
      for (std::size_t d = 0; d < dim; ++d) {
        const double w = to_symmetric_unit(splitmix64_at(0, kPatchProjectionBase + i * dim + d)) * scale;
        expect[d] += w * img.at(4 + y, 8 + x, 0);
      }
    }
  for (std::size_t r = 0; r < 64; ++r) {
    if (r == 2 * 8 + 4) {
      EXPECT_NE(before.row(r)[0], after.row(r)[0]);
      for (std::size_t d = 0; d < dim; ++d) EXPECT_NEAR(after.row(r)[d], expect[d], 1e-5);
    } else {
      for (std::size_t d = 0; d < dim; ++d) ASSERT_EQ(before.row(r)[d], after.row(r)[d]);
    }
  }
}

GenerationRequest visual_request(const Backend& be, std::vector<int> layers, std::size_t new_tokens = 6) {
  GenerationRequest r;
  r.context.push_back(ContextSegment::visual(be.encode_image(gradient_image(16, 16, 3))));
  r.instruction = "describe";
  r.capture_layers = std::move(layers);
  r.max_new_tokens = new_tokens;
  return r;
}

TEST(ToyBackend, LayoutPutsVisualBeforeInstruction) {
  ToyBackend be;
  const auto t = be.generate(visual_request(be, {}));
  ASSERT_EQ(t.segments.size(), 1u);
  EXPECT_EQ(t.segments[0], (PositionRange{0, 64}));
  EXPECT_EQ(t.instruction, (PositionRange{64, 72}));
  EXPECT_EQ(t.prompt_length, 72u);
  EXPECT_TRUE(t.attention.empty());
  EXPECT_EQ(t.tokens.size(), 6u);
  EXPECT_EQ(t.tokens.front().position, 72u);
}

TEST(ToyBackend, DeterministicAcrossCalls) {
  ToyBackend be;
  const auto r = visual_request(be, {0, 3});
  const auto a = be.generate(r);
  const auto b = be.generate(r);
  EXPECT_EQ(a.text(), b.text());
  EXPECT_EQ(a.attention, b.attention);
}

TEST(ToyBackend, SeedChangesOutput) {
  BackendConfig c1, c2;
  c1.seed = 1;
  c2.seed = 2;
  ToyBackend a(c1), b(c2);
  GenerationRequest r;
  r.instruction = "list the words";
  r.max_new_tokens = 16;
  EXPECT_NE(a.generate(r).text(), b.generate(r).text());
}

TEST(ToyBackend, OutputStaysInAlphabet) {
  ToyBackend be;
  for (char c : be.generate(visual_request(be, {}, 24)).text()) {
    EXPECT_NE(kToyAlphabet.find(c), std::string_view::npos);
  }
}

TEST(ToyBackend, CapturedRowsAreCausalDistributions) {
  ToyBackend be;
  const auto t = be.generate(visual_request(be, {1, 2}));
  ASSERT_EQ(t.attention.layers.size(), 2u);
  for (const auto& cl : t.attention.layers) {
    ASSERT_EQ(cl.rows.size(), 2u);
    for (const auto& head : cl.rows) {
      ASSERT_EQ(head.size(), t.tokens.size());
      for (std::size_t k = 0; k < head.size(); ++k) {
        EXPECT_EQ(head[k].size(), t.tokens[k].position + 1);
        double sum = 0.0;
        for (float v : head[k]) sum += v;
        EXPECT_NEAR(sum, 1.0, 1e-5);
      }
    }
  }
}

TEST(ToyBackend, CapturedRowsMatchKernelOnRecordedQk) {
  ToyBackend be;
  auto r = visual_request(be, {0, 2}, 4);
  r.record_qk = true;
  const auto t = be.generate(r);
  ASSERT_FALSE(t.probes.empty());
  for (const auto& p : t.probes) {
    const auto a = scaled_dot_attention(p.query, p.keys, 8, true);
    const CapturedLayer* cl = nullptr;
    for (const auto& l : t.attention.layers) {
      if (l.layer == p.layer) cl = &l;
    }
    ASSERT_NE(cl, nullptr);
    const auto& row = cl->rows[p.head][p.step];
    ASSERT_EQ(row.size(), a.cols());
    for (std::size_t j = 0; j < row.size(); ++j) EXPECT_NEAR(row[j], a(0, j), 1e-5);
  }
}

TEST(ToyBackend, ContextLimitCarriesCounts) {
  BackendConfig c;
  c.max_context = 128;
  ToyBackend be(c);
  auto r = visual_request(be, {}, 60);
  try {
    be.generate(r);
    FAIL();
  } catch (const ContextLimitError& e) {
    EXPECT_EQ(e.code(), ErrorCode::kContextLimit);
    EXPECT_EQ(e.required(), 72u + 60u);
    EXPECT_EQ(e.limit(), 128u);
    EXPECT_EQ(e.overflow(), 4u);
  }
}

TEST(ToyBackend, RejectsBadCaptureLayerAndSampling) {
  ToyBackend be;
  EXPECT_EQ(code_of([&] { be.generate(visual_request(be, {4})); }), ErrorCode::kInvalidArgument);
  auto r = visual_request(be, {});
  r.deterministic = false;
  EXPECT_EQ(code_of([&] { be.generate(r); }), ErrorCode::kInvalidArgument);
}

TEST(ToyBackend, SafeToShareAcrossThreads) {
  ToyBackend be;
  const auto r = visual_request(be, {0});
  const auto want = be.generate(r).text();
  std::vector<std::string> got(4);
  std::vector<std::thread> pool;
  for (std::size_t i = 0; i < 4; ++i) pool.emplace_back([&, i] { got[i] = be.generate(r).text(); });
  for (auto& t : pool) t.join();
  for (const auto& g : got) EXPECT_EQ(g, want);
}

// --- scripted -----------------------------------------------------------------

ScriptedBackend simple_script() {
  return ScriptedBackend(BackendConfig{}, {{"estimate the percentage", std::string("25")},
                                           {"important words", std::string("blue wheels, green eyes")},
                                           {"words", std::string("other")}});
}

TEST(ScriptedBackend, RepliesAndCodePointTokens) {
  auto be = ScriptedBackend(BackendConfig{}, {{"size", std::string("25")}, {"name", std::string("caf\xC3\xA9")}});
  GenerationRequest r;
  r.instruction = "what size";
  const auto t = be.generate(r);
  EXPECT_EQ(t.text(), "25");
  ASSERT_EQ(t.tokens.size(), 2u);
  r.instruction = "name it";
  EXPECT_EQ(be.generate(r).tokens.size(), 4u);
}

TEST(ScriptedBackend, UnmatchedAndAmbiguous) {
  auto be = simple_script();
  GenerationRequest r;
  r.instruction = "hello";
  EXPECT_EQ(code_of([&] { be.generate(r); }), ErrorCode::kNoScript);
  r.instruction = "important words";
  EXPECT_EQ(code_of([&] { be.generate(r); }), ErrorCode::kContractViolation);
}

TEST(ScriptedBackend, KeywordReplyYieldsWordTokens) {
  auto be = ScriptedBackend(BackendConfig{}, {{"important words", std::string("blue wheels, green eyes")}});
  GenerationRequest r;
  r.context.push_back(ContextSegment::visual(be.encode_image(gradient_image(16, 16, 3))));
  r.instruction = "important words";
  r.capture_layers = {0, 1};
  const auto t = be.generate(r);
  const auto span = filter_keyword_tokens(t.tokens);
  EXPECT_GE(span.size(), 4u);
  const auto stack = extract_cross_attention(t.attention, span, t.segments.front());
  EXPECT_EQ(stack.visual_count(), 64u);
  stack.validate();
}

TEST(ScriptedBackend, LoadsScriptFile) {
  testing::TempDir dir;
  detail::write_file_text(dir / "s.json", R"({"config": {"layers": 3}, "rules": [{"match": "x", "reply": "y"}]})");
  auto be = load_scripted_backend(dir / "s.json");
  EXPECT_EQ(be.config().layers, 3u);
  EXPECT_EQ(be.config().model, "scripted");
  GenerationRequest r;
  r.instruction = "x";
  EXPECT_EQ(be.generate(r).text(), "y");
}

TEST(ScriptedBackend, ConfigJsonRoundTrip) {
  BackendConfig c;
  c.model = "m";
  c.layers = 7;
  c.patch_grid = {4, 6};
  c.seed = 99;
  const auto back = backend_config_from_json(backend_config_to_json(c));
  EXPECT_EQ(back.fingerprint(), c.fingerprint());
  EXPECT_EQ(back.max_context, c.max_context);
}

TEST(SerializedBackend, Forwards) {
  ToyBackend inner;
  SerializedBackend be(inner);
  EXPECT_EQ(be.fingerprint(), inner.fingerprint());
  const auto r = visual_request(inner, {0});
  EXPECT_EQ(be.generate(r).text(), inner.generate(r).text());
}

// --- planted --------------------------------------------------------------------

TEST(PlantedBackend, PlantedLayerConcentratesOnObject) {
  auto be = make_planted_backend();
  const PlantedObject obj{1, 2, 3};
  const auto visual = be.encode_image(planted_image({obj}, 5));
  GenerationRequest r;
  r.context.push_back(ContextSegment::visual(visual));
  r.instruction = default_templates().keyword_generation;
  r.capture_layers = {0, 1, 2, 3};
  const auto t = be.generate(r);
  const auto stack = extract_cross_attention(t.attention, filter_keyword_tokens(t.tokens), t.segments.front());
  stack.validate();
  const int planted[] = {2};
  const auto imp = importance_scores(stack.select_layers(planted));
  const auto top = top_k_ascending(imp.values(), 12);
  const auto mask = planted_mask({obj});
  EXPECT_DOUBLE_EQ(patch_mask_overlap(top, mask), 1.0);
}

TEST(PlantedBackend, SizeReplyCountsObjectPatches) {
  auto be = make_planted_backend();
  GenerationRequest r;
  r.context.push_back(ContextSegment::visual(be.encode_image(planted_image({{0, 0, 0}}, 1))));
  r.instruction = default_templates().size_estimation;
  EXPECT_EQ(be.generate(r).text(), "19");  // 12 of 64 patches
}

TEST(PlantedBackend, ImageHasExpectedSignature) {
  const auto img = planted_image({{3, 4, 4}}, 2);
  EXPECT_GT(img.at(5, 5, 6) + img.at(5, 5, 7), 1.0f);
  EXPECT_LT(std::abs(img.at(0, 0, 6)), 0.2f);
  EXPECT_EQ(planted_mask({{3, 4, 4}}).count(), 12u);
}

}  // namespace
}  // namespace ego
