// Copyright 2026 The ego Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "ego/attention.hpp"
#include "test_support.hpp"

namespace ego {
namespace {

using testing::importance_oracle;
using testing::random_stack;
using testing::top_k_oracle;

DenseMatrix<double> logits_of(const std::vector<std::vector<double>>& rows) {
  DenseMatrix<double> m(rows.size(), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < rows[i].size(); ++j) m(i, j) = rows[i][j];
  }
  return m;
}

TEST(Softmax, EqualLogitsAreUniform) {
  const auto a = masked_softmax(logits_of({{0, 0, 0, 0}}), false);
  for (std::size_t j = 0; j < 4; ++j) EXPECT_FLOAT_EQ(a(0, j), 0.25f);
}

TEST(Softmax, LogThreeGivesQuarterAndThreeQuarters) {
  TokenMatrix q(1, 1, {1.0f});
  TokenMatrix k(2, 1, {0.0f, static_cast<float>(std::log(3.0))});
  const auto a = scaled_dot_attention(q, k, 1, false);
  EXPECT_NEAR(a(0, 0), 0.25, 1e-7);
  EXPECT_NEAR(a(0, 1), 0.75, 1e-7);
}

TEST(Softmax, CausalFirstRowSeesOnlyItself) {
  const auto a = masked_softmax(logits_of({{1, 2, 3}, {4, 5, 6}, {7, 8, 9}}), true);
  EXPECT_FLOAT_EQ(a(0, 0), 1.0f);
  EXPECT_EQ(a(0, 1), 0.0f);
  EXPECT_EQ(a(0, 2), 0.0f);
  EXPECT_EQ(a(1, 2), 0.0f);
}

TEST(Softmax, SingleQueryRowSeesAllKeysUnderCausalMask) {
  const auto a = masked_softmax(logits_of({{0, 0, 0}}), true);
  for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(a(0, j), 1.0 / 3.0, 1e-7);
}

TEST(Softmax, RandomRowsSumToOneAndMatchOracle) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 4.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::vector<double>> rows(1 + trial % 5, std::vector<double>(1 + trial % 9));
    for (auto& r : rows) {
      for (auto& v : r) v = n(rng);
    }
    const auto got = masked_softmax(logits_of(rows), false);
    const auto want = testing::softmax_oracle(rows);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      double sum = 0.0;
      for (std::size_t j = 0; j < rows[i].size(); ++j) {
        EXPECT_NEAR(got(i, j), want[i][j], 1e-6);
        sum += got(i, j);
      }
      EXPECT_NEAR(sum, 1.0, 1e-6);
    }
  }
}

TEST(Softmax, ShiftInvariant) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 3.0);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::vector<double>> rows(4, std::vector<double>(6));
    for (auto& r : rows) {
      for (auto& v : r) v = n(rng);
    }
    auto shifted = rows;
    for (auto& r : shifted) {
      const double c = n(rng) * 10.0;
      for (auto& v : r) v += c;
    }
    const auto a = masked_softmax(logits_of(rows), true);
    const auto b = masked_softmax(logits_of(shifted), true);
    for (std::size_t i = 0; i < 4; ++i) {
      for (std::size_t j = 0; j < 6; ++j) EXPECT_NEAR(a(i, j), b(i, j), 1e-6);
    }
  }
}

TEST(Softmax, LargeLogitsStayFinite) {
  const auto a = masked_softmax(logits_of({{1000.0, 999.0, -1000.0}}), false);
  EXPECT_TRUE(std::isfinite(a(0, 0)));
  EXPECT_NEAR(a(0, 0) + a(0, 1) + a(0, 2), 1.0, 1e-6);
}

TEST(ScaledDot, Errors) {
  TokenMatrix q(1, 2), k(3, 3);
  EXPECT_THROW(
      {
        try {
          scaled_dot_attention(q, k, 2, false);
        } catch (const Error& e) {
          EXPECT_EQ(e.code(), ErrorCode::kContractViolation);
          throw;
        }
      },
      Error);
  TokenMatrix k2(3, 2);
  try {
    scaled_dot_attention(q, k2, 0, false);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInvalidArgument);
  }
}

// --- keyword filtering ---------------------------------------------------

std::vector<DecodedToken> tokens(const std::vector<std::string>& texts, std::size_t start = 100) {
  std::vector<DecodedToken> out;
  for (std::size_t i = 0; i < texts.size(); ++i) out.push_back({start + i, texts[i]});
  return out;
}

TEST(KeywordFilter, DropsPunctuationKeepsSubwords) {
  const auto span = filter_keyword_tokens(tokens({"blue", ",", " wheels", ",", " zig", "zag"}));
  EXPECT_EQ(span.token_positions, (std::vector<std::size_t>{100, 102, 104, 105}));
  EXPECT_EQ(span.decoded_words, (std::vector<std::string>{"blue", " wheels", " zig", "zag"}));
}

TEST(KeywordFilter, AllPunctuationIsEmpty) {
  try {
    filter_keyword_tokens(tokens({",", ".", ":"}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptyKeywords);
  }
}

TEST(KeywordFilter, WhitespaceAndUnicodePunctuation) {
  const auto span = filter_keyword_tokens(tokens({" ", "\n", "\xE2\x80\x94", "\xE3\x80\x82", ", ", "caf\xC3\xA9", "...!"}));
  EXPECT_EQ(span.decoded_words, (std::vector<std::string>{"caf\xC3\xA9"}));
}

TEST(KeywordFilter, TokenWithLetterAndPunctuationIsKept) {
  const auto span = filter_keyword_tokens(tokens({"eyes.", "(", "x"}));
  EXPECT_EQ(span.size(), 2u);
}

// --- cross-attention slices -----------------------------------------------

CapturedAttention fake_capture(std::size_t prompt, std::size_t steps, std::size_t heads, std::vector<int> layers) {
  CapturedAttention c;
  c.heads = heads;
  for (std::size_t k = 0; k < steps; ++k) c.step_positions.push_back(prompt + k);
  for (int l : layers) {
    CapturedLayer cl;
    cl.layer = l;
    cl.rows.resize(heads);
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t k = 0; k < steps; ++k) {
        std::vector<float> row(prompt + k + 1);
        for (std::size_t j = 0; j < row.size(); ++j) row[j] = float(l * 1000 + h * 100 + k) + float(j) * 1e-3f;
        cl.rows[h].push_back(row);
      }
    }
    c.layers.push_back(cl);
  }
  return c;
}

TEST(CrossAttention, ShapeAndContents) {
  const auto cap = fake_capture(70, 4, 2, {1, 3});
  KeywordSpan kw{{71, 73}, {"a", "b"}};
  const auto s = extract_cross_attention(cap, kw, {0, 64});
  EXPECT_EQ(s.layer_count(), 2u);
  EXPECT_EQ(s.keyword_count(), 2u);
  EXPECT_EQ(s.visual_count(), 64u);
  EXPECT_EQ(s.layers(), (std::vector<int>{1, 3}));
  // layer slot 1 is layer 3, head 1, keyword row 1 is step 3
  EXPECT_FLOAT_EQ(s.at(1, 1, 1, 5), 3000.0f + 100.0f + 3.0f + 5e-3f);
}

TEST(CrossAttention, OffsetVisualRange) {
  const auto cap = fake_capture(40, 2, 1, {0});
  KeywordSpan kw{{41}, {"a"}};
  const auto s = extract_cross_attention(cap, kw, {10, 20});
  EXPECT_FLOAT_EQ(s.at(0, 0, 0, 0), 1.0f + 10e-3f);
}

TEST(CrossAttention, MissingRowAndEmptySpan) {
  const auto cap = fake_capture(70, 2, 1, {0});
  try {
    extract_cross_attention(cap, KeywordSpan{{75}, {"x"}}, {0, 64});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kMissingCapture);
  }
  try {
    extract_cross_attention(cap, KeywordSpan{}, {0, 64});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kMissingCapture);
  }
}

TEST(CrossAttention, SelectLayersMissingLayer) {
  const auto s = extract_cross_attention(fake_capture(10, 1, 1, {0, 2}), KeywordSpan{{10}, {"a"}}, {0, 4});
  const int want[] = {2};
  EXPECT_EQ(s.select_layers(want).layers(), std::vector<int>{2});
  const int missing[] = {1};
  try {
    s.select_layers(missing);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kMissingCapture);
  }
}

// --- importance -------------------------------------------------------------

TEST(Importance, HandAverage) {
  AttentionStack s({0}, 1, 2, 3);
  const float r0[] = {0.5f, 0.3f, 0.2f};
  const float r1[] = {0.1f, 0.7f, 0.2f};
  std::copy(std::begin(r0), std::end(r0), s.row(0, 0, 0).begin());
  std::copy(std::begin(r1), std::end(r1), s.row(0, 0, 1).begin());
  const auto i = importance_scores(s);
  EXPECT_NEAR(i[0], 0.3, 1e-7);
  EXPECT_NEAR(i[1], 0.5, 1e-7);
  EXPECT_NEAR(i[2], 0.2, 1e-7);
}

TEST(Importance, UniformAttention) {
  AttentionStack s({0, 1}, 3, 4, 16);
  for (std::size_t l = 0; l < 2; ++l)
    for (std::size_t h = 0; h < 3; ++h)
      for (std::size_t n = 0; n < 4; ++n)
        for (auto& v : s.row(l, h, n)) v = 1.0f / 16.0f;
  const auto imp = importance_scores(s);
  for (float v : imp.values()) EXPECT_FLOAT_EQ(v, 1.0f / 16.0f);
}

TEST(Importance, DoubledLayerGivesOneAndAHalf) {
  std::mt19937_64 rng(9);
  const auto one = random_stack(rng, 1, 2, 3, 20);
  AttentionStack two({0, 1}, 2, 3, 20);
  for (std::size_t h = 0; h < 2; ++h)
    for (std::size_t n = 0; n < 3; ++n)
      for (std::size_t j = 0; j < 20; ++j) {
        two.at(0, h, n, j) = one.at(0, h, n, j);
        two.at(1, h, n, j) = one.at(0, h, n, j) * 0.5f;  // keep rows <= 1
      }
  // layer 0 = 2 x layer 1, so the mean is 1.5 x layer 1
  const auto a = importance_scores(two);
  const auto base = importance_oracle(two.select_layers(std::vector<int>{1}));
  for (std::size_t j = 0; j < 20; ++j) EXPECT_NEAR(a[j], 1.5 * base[j], 1e-6);
}

TEST(Importance, MatchesLoopOracle) {
  std::mt19937_64 rng(11);
  for (int t = 0; t < 60; ++t) {
    const auto s = random_stack(rng, 1 + rng() % 6, 1 + rng() % 4, 1 + rng() % 8, 1 + rng() % 128);
    const auto got = importance_scores(s);
    const auto want = importance_oracle(s);
    for (std::size_t j = 0; j < want.size(); ++j) ASSERT_NEAR(got[j], want[j], 1e-6);
  }
}

TEST(Importance, MaxReduction) {
  AttentionStack s({0, 1}, 1, 1, 2);
  s.at(0, 0, 0, 0) = 0.2f;
  s.at(0, 0, 0, 1) = 0.6f;
  s.at(1, 0, 0, 0) = 0.4f;
  s.at(1, 0, 0, 1) = 0.1f;
  const auto i = importance_scores(s, LayerHeadReduction::kMax);
  EXPECT_FLOAT_EQ(i[0], 0.4f);
  EXPECT_FLOAT_EQ(i[1], 0.6f);
}

TEST(Importance, EmptyStackRejected) {
  try {
    importance_scores(AttentionStack{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInvalidArgument);
  }
}

TEST(Importance, NegativeScoreRejected) {
  EXPECT_THROW(ImportanceVector({0.1f, -0.1f}), Error);
}

// --- selection ---------------------------------------------------------------

TEST(Selection, SpecExamples) {
  std::vector<float> a{0.1f, 0.9f, 0.4f, 0.8f};
  EXPECT_EQ(top_k_ascending(std::span<const float>(a), 2), (std::vector<std::size_t>{1, 3}));
  std::vector<float> b{0.8f, 0.1f, 0.9f};
  EXPECT_EQ(top_k_ascending(std::span<const float>(b), 2), (std::vector<std::size_t>{0, 2}));
  std::vector<float> c{0.5f, 0.5f, 0.2f};
  EXPECT_EQ(top_k_ascending(std::span<const float>(c), 1), (std::vector<std::size_t>{0}));
}

TEST(Selection, KZeroRejectedAndKLargeKeepsAll) {
  std::vector<float> a{0.3f, 0.1f};
  EXPECT_THROW(top_k_ascending(std::span<const float>(a), 0), Error);
  EXPECT_EQ(top_k_ascending(std::span<const float>(a), 9), (std::vector<std::size_t>{0, 1}));
}

TEST(Selection, MatchesSortOracleWithTies) {
  std::mt19937_64 rng(13);
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 1 + rng() % 100;
    std::vector<float> s(n);
    for (auto& v : s) v = static_cast<float>(rng() % 7) / 7.0f;  // many ties
    const std::size_t k = 1 + rng() % (n + 3);
    const auto got = top_k_ascending(std::span<const float>(s), k);
    ASSERT_EQ(got, top_k_oracle(s, k));
    ASSERT_TRUE(std::adjacent_find(got.begin(), got.end(), std::greater_equal<>()) == got.end());
  }
}

TEST(Selection, GathersRowsInOrder) {
  TokenMatrix src(4, 2, {0, 0, 1, 1, 2, 2, 3, 3});
  const auto r = select_top_tokens(src, ImportanceVector({0.9f, 0.1f, 0.2f, 0.95f}), 2);
  EXPECT_EQ(r.indices, (std::vector<std::size_t>{0, 3}));
  EXPECT_EQ(r.tokens.row(1)[0], 3.0f);
}

TEST(Selection, UniformBaseline) {
  EXPECT_EQ(uniform_indices(64, 12),
            (std::vector<std::size_t>{0, 5, 10, 16, 21, 26, 32, 37, 42, 48, 53, 58}));
  EXPECT_EQ(uniform_indices(3, 5), (std::vector<std::size_t>{0, 1, 2}));
}

}  // namespace
}  // namespace ego
