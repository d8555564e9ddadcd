// Copyright 2026 The ego Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <random>

#include "ego/eval.hpp"
#include "ego/synthetic.hpp"
#include "test_support.hpp"

namespace ego {
namespace {

using testing::TempDir;

// --- metrics --------------------------------------------------------------------

TEST(Metrics, ThreeQuartersCase) {
  ConfusionCounts c{3, 1, 1, 0};
  EXPECT_EQ(precision(c), 0.75);
  EXPECT_EQ(recall(c), 0.75);
  EXPECT_EQ(f1_score(precision(c), recall(c)), 0.75);
}

TEST(Metrics, F1OfAveragesIsNotAverageOfF1) {
  const auto m = aggregate({{"A", {3, 1, 1, 0}}, {"B", {1, 0, 3, 0}}});
  EXPECT_DOUBLE_EQ(m.avg_precision, 0.875);
  EXPECT_DOUBLE_EQ(m.avg_recall, 0.5);
  EXPECT_NEAR(m.f1, 7.0 / 11.0, 1e-15);
  double avg_f1 = 0.0;
  for (const auto& c : m.per_concept) avg_f1 += c.f1;
  avg_f1 /= 2.0;
  EXPECT_NEAR(avg_f1, 0.575, 1e-15);
  EXPECT_NE(m.f1, avg_f1);
}

TEST(Metrics, ZeroDenominators) {
  ConfusionCounts none;
  EXPECT_EQ(precision(none), 0.0);
  EXPECT_EQ(recall(none), 0.0);
  EXPECT_EQ(f1_score(0.0, 0.0), 0.0);
  EXPECT_EQ(aggregate({}).f1, 0.0);
}

TEST(Metrics, CountsAdd) {
  ConfusionCounts c;
  c.add(true, true);
  c.add(true, false);
  c.add(false, true);
  c.add(false, false);
  EXPECT_EQ(c, (ConfusionCounts{1, 1, 1, 1}));
  c += c;
  EXPECT_EQ(c.tn, 2u);
}

// --- text matching -------------------------------------------------------------------

TEST(Captions, Mentions) {
  EXPECT_TRUE(caption_mentions("a photo of my-mug on a desk", "my-mug"));
  EXPECT_TRUE(caption_mentions("My-Mug!", "my-mug"));
  EXPECT_TRUE(caption_mentions("Look,   BO  the dog", "bo the dog"));
  EXPECT_FALSE(caption_mentions("a photo of a mug", "my-mug"));
  EXPECT_FALSE(caption_mentions("anything", "!!"));
  EXPECT_EQ(normalize_text("  Hello,   World! "), "hello world");
}

TEST(Choices, LetterAndText) {
  const std::map<std::string, std::string> ch{{"A", "the red mug"}, {"B", "the blue pen"}};
  EXPECT_EQ(match_choice("A. The red mug", "A", ch), ChoiceMatch::kCorrect);
  EXPECT_EQ(match_choice("A", "B", ch), ChoiceMatch::kIncorrect);
  EXPECT_EQ(match_choice("(b)", "B", ch), ChoiceMatch::kCorrect);
  EXPECT_EQ(match_choice("It is the blue pen.", "B", ch), ChoiceMatch::kCorrect);
  EXPECT_EQ(match_choice("A. the blue pen", "A", ch), ChoiceMatch::kAmbiguous);
  EXPECT_EQ(match_choice("the red mug or the blue pen", "A", ch), ChoiceMatch::kAmbiguous);
  EXPECT_EQ(match_choice("Another answer", "A", ch), ChoiceMatch::kIncorrect);
  EXPECT_EQ(match_choice("", "A", ch), ChoiceMatch::kIncorrect);
}

// --- manifests ----------------------------------------------------------------------------

TEST(Manifest, RejectsReferenceReuseAndUnknownConcepts) {
  const nlohmann::json base = {{"concepts", {{{"name", "mug"}, {"views", {{"1", {"ref.egoi"}}}}}}}};
  auto j = base;
  j["recognition"] = {{{"media", {"ref.egoi"}}, {"concepts", {"mug"}}}};
  EXPECT_THROW(dataset_manifest_from_json(j, "."), Error);
  j = base;
  j["recognition"] = {{{"media", {"q.egoi"}}, {"concepts", {"cup"}}}};
  EXPECT_THROW(dataset_manifest_from_json(j, "."), Error);
  j = base;
  j["vqa"] = {{{"media", {"q.egoi"}}, {"concepts", {"mug"}}}};
  EXPECT_THROW(dataset_manifest_from_json(j, "."), Error);
  j = base;
  j["version"] = 2;
  EXPECT_THROW(dataset_manifest_from_json(j, "."), Error);
  j = base;
  j["recognition"] = {{{"media", {"q.egoi"}}, {"concepts", {"mug"}}}};
  const auto m = dataset_manifest_from_json(j, "/data");
  EXPECT_EQ(m.recognition[0].id, "recognition0");
  EXPECT_EQ(m.base, "/data");
}

TEST(Manifest, ErrorsAreManifestErrors) {
  TempDir dir;
  try {
    load_dataset_manifest(dir / "nope.json");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kManifest);
  }
  detail::write_file_text(dir / "bad.json", R"({"concepts": 3})");
  try {
    load_dataset_manifest(dir / "bad.json");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kManifest);
  }
}

// --- evaluation over the planted suite ---------------------------------------------

struct PlantedRun {
  TempDir dir;
  ScriptedBackend backend = make_planted_backend();
  DatasetManifest manifest;

  PlantedRun() {
    write_planted_suite(make_planted_suite({}), dir.path());
    manifest = load_dataset_manifest(dir / "dataset.json");
  }

  EvalOptions options() const {
    EvalOptions o;
    o.layers = {kPlantedLayer};
    return o;
  }
};

TEST(Evaluate, PlantedSuiteIsPerfect) {
  PlantedRun run;
  const auto r = run_evaluation(run.manifest, run.backend, run.options());
  ASSERT_TRUE(r.recognition);
  EXPECT_EQ(r.recognition->f1, 1.0);
  EXPECT_EQ(r.multi->f1, 1.0);
  EXPECT_EQ(*r.vqa_accuracy, 1.0);
  EXPECT_EQ(*r.captioning_recall, 1.0);
  EXPECT_EQ(r.flagged_parses, 0u);
  EXPECT_EQ(r.items_evaluated, r.items_total);
  EXPECT_EQ(r.concepts, 4u);
  for (const auto& c : r.recognition->per_concept) {
    EXPECT_EQ(c.counts.tp, 2u);
    EXPECT_EQ(c.counts.fn, 0u);
    EXPECT_EQ(c.counts.fp, 0u);
  }
}

TEST(Evaluate, OrderAndThreadsDoNotMatter) {
  PlantedRun run;
  const auto want = report_to_json(run_evaluation(run.manifest, run.backend, run.options())).dump();
  auto shuffled = run.manifest;
  std::mt19937_64 rng(8);
  std::shuffle(shuffled.recognition.begin(), shuffled.recognition.end(), rng);
  std::shuffle(shuffled.multi.begin(), shuffled.multi.end(), rng);
  std::shuffle(shuffled.vqa.begin(), shuffled.vqa.end(), rng);
  EXPECT_EQ(report_to_json(run_evaluation(shuffled, run.backend, run.options())).dump(), want);
  auto opt = run.options();
  opt.jobs = 4;
  EXPECT_EQ(report_to_json(run_evaluation(run.manifest, run.backend, opt)).dump(), want);
  EXPECT_EQ(report_table(run_evaluation(run.manifest, run.backend, opt)),
            report_table(run_evaluation(run.manifest, run.backend, run.options())));
}

TEST(Evaluate, NoisyLayerIsWorse) {
  PlantedRun run;
  auto opt = run.options();
  opt.layers = {0};
  const auto r = run_evaluation(run.manifest, run.backend, opt);
  EXPECT_LT(r.recognition->f1, 1.0);
}

TEST(Evaluate, TaskSelection) {
  PlantedRun run;
  auto opt = run.options();
  opt.tasks = {TaskKind::kCaptioning};
  const auto r = run_evaluation(run.manifest, run.backend, opt);
  EXPECT_FALSE(r.recognition);
  EXPECT_FALSE(r.multi);
  EXPECT_FALSE(r.vqa_accuracy);
  EXPECT_TRUE(r.captioning_recall);
  const auto table = report_table(r);
  EXPECT_NE(table.find("captioning"), std::string::npos);
  EXPECT_EQ(table.find("recognition"), std::string::npos);
}

TEST(Evaluate, MissingMediaIsItemizedAndRunContinues) {
  PlantedRun run;
  std::filesystem::remove(run.dir / "mug_query0.egoi");
  const auto r = run_evaluation(run.manifest, run.backend, run.options());
  ASSERT_EQ(r.load_errors.size(), 1u);
  EXPECT_NE(r.load_errors[0].find("mug_q0"), std::string::npos);
  EXPECT_EQ(r.items_evaluated + 1, r.items_total);
  EXPECT_EQ(r.recognition->f1, 1.0);
}

TEST(Evaluate, MissingSplitIsManifestError) {
  PlantedRun run;
  auto opt = run.options();
  opt.split = "9";
  try {
    run_evaluation(run.manifest, run.backend, opt);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kManifest);
  }
}

TEST(Evaluate, FiveViewSplit) {
  PlantedRun run;
  auto opt = run.options();
  opt.split = "5";
  ConceptLibrary lib;
  enroll_manifest_concepts(run.manifest, run.backend, lib, opt);
  EXPECT_EQ(lib.concepts()[0].tokens.rows(), 5u * 12u);
  EXPECT_EQ(evaluate(run.manifest, run.backend, lib, opt).recognition->f1, 1.0);
}

// Scripted fixture: the query's first patch carries a marker in dim 15 that
// decides the reply.
struct MarkerFixture {
  TempDir dir;
  std::function<std::string(const std::string& offered, int marker)> recognize;
  std::string vqa_reply = "A";
  std::unique_ptr<ScriptedBackend> backend;
  nlohmann::json manifest = {{"concepts", nlohmann::json::array()}};

  MarkerFixture() {
    auto reply = [this](const GenerationRequest& req) {
      const auto ctx = detail::read_planted_context(req);
      const int marker = static_cast<int>(std::lround(ctx.query.row(0)[15]));
      std::string out;
      for (const auto& [name, mem] : ctx.concepts) out += recognize(name, marker) + "\n";
      return out;
    };
    backend = std::make_unique<ScriptedBackend>(
        planted_backend_config(),
        std::vector<ScriptRule>{{"estimate the percentage", std::string("20")},
                                {"important words", std::string("red")},
                                {"check the presence", ReplyFn(reply)},
                                {"Answer the following", ReplyFn([this](const GenerationRequest&) { return vqa_reply; })},
                                {"Generate a detailed caption", std::string("a photo of A")}},
        uniform_attention, planted_encode);
  }

  std::string image(const std::string& file, int marker) {
    auto img = make_image(8, 8, 16);
    img.at(0, 0, 15) = static_cast<float>(marker);
    save_image(img, dir / file);
    return file;
  }

  void concept_named(const std::string& name) {
    manifest["concepts"].push_back({{"name", name}, {"views", {{"1", nlohmann::json::array({image(name + "_ref.egoi", 0)})}}}});
  }

  EvalReport run(EvalOptions opt = {}) {
    opt.layers = {0};
    return run_evaluation(dataset_manifest_from_json(manifest, dir.path()), *backend, opt);
  }
};

TEST(Evaluate, PerfectRepliesOnTwoByTwo) {
  MarkerFixture f;
  f.concept_named("A");
  f.concept_named("B");
  f.recognize = [](const std::string& name, int marker) {
    return name + ((name == "A") == (marker == 1) ? ": yes" : ": no");
  };
  f.manifest["recognition"] = nlohmann::json::array();
  for (int i = 0; i < 2; ++i) {
    f.manifest["recognition"].push_back(
        {{"media", {f.image("a" + std::to_string(i) + ".egoi", 1)}}, {"concepts", nlohmann::json::array({"A"})}});
    f.manifest["recognition"].push_back(
        {{"media", {f.image("b" + std::to_string(i) + ".egoi", 2)}}, {"concepts", nlohmann::json::array({"B"})}});
  }
  const auto r = f.run();
  for (const auto& c : r.recognition->per_concept) EXPECT_EQ(c.counts, (ConfusionCounts{2, 0, 0, 2}));

  f.recognize = [](const std::string& name, int) { return name + ": yes"; };
  const auto always = f.run();
  EXPECT_EQ(always.recognition->avg_recall, 1.0);
  EXPECT_EQ(always.recognition->avg_precision, 0.5);
}

TEST(Evaluate, MultiConceptRule) {
  MarkerFixture f;
  f.concept_named("A");
  f.concept_named("B");
  // marker 1: both yes; marker 2: only A
  f.recognize = [](const std::string& name, int marker) {
    return name + (marker == 1 || name == "A" ? ": yes" : ": no");
  };
  auto item = [&](const std::string& file, int marker, bool present) {
    return nlohmann::json{{"media", {f.image(file, marker)}}, {"pair", {"A", "B"}}, {"present", present}};
  };
  f.manifest["multi"] = {item("tp.egoi", 1, true), item("fn.egoi", 2, true), item("fp.egoi", 1, false),
                         item("tn.egoi", 2, false)};
  const auto r = f.run();
  ASSERT_TRUE(r.multi);
  ASSERT_EQ(r.multi->per_concept.size(), 1u);
  EXPECT_EQ(r.multi->per_concept[0].name, "A+B");
  EXPECT_EQ(r.multi->per_concept[0].counts, (ConfusionCounts{1, 1, 1, 1}));
  EvalOptions no_multi;
  no_multi.multi = false;
  EXPECT_FALSE(f.run(no_multi).multi);
}

TEST(Evaluate, FlaggedParsesAreCountedAsNo) {
  MarkerFixture f;
  f.concept_named("A");
  f.recognize = [](const std::string&, int) { return std::string("maybe"); };
  f.manifest["recognition"] = {{{"media", {f.image("q.egoi", 1)}}, {"concepts", nlohmann::json::array({"A"})}}};
  const auto r = f.run();
  EXPECT_EQ(r.flagged_parses, 1u);
  EXPECT_EQ(r.recognition->per_concept[0].counts.fn, 1u);
}

TEST(Evaluate, VqaChoicesJudgeAndNeedsJudge) {
  MarkerFixture f;
  f.concept_named("A");
  f.manifest["vqa"] = {
      {{"media", {f.image("v1.egoi", 1)}}, {"concepts", {"A"}}, {"question", "Which? A) x B) y"}, {"answer", "A"},
       {"choices", {{"A", "x"}, {"B", "y"}}}},
      {{"media", {f.image("v2.egoi", 1)}}, {"concepts", {"A"}}, {"question", "Which? A) x B) y"}, {"answer", "B"},
       {"choices", {{"A", "x"}, {"B", "y"}}}},
      {{"media", {f.image("v3.egoi", 1)}}, {"concepts", {"A"}}, {"question", "What color is A?"}, {"answer", "red"}}};
  auto r = f.run();
  EXPECT_EQ(r.vqa_scored, 2u);
  EXPECT_EQ(r.vqa_needs_judge, 1u);
  EXPECT_EQ(*r.vqa_accuracy, 0.5);

  std::string seen;
  ScriptedJudge judge([&](const std::string& prompt) {
    seen = prompt;
    return std::string("Yes");
  });
  EvalOptions opt;
  opt.judge = &judge;
  r = f.run(opt);
  EXPECT_EQ(r.vqa_scored, 3u);
  EXPECT_EQ(r.vqa_needs_judge, 0u);
  EXPECT_NEAR(*r.vqa_accuracy, 2.0 / 3.0, 1e-12);
  EXPECT_NE(seen.find("Correct Answer: red\nPredicted Answer: A"), std::string::npos);
}

TEST(Evaluate, CaptionRecallOverGroups) {
  MarkerFixture f;
  f.concept_named("A");
  f.concept_named("B");
  f.manifest["captioning"] = {{{"media", {f.image("c1.egoi", 1)}}, {"concepts", {"A"}}},
                              {{"media", {f.image("c2.egoi", 1)}}, {"concepts", {"B"}}},
                              {{"media", {f.image("c3.egoi", 1)}}, {"concepts", {"A", "B"}}}};
  const auto r = f.run();
  // groups: A hit, B miss, A+B miss (only A mentioned)
  EXPECT_NEAR(*r.captioning_recall, 1.0 / 3.0, 1e-12);
}

TEST(Report, JsonAndTableShape) {
  EvalReport r;
  r.split = "1";
  r.recognition = aggregate({{"A", {3, 1, 1, 0}}, {"B", {1, 0, 3, 0}}});
  r.items_total = 3;
  r.items_evaluated = 3;
  const auto j = report_to_json(r);
  EXPECT_NEAR(j.at("recognition").at("f1").get<double>(), 7.0 / 11.0, 1e-12);
  EXPECT_FALSE(j.contains("vqa"));
  const auto table = report_table(r);
  EXPECT_NE(table.find("0.875"), std::string::npos);
  EXPECT_NE(table.find("0.636"), std::string::npos);
}

}  // namespace
}  // namespace ego
